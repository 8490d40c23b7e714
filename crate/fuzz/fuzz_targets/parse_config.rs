#![no_main]

use libfuzzer_sys::fuzz_target;
use mfc_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::from_json_slice(data) {
        let _ = (cfg.digest(), cfg.model(), cfg.pde_steps(), cfg.sde_steps());
    }
});
