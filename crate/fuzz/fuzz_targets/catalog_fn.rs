#![no_main]

use libfuzzer_sys::fuzz_target;
use mfc_core::model::FnSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = FnSpec::parse_json(data) {
        for x in [-3.0, 0.0, 0.5, 7.0] {
            let _ = f.eval3(x);
        }
    }
});
