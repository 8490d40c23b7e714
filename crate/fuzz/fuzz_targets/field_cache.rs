#![no_main]

use libfuzzer_sys::fuzz_target;
use mfc_core::fields::{decode_field, encode_field};

fuzz_target!(|data: &[u8]| {
    // anything that decodes must survive a round trip unchanged
    if let Ok(field) = decode_field(data) {
        let again = decode_field(&encode_field(&field)).expect("re-encoded field decodes");
        assert_eq!(encode_field(&again), encode_field(&field));
    }
});
