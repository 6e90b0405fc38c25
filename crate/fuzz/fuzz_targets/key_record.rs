#![no_main]

use libfuzzer_sys::fuzz_target;
use secure_consensus::paillier::{Ciphertext, KeyPair};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(key) = KeyPair::from_json(text) {
        if key.public.modulus().bits() <= 512 {
            let c = Ciphertext::from_parts(2u32.into(), 0);
            let _ = key.decrypt(&c);
        }
    }
});
