#![no_main]

use libfuzzer_sys::fuzz_target;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use secure_consensus::paillier::{Ciphertext, KeyPair};
use std::sync::OnceLock;

fn key() -> &'static KeyPair {
    static KEY: OnceLock<KeyPair> = OnceLock::new();
    KEY.get_or_init(|| KeyPair::generate(128, &mut ChaCha20Rng::seed_from_u64(0)).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = Ciphertext::from_json(text) {
        let key = key();
        if key.public.check_ciphertext(&c).is_ok() {
            if let Ok(m) = key.decrypt(&c) {
                let _ = key.public.decode(&m);
            }
        }
    }
});
