#![no_main]

use libfuzzer_sys::fuzz_target;
use secure_consensus::harness::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ScenarioConfig::from_toml_str(text) {
        // keep validation cheap: the variation check samples weight draws
        if cfg.topology.agents <= 16 && cfg.topology.edges.len() <= 32 {
            let _ = cfg.validate();
        }
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string());
        assert!(again.is_ok());
    }
});
