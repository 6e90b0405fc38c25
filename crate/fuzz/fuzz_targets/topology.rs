#![no_main]

use libfuzzer_sys::fuzz_target;
use secure_consensus::graph::Topology;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(topology) = Topology::from_toml_str(text) {
        let again = Topology::from_toml_str(&topology.to_toml_string()).expect("round trip");
        assert_eq!(again.edges(), topology.edges());
        if topology.n_agents() <= 64 {
            let _ = topology.base_laplacian().eigenvalues();
        }
    }
});
