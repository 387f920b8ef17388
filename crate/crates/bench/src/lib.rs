//! Fixtures shared by the benchmarks.

use fedsim_core::harness::Scenario;
use fedsim_core::{IntraTx, Keypair};

/// Signed domain transactions with `payload` bytes each.
pub fn intra_txs(n: usize, payload: usize) -> Vec<IntraTx> {
    let key = Keypair::from_seed(b"bench");
    (0..n)
        .map(|i| IntraTx::new(&key, 1, vec![i as u8; payload], i as u64).expect("payload fits"))
        .collect()
}

/// Two domains, saturated domain load and a handful of sessions.
pub fn busy_scenario(duration_ms: u64) -> Scenario {
    Scenario::from_toml(&format!(
        r#"
seed = 1
duration_ms = {duration_ms}

[[domains]]
zone_id = 1

[[domains]]
zone_id = 2

[[workload]]
sessions = 4
intra_rate = 800.0
inter_rate = 50.0
"#
    ))
    .expect("bench scenario is valid")
}
