use fedsim_core::harness::{run, verify, Scenario};

// Equivocating validators can leave honest ones locked on different
// blocks. Re-proposals carry their prevote quorum so the committee recovers.
#[test]
fn committee_recovers_from_split_locks() {
    let s = Scenario::from_toml(
        r#"
seed = 2
duration_ms = 60000
privacy_scan = false

[[domains]]
zone_id = 1
validators = 7
byzantine = 2

[[domains]]
zone_id = 2

[[workload]]
intra_clients = 10

[[faults]]
at_ms = 5000
kind = "equivocate"
target = "zone1.validator0"

[[faults]]
at_ms = 5000
kind = "equivocate"
target = "zone1.validator1"
"#,
    )
    .unwrap();
    let out = run(&s).unwrap();
    let r = &out.report;
    let zone1 = &r.intra[0];
    assert!(r.equivocated_messages > 0);
    assert!(zone1.late_rounds > 0, "no split lock exercised");
    assert!(zone1.block_count >= 20, "only {} blocks", zone1.block_count);
    assert_eq!(r.safety_violations, 0);
    assert!(verify(r, &out.log).unwrap().is_empty());
}
