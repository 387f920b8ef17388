//! Statistical checks of virtual-time mining through the full simulator.

use fedsim_core::harness::{parse_log, run, Scenario};
use fedsim_core::protocol::Event;

const BLOCKS: usize = 10_000;
const MEAN_MS: f64 = 4_500.0;
const MINERS: usize = 6;

/// `(at, node)` of the first `BLOCKS` mined blocks.
fn mined() -> Vec<(u64, usize)> {
    let s = Scenario::from_toml(&format!(
        r#"
seed = 2024
duration_ms = {}
privacy_scan = false

[inter]
miners = {MINERS}
"#,
        (BLOCKS as f64 * MEAN_MS * 1.2) as u64
    ))
    .unwrap();
    let out = run(&s).unwrap();
    let mut v: Vec<_> = parse_log(&out.log)
        .unwrap()
        .into_iter()
        .filter(|l| matches!(l.event, Event::InterMined { .. }))
        .map(|l| (l.at, l.node))
        .collect();
    assert!(v.len() >= BLOCKS, "only {} blocks", v.len());
    v.truncate(BLOCKS);
    v
}

#[test]
fn equal_miners_win_equal_shares_and_intervals_are_exponential() {
    let blocks = mined();

    let mut wins = [0u64; MINERS];
    for (_, node) in &blocks {
        wins[*node] += 1;
    }
    let p = 1.0 / MINERS as f64;
    let n = BLOCKS as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    for (i, w) in wins.iter().enumerate() {
        let dev = (*w as f64 - n * p).abs();
        assert!(dev <= 3.0 * sigma, "miner {i} won {w} of {BLOCKS} (3 sigma = {:.1})", 3.0 * sigma);
    }

    // One-sample Kolmogorov-Smirnov against Exp(mean 4.5 s), alpha = 0.01.
    let mut gaps: Vec<f64> = blocks.windows(2).map(|w| (w[1].0 - w[0].0) as f64).collect();
    // The first block's delay is measured from time zero.
    gaps.push(blocks[0].0 as f64);
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len() as f64;
    let cdf = |x: f64| 1.0 - (-x / MEAN_MS).exp();
    let d = gaps
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / m.sqrt();
    assert!(d < critical, "KS statistic {d:.5} exceeds {critical:.5}");

    let mean = gaps.iter().sum::<f64>() / m;
    assert!((mean - MEAN_MS).abs() < 4.0 * MEAN_MS / m.sqrt(), "mean interval {mean:.1} ms");
}
