#![allow(dead_code)]

use hazard_transform::events::{EventDataset, EventRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Product-limit estimate `Π(1 - d/Y)` written directly from the records:
/// returns `(time, survival)` at each distinct event time.
pub fn product_limit(ds: &EventDataset) -> Vec<(f64, f64)> {
    let mut event_times: Vec<f64> = ds
        .records()
        .iter()
        .filter(|r| r.event_code == 1)
        .map(|r| r.exit_time)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut s = 1.0;
    let mut out = Vec::new();
    for t in event_times {
        let at_risk = ds
            .records()
            .iter()
            .filter(|r| r.entry_time < t && t <= r.exit_time)
            .count() as f64;
        let deaths = ds
            .records()
            .iter()
            .filter(|r| r.event_code == 1 && r.exit_time == t)
            .count() as f64;
        s *= 1.0 - deaths / at_risk;
        out.push((t, s));
    }
    out
}

/// Right-continuous lookup in a list of `(time, value)` steps starting at 1.
pub fn step_lookup(steps: &[(f64, f64)], t: f64) -> f64 {
    match steps.partition_point(|p| p.0 <= t) {
        0 => 1.0,
        k => steps[k - 1].1,
    }
}

/// A randomly censored single-sample dataset with `n` subjects. Times are
/// rounded to two decimals so ties occur.
pub fn random_dataset(seed: u64, n: usize) -> EventDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let censor_rate: f64 = rng.random_range(0.0..1.5);
    let records = (0..n)
        .map(|i| {
            let event: f64 = -rng.random::<f64>().ln();
            let censor: f64 = -rng.random::<f64>().ln() / censor_rate.max(1e-9);
            let round = |x: f64| ((x * 100.0).round() / 100.0).max(0.01);
            let (exit, code) = if event <= censor { (round(event), 1) } else { (round(censor), 0) };
            EventRecord {
                subject_id: i.to_string(),
                entry_time: 0.0,
                exit_time: exit,
                event_code: code,
                group: None,
                covariates: Vec::new(),
            }
        })
        .collect();
    EventDataset::new(records, None).unwrap()
}
