//! Cumulative-hazard driver paths.
//!
//! Every estimator here returns a [`StepPath`] of cumulative increments plus
//! a [`DriverMeta`] carrying the sample-size constant that scales the
//! quadratic-variation term of the covariance recursion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventDataset, RiskIndex};
use crate::path::StepPath;

/// Reciprocal condition number of `UᵀYU` below which the additive-hazards
/// design is treated as singular.
pub const RANK_GUARD_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverMeta {
    pub scale_n: usize,
    pub labels: Vec<String>,
    /// `true` for components that approximate the identity `A_t = t`.
    pub deterministic_mask: Vec<bool>,
    /// Time after which the estimator stopped producing jumps, if it had to.
    #[serde(default)]
    pub truncation_time: Option<f64>,
}

impl DriverMeta {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }
}

/// Nelson–Aalen estimator with increments `ΔN_t / Y_t`.
///
/// The path is frozen from the first time the risk set becomes empty; with
/// delayed entry, subjects arriving afterwards do not reopen it.
pub fn nelson_aalen(ds: &EventDataset, cause: u32, group: Option<i64>) -> Result<(StepPath, DriverMeta)> {
    if cause == 0 {
        return Err(Error::Domain("cause must be at least 1 (0 marks censoring)".into()));
    }
    ds.check_group(group)?;
    let scale_n = ds.subjects_in(group);
    if scale_n == 0 {
        return Err(Error::Domain("no subjects".into()));
    }
    let risk = RiskIndex::new(ds, group);
    let freeze = risk.first_empty_after_start();
    let mut truncation_time = None;
    let mut times = Vec::new();
    let mut increments = Vec::new();
    for (t, d) in ds.event_counts(cause, group) {
        if let Some(f) = freeze {
            if t > f {
                truncation_time = Some(f);
                break;
            }
        }
        let y = risk.at_risk(t);
        debug_assert!(y >= d as usize);
        times.push(t);
        increments.push(f64::from(d) / y as f64);
    }
    let path = StepPath::from_increments(vec![0.0], times, increments)?;
    let label = match group {
        Some(g) => format!("A{cause}[group {g}]"),
        None => format!("A{cause}"),
    };
    Ok((
        path,
        DriverMeta {
            scale_n,
            labels: vec![label],
            deterministic_mask: vec![false],
            truncation_time,
        },
    ))
}

/// Aalen's additive hazards regression: cumulative regression coefficients
/// `B(t) = Σ_{s ≤ t} (UᵀYU)⁻¹ UᵀY ΔN_s`, solved at each event time by a QR
/// least-squares fit of the event indicators on the at-risk design.
///
/// Covariates are fixed per record, so the left-limit design at an event
/// time is the design of the records at risk there. When the design's
/// reciprocal condition number drops below [`RANK_GUARD_RCOND`] the path is
/// frozen and the time is reported as `truncation_time`.
pub fn aalen_additive(ds: &EventDataset, cause: u32, with_intercept: bool) -> Result<(StepPath, DriverMeta)> {
    if cause == 0 {
        return Err(Error::Domain("cause must be at least 1 (0 marks censoring)".into()));
    }
    let p_cov = ds.n_covariates();
    let p = p_cov + usize::from(with_intercept);
    if p == 0 {
        return Err(Error::Domain("additive model needs covariates or an intercept".into()));
    }
    if ds.n_subjects() == 0 {
        return Err(Error::Domain("no subjects".into()));
    }
    let mut labels: Vec<String> = Vec::with_capacity(p);
    if with_intercept {
        labels.push(format!("B{cause}[intercept]"));
    }
    labels.extend((1..=p_cov).map(|j| format!("B{cause}[x{j}]")));

    let mut times = Vec::new();
    let mut increments = Vec::new();
    let mut truncation_time = None;
    for (t, _) in ds.event_counts(cause, None) {
        let at_risk: Vec<_> = ds
            .records()
            .iter()
            .filter(|r| r.entry_time < t && t <= r.exit_time)
            .collect();
        let design = DMatrix::from_fn(at_risk.len(), p, |i, j| {
            if with_intercept {
                if j == 0 {
                    1.0
                } else {
                    at_risk[i].covariates[j - 1]
                }
            } else {
                at_risk[i].covariates[j]
            }
        });
        let events = DVector::from_iterator(
            at_risk.len(),
            at_risk
                .iter()
                .map(|r| f64::from(u8::from(r.exit_time == t && r.event_code == cause))),
        );
        match least_squares_step(design, events) {
            Some(step) => {
                times.push(t);
                increments.extend(step.iter());
            }
            None if times.is_empty() => return Err(Error::DesignNeverFullRank { time: t }),
            None => {
                truncation_time = Some(t);
                break;
            }
        }
    }
    let path = StepPath::from_increments(vec![0.0; p], times, increments)?;
    Ok((
        path,
        DriverMeta {
            scale_n: ds.n_subjects(),
            labels,
            deterministic_mask: vec![false; p],
            truncation_time,
        },
    ))
}

/// Solves `min |U b - dN|` through a QR factorisation of `U`, returning
/// `None` when `UᵀU` fails the rank guard.
fn least_squares_step(design: DMatrix<f64>, events: DVector<f64>) -> Option<DVector<f64>> {
    let p = design.ncols();
    if design.nrows() < p {
        return None;
    }
    let qr = design.qr();
    let r = qr.r();
    // cond(UᵀU) = cond(R)², and R is only p×p.
    let sv = r.singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if !(smax > 0.0) || (smin / smax).powi(2) < RANK_GUARD_RCOND {
        return None;
    }
    let rhs = qr.q().transpose() * events;
    r.solve_upper_triangular(&rhs)
}

/// Deterministic driver approximating `A_t = t`: jumps at `k·step` with
/// increments `step` (plus a final partial step to the horizon), so that the
/// path at `t` equals `max{τ_k ≤ t}`.
pub fn time_grid_driver(horizon: f64, step: f64) -> Result<(StepPath, DriverMeta)> {
    let times: Vec<f64> = grid_times(horizon, step)?.collect();
    let mut increments = Vec::with_capacity(times.len());
    let mut previous = 0.0;
    for &t in &times {
        increments.push(t - previous);
        previous = t;
    }
    let values = times.clone();
    Ok((
        StepPath::from_raw(vec![0.0], times, increments, values),
        DriverMeta {
            scale_n: 0,
            labels: vec!["time".into()],
            deterministic_mask: vec![true],
            truncation_time: None,
        },
    ))
}

/// Jump times of the time grid: `k·step` up to the horizon, with the last
/// time moved onto the horizon when it falls within rounding of it and a
/// final partial step appended otherwise.
pub(crate) fn grid_times(horizon: f64, step: f64) -> Result<impl Iterator<Item = f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Domain(format!("grid step must be positive, got {step}")));
    }
    if !(horizon >= step) || !horizon.is_finite() {
        return Err(Error::Domain(format!(
            "grid step {step} must not exceed the horizon {horizon}"
        )));
    }
    let mut k = (horizon / step).floor() as usize;
    while k > 0 && k as f64 * step > horizon {
        k -= 1;
    }
    let partial = k == 0 || horizon - k as f64 * step > 1e-9 * step;
    let regular = if partial { k } else { k - 1 };
    Ok((1..=regular).map(move |i| i as f64 * step).chain(std::iter::once(horizon)))
}

/// Stacks drivers component-wise over the union of their jump times.
///
/// The merged `scale_n` is the sum of the parts' `scale_n`; deterministic
/// parts carry zero. Values are carried over from the parts, so projecting
/// the merged path back onto a part reproduces that part exactly.
pub fn merge_drivers(parts: &[(StepPath, DriverMeta)]) -> Result<(StepPath, DriverMeta)> {
    if parts.is_empty() {
        return Err(Error::Domain("cannot merge an empty list of drivers".into()));
    }
    for (path, meta) in parts {
        if path.dim() != meta.dim() || meta.deterministic_mask.len() != meta.dim() {
            return Err(Error::Contract("driver metadata does not match its path".into()));
        }
    }
    let dim: usize = parts.iter().map(|(p, _)| p.dim()).sum();
    let mut times: Vec<f64> = parts.iter().flat_map(|(p, _)| p.times().iter().copied()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut origin = Vec::with_capacity(dim);
    for (p, _) in parts {
        origin.extend_from_slice(p.origin());
    }
    let mut increments = vec![0.0; times.len() * dim];
    let mut values = vec![0.0; times.len() * dim];
    let mut offset = 0;
    for (p, _) in parts {
        let d = p.dim();
        let mut cursor = 0;
        let mut current = p.origin();
        for (row, &t) in times.iter().enumerate() {
            let base = row * dim + offset;
            if cursor < p.len() && p.times()[cursor] == t {
                increments[base..base + d].copy_from_slice(p.increment(cursor));
                current = p.value(cursor);
                cursor += 1;
            }
            values[base..base + d].copy_from_slice(current);
        }
        offset += d;
    }

    let meta = DriverMeta {
        scale_n: parts.iter().map(|(_, m)| m.scale_n).sum(),
        labels: parts.iter().flat_map(|(_, m)| m.labels.iter().cloned()).collect(),
        deterministic_mask: parts
            .iter()
            .flat_map(|(_, m)| m.deterministic_mask.iter().copied())
            .collect(),
        truncation_time: parts
            .iter()
            .filter_map(|(_, m)| m.truncation_time)
            .min_by(f64::total_cmp),
    };
    Ok((StepPath::from_raw(origin, times, increments, values), meta))
}

/// Where one driver component comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ComponentSource {
    /// The deterministic time grid.
    Time,
    NelsonAalen {
        cause: u32,
        #[serde(default)]
        group: Option<i64>,
    },
    /// Additive-hazards cumulative coefficients combined with a covariate
    /// profile: `A(t) = Σ_j profile_j B_j(t)`.
    AalenAdditive {
        cause: u32,
        #[serde(default = "yes")]
        intercept: bool,
        profile: Vec<f64>,
    },
}

fn yes() -> bool {
    true
}

/// How to turn a dataset into a stacked driver for a parameter system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRecipe {
    pub components: Vec<ComponentSource>,
    /// Step of the time grid used by `Time` components.
    #[serde(default)]
    pub grid_step: Option<f64>,
}

impl DriverRecipe {
    /// Builds and merges all components.
    ///
    /// Components that are estimated from the same dataset share its
    /// subjects, so the merged scale constant is the number of distinct
    /// subjects feeding the stochastic components rather than the sum of the
    /// parts' counts.
    pub fn build(&self, ds: &EventDataset) -> Result<(StepPath, DriverMeta)> {
        if ds.n_subjects() == 0 {
            return Err(Error::Domain("no subjects".into()));
        }
        let mut parts = Vec::with_capacity(self.components.len());
        let mut groups_used: Vec<Option<i64>> = Vec::new();
        for c in &self.components {
            let part = match c {
                ComponentSource::Time => {
                    let step = self.grid_step.ok_or_else(|| {
                        Error::Config("a time component needs `grid_step`".into())
                    })?;
                    time_grid_driver(ds.horizon(), step)?
                }
                ComponentSource::NelsonAalen { cause, group } => {
                    groups_used.push(*group);
                    nelson_aalen(ds, *cause, *group)?
                }
                ComponentSource::AalenAdditive {
                    cause,
                    intercept,
                    profile,
                } => {
                    groups_used.push(None);
                    let (path, meta) = aalen_additive(ds, *cause, *intercept)?;
                    let combined = path.combine(profile)?;
                    let label = format!("A{cause}[additive profile {profile:?}]");
                    (
                        combined,
                        DriverMeta {
                            labels: vec![label],
                            deterministic_mask: vec![false],
                            ..meta
                        },
                    )
                }
            };
            parts.push(part);
        }
        let (path, mut meta) = merge_drivers(&parts)?;
        meta.scale_n = if groups_used.contains(&None) {
            ds.n_subjects()
        } else {
            groups_used.sort();
            groups_used.dedup();
            groups_used.iter().map(|&g| ds.subjects_in(g)).sum()
        };
        if meta.scale_n == 0 {
            meta.scale_n = ds.n_subjects();
        }
        Ok((path, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{parse_dataset, ColumnMap, EventRecord};

    fn parse(src: &str) -> EventDataset {
        parse_dataset(src.as_bytes(), &ColumnMap::default(), None).unwrap()
    }

    #[test]
    fn nelson_aalen_hand_example() {
        let ds = parse("id,entry,exit,event\na,0,1,1\nb,0,1.5,0\nc,0,2,1\n");
        let (na, meta) = nelson_aalen(&ds, 1, None).unwrap();
        assert_eq!(na.times(), &[1.0, 2.0]);
        assert_eq!(na.increment(0), &[1.0 / 3.0]);
        assert_eq!(na.increment(1), &[1.0]);
        assert_eq!(meta.scale_n, 3);
        assert_eq!(meta.truncation_time, None);
    }

    #[test]
    fn nelson_aalen_without_events_is_zero() {
        let ds = parse("id,entry,exit,event\na,0,1,0\nb,0,2,0\n");
        let (na, _) = nelson_aalen(&ds, 1, None).unwrap();
        assert!(na.is_empty());
        assert_eq!(na.eval(10.0), &[0.0]);
    }

    #[test]
    fn nelson_aalen_distinct_events_harmonic_sum() {
        let n = 7;
        let body: String = (1..=n).map(|i| format!("s{i},0,{i},1\n")).collect();
        let ds = parse(&format!("id,entry,exit,event\n{body}"));
        let (na, _) = nelson_aalen(&ds, 1, None).unwrap();
        let expected: f64 = (1..=n).map(|i| 1.0 / (n - i + 1) as f64).sum();
        assert!((na.final_value()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn nelson_aalen_freezes_when_risk_set_empties() {
        let ds = parse("id,entry,exit,event\na,0,1,1\nb,2,3,1\n");
        let (na, meta) = nelson_aalen(&ds, 1, None).unwrap();
        assert_eq!(na.times(), &[1.0]);
        assert_eq!(meta.truncation_time, Some(1.0));
    }

    #[test]
    fn additive_intercept_only_matches_nelson_aalen() {
        let ds = parse("id,entry,exit,event\na,0,1,1\nb,0,1.5,0\nc,0,2,1\nd,0,2,1\ne,0.5,3,1\n");
        let (na, _) = nelson_aalen(&ds, 1, None).unwrap();
        let (aa, meta) = aalen_additive(&ds, 1, true).unwrap();
        assert_eq!(aa.times(), na.times());
        for i in 0..na.len() {
            assert!((aa.increment(i)[0] - na.increment(i)[0]).abs() <= 1e-12);
        }
        assert_eq!(meta.labels.len(), 1);
    }

    #[test]
    fn additive_collinear_design_never_full_rank() {
        let ds = parse("id,entry,exit,event,x1\na,0,1,1,2\nb,0,2,1,2\nc,0,3,0,2\n");
        assert!(matches!(
            aalen_additive(&ds, 1, true),
            Err(Error::DesignNeverFullRank { time }) if time == 1.0
        ));
    }

    #[test]
    fn additive_needs_columns() {
        let ds = parse("id,entry,exit,event\na,0,1,1\n");
        assert!(matches!(aalen_additive(&ds, 1, false), Err(Error::Domain(_))));
    }

    #[test]
    fn additive_truncates_when_group_empties() {
        // Group x1=1 leaves the risk set at t=2; later events cannot be fitted.
        let ds = EventDataset::new(
            vec![
                rec("a", 1.0, 1, 0.0),
                rec("b", 2.0, 1, 1.0),
                rec("c", 3.0, 1, 0.0),
                rec("d", 4.0, 0, 0.0),
            ],
            None,
        )
        .unwrap();
        let (path, meta) = aalen_additive(&ds, 1, true).unwrap();
        assert_eq!(path.times(), &[1.0, 2.0]);
        assert_eq!(meta.truncation_time, Some(3.0));
    }

    fn rec(id: &str, exit: f64, code: u32, x: f64) -> EventRecord {
        EventRecord {
            subject_id: id.into(),
            entry_time: 0.0,
            exit_time: exit,
            event_code: code,
            group: None,
            covariates: vec![x],
        }
    }

    #[test]
    fn time_grid_values() {
        let (g, meta) = time_grid_driver(1.0, 0.25).unwrap();
        assert_eq!(g.eval(0.6), &[0.5]);
        assert_eq!(g.times(), &[0.25, 0.5, 0.75, 1.0]);
        assert_eq!(meta.deterministic_mask, vec![true]);
        let (single, _) = time_grid_driver(2.0, 2.0).unwrap();
        assert_eq!(single.times(), &[2.0]);
        assert_eq!(single.increment(0), &[2.0]);
        let (partial, _) = time_grid_driver(1.0, 0.3).unwrap();
        assert_eq!(partial.len(), 4);
        assert_eq!(partial.eval(1.0), &[1.0]);
        assert!((partial.increment(3)[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn time_grid_rejects_bad_step() {
        assert!(matches!(time_grid_driver(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(time_grid_driver(1.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(time_grid_driver(1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn merge_grid_and_hazard() {
        let grid = time_grid_driver(1.0, 0.5).unwrap();
        let haz = (
            StepPath::from_increments(vec![0.0], vec![0.7], vec![0.3]).unwrap(),
            DriverMeta {
                scale_n: 10,
                labels: vec!["A".into()],
                deterministic_mask: vec![false],
                truncation_time: None,
            },
        );
        let (m, meta) = merge_drivers(&[grid, haz]).unwrap();
        assert_eq!(m.times(), &[0.5, 0.7, 1.0]);
        assert_eq!(m.increment(0), &[0.5, 0.0]);
        assert_eq!(m.increment(1), &[0.0, 0.3]);
        assert_eq!(m.increment(2), &[0.5, 0.0]);
        assert_eq!(meta.scale_n, 10);
        assert_eq!(meta.deterministic_mask, vec![true, false]);
    }

    #[test]
    fn merge_with_itself_doubles_dimension() {
        let g = time_grid_driver(1.0, 0.25).unwrap();
        let (m, _) = merge_drivers(&[g.clone(), g.clone()]).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.times(), g.0.times());
    }

    #[test]
    fn merge_empty_is_error() {
        assert!(matches!(merge_drivers(&[]), Err(Error::Domain(_))));
    }
}
