use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{sample_at, trace, LazyDriver};
use super::oracle::{oracle_parameter, richardson_gap};
use super::scenario::{simulate_stream, Scenario};
use crate::error::{Error, Result};
use crate::events::{EventDataset, EventRecord};
use crate::path::{integrated_squared_difference, StepPath};
use crate::plugin::{negative_variance, normal_quantile};
use crate::systems::{make_system, OdeSystem, SystemKind};

/// Which quantity the convergence study compares against its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Target {
    /// `X̂` against the oracle parameter.
    Estimate,
    /// `V̂/n` against a bootstrap covariance, also divided by `n`.
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub l: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub t: f64,
    pub coverage: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub level: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", content = "rows", rename_all = "snake_case")]
pub enum StudyRows {
    Convergence(Vec<ConvergenceRow>),
    Coverage(Vec<CoverageRow>),
}

/// Run metadata. Everything but `wall_time_s` is a deterministic function of
/// the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub system: String,
    pub component: usize,
    pub component_label: String,
    pub seed: u64,
    pub k_replications: usize,
    pub failed_replications: usize,
    /// First few distinct failure messages.
    pub failures: Vec<String>,
    pub oracle_step: f64,
    pub oracle_richardson_gap: f64,
    pub grid_step: Option<f64>,
    pub target: Option<L2Target>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    #[serde(flatten)]
    pub rows: StudyRows,
    pub meta: StudyMeta,
}

impl StudyResult {
    pub fn convergence_rows(&self) -> &[ConvergenceRow] {
        match &self.rows {
            StudyRows::Convergence(rows) => rows,
            StudyRows::Coverage(_) => &[],
        }
    }

    pub fn coverage_rows(&self) -> &[CoverageRow] {
        match &self.rows {
            StudyRows::Coverage(rows) => rows,
            StudyRows::Convergence(_) => &[],
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson_interval(hits: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Ok((0.0, 1.0));
    }
    let z = normal_quantile(level)?;
    let m = trials as f64;
    let p = hits as f64 / m;
    let denom = 1.0 + z * z / m;
    let center = (p + z * z / (2.0 * m)) / denom;
    let half = z / denom * (p * (1.0 - p) / m + z * z / (4.0 * m * m)).sqrt();
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

fn stream_id(n: usize, j: usize) -> u64 {
    ((n as u64) << 32) | j as u64
}

struct Setup {
    sys: crate::systems::ParameterSystem,
    component: usize,
    oracle: StepPath,
    gap: f64,
    started: Instant,
}

fn setup(sc: &Scenario) -> Result<Setup> {
    let started = Instant::now();
    sc.validate()?;
    let component = sc.component();
    let oracle = oracle_parameter(&sc.hazards, &sc.system, sc.horizon, sc.oracle_step())?;
    let gap = richardson_gap(&sc.hazards, &sc.system, sc.horizon, sc.oracle_step())?;
    Ok(Setup {
        sys: make_system(sc.system.clone())?,
        component,
        oracle: oracle.component(component),
        gap,
        started,
    })
}

fn uses_time(kind: &SystemKind) -> bool {
    kind.driver_roles().contains(&crate::systems::DriverRole::Time)
}

fn meta(sc: &Scenario, s: &Setup, outcomes: &[&Result<Vec<bool>, String>], target: Option<L2Target>) -> StudyMeta {
    let mut failures: Vec<String> = Vec::new();
    let mut failed = 0;
    for o in outcomes {
        if let Err(msg) = o {
            failed += 1;
            if failures.len() < 5 && !failures.contains(msg) {
                failures.push(msg.clone());
            }
        }
    }
    StudyMeta {
        system: sc.system.name().to_string(),
        component: s.component,
        component_label: s.sys.labels()[s.component].clone(),
        seed: sc.seed,
        k_replications: sc.k_replications,
        failed_replications: failed,
        failures,
        oracle_step: sc.oracle_step(),
        oracle_richardson_gap: s.gap,
        grid_step: uses_time(&sc.system).then(|| sc.grid_step()),
        target,
        wall_time_s: s.started.elapsed().as_secs_f64(),
    }
}

/// Mean integrated squared error `L(n)` for each sample size.
///
/// Replication `j` at size `n` draws from its own substream, so results do
/// not depend on how the replications are scheduled. Replications that fail
/// (guard trips, empty designs) are excluded from the mean and counted.
pub fn l2_convergence(sc: &Scenario, n_list: &[usize], target: L2Target) -> Result<StudyResult> {
    let s = setup(sc)?;
    let n_list = if n_list.is_empty() { &sc.n_list[..] } else { n_list };
    if n_list.is_empty() {
        return Err(Error::Config("the convergence study needs a non-empty n_list".into()));
    }
    let c = s.component;
    let horizon = sc.horizon;
    let variance_target = match target {
        L2Target::Estimate => None,
        L2Target::Variance => Some(bootstrap_target(sc, c)?),
    };

    let mut rows = Vec::with_capacity(n_list.len());
    let mut all: Vec<Result<Vec<bool>, String>> = Vec::new();
    for &n in n_list {
        let outcomes: Vec<Result<f64, String>> = (0..sc.k_replications)
            .into_par_iter()
            .map(|j| {
                let run = || -> Result<f64> {
                    let ds = simulate_stream(sc, n, stream_id(n, j))?;
                    let driver = LazyDriver::build(&sc.system, &ds, sc.grid_step())?;
                    let (x, v) = trace(&s.sys, &driver, c, variance_target.is_some())?;
                    Ok(match (&variance_target, v) {
                        (Some(vt), Some(v)) => {
                            let scale = driver.scale_n() as f64;
                            integrated_squared_difference(vt, 0, &v, 0, horizon) / (scale * scale)
                        }
                        _ => integrated_squared_difference(&s.oracle, 0, &x, 0, horizon),
                    })
                };
                run().map_err(|e| e.to_string())
            })
            .collect();
        let ok: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
        if ok.is_empty() {
            return Err(Error::AllReplicationsFailed {
                failed: outcomes.len(),
                last: outcomes.last().and_then(|o| o.clone().err()).unwrap_or_default(),
            });
        }
        rows.push(ConvergenceRow {
            n,
            l: ok.iter().sum::<f64>() / ok.len() as f64,
            succeeded: ok.len(),
            failed: outcomes.len() - ok.len(),
        });
        all.extend(outcomes.into_iter().map(|o| o.map(|_| Vec::new())));
    }
    let refs: Vec<_> = all.iter().collect();
    Ok(StudyResult {
        rows: StudyRows::Convergence(rows),
        meta: meta(sc, &s, &refs, Some(target)),
    })
}

/// Bootstrap covariance of component `c` on an evenly spaced grid, from one
/// large simulated dataset.
fn bootstrap_target(sc: &Scenario, c: usize) -> Result<StepPath> {
    let vt = sc.variance_target.clone().unwrap_or_default();
    let ds = simulate_stream(sc, vt.n, u64::MAX)?;
    let times: Vec<f64> = (1..=vt.grid_points)
        .map(|i| sc.horizon * i as f64 / vt.grid_points as f64)
        .collect();
    let cov = bootstrap_covariance(&ds, &sc.system, sc.grid_step(), vt.bootstrap, sc.seed, &times)?;
    let values = cov.iter().map(|m| m[(c, c)]).collect();
    StepPath::from_values(vec![0.0], times, values)
}

/// Whether a band `[lo, hi]` contains `truth`.
pub fn covers(lo: f64, hi: f64, truth: f64) -> bool {
    lo <= truth && truth <= hi
}

/// Per-time coverage from the indicator vectors of the successful
/// replications.
pub fn coverage_rows(t_grid: &[f64], indicators: &[Vec<bool>], level: f64) -> Result<Vec<CoverageRow>> {
    t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let trials = indicators.len();
            let hits = indicators.iter().filter(|h| h[i]).count();
            let (wilson_lo, wilson_hi) = wilson_interval(hits, trials, level)?;
            Ok(CoverageRow {
                t,
                coverage: if trials == 0 { 0.0 } else { hits as f64 / trials as f64 },
                wilson_lo,
                wilson_hi,
                level,
                trials,
            })
        })
        .collect()
}

/// Monte-Carlo coverage of the pointwise band at each time of `t_grid`.
pub fn coverage_study(sc: &Scenario, level: f64, t_grid: &[f64]) -> Result<StudyResult> {
    let s = setup(sc)?;
    let t_grid = if t_grid.is_empty() { &sc.t_grid[..] } else { t_grid };
    if t_grid.is_empty() {
        return Err(Error::Config("the coverage study needs a non-empty t_grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) || t_grid.iter().any(|&t| !(0.0..=sc.horizon).contains(&t)) {
        return Err(Error::Config("t_grid must be increasing and within the horizon".into()));
    }
    let z = normal_quantile(level)?;
    let c = s.component;
    let truth: Vec<f64> = t_grid.iter().map(|&t| s.oracle.eval(t)[0]).collect();
    let n = sc.n;
    let outcomes: Vec<Result<Vec<bool>, String>> = (0..sc.k_replications)
        .into_par_iter()
        .map(|j| {
            let run = || -> Result<Vec<bool>> {
                let ds = simulate_stream(sc, n, stream_id(n, j))?;
                let driver = LazyDriver::build(&sc.system, &ds, sc.grid_step())?;
                let scale = driver.scale_n() as f64;
                let samples = sample_at(&s.sys, &driver, t_grid, true)?;
                let mut negative = Vec::new();
                let mut hits = Vec::with_capacity(t_grid.len());
                for ((x, v), (&t, &truth)) in samples.iter().zip(t_grid.iter().zip(&truth)) {
                    let v = v.as_ref().expect("covariance is tracked");
                    let var = v[(c, c)];
                    if negative_variance(v, c) {
                        negative.push(t);
                    }
                    let half = z * (var.max(0.0) / scale).sqrt();
                    hits.push(covers(x[c] - half, x[c] + half, truth));
                }
                if !negative.is_empty() {
                    return Err(Error::NegativeVariance {
                        state: s.sys.labels()[c].clone(),
                        times: negative,
                    });
                }
                Ok(hits)
            };
            run().map_err(|e| e.to_string())
        })
        .collect();
    let indicators: Vec<Vec<bool>> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
    if indicators.is_empty() {
        return Err(Error::AllReplicationsFailed {
            failed: outcomes.len(),
            last: outcomes.last().and_then(|o| o.clone().err()).unwrap_or_default(),
        });
    }
    let refs: Vec<_> = outcomes.iter().collect();
    Ok(StudyResult {
        rows: StudyRows::Coverage(coverage_rows(t_grid, &indicators, level)?),
        meta: meta(sc, &s, &refs, None),
    })
}

/// Nonparametric bootstrap covariance of `√n (X̂* - X̂)` at `times`.
///
/// Subjects (with all their records) are resampled with replacement within
/// each group, the plugin estimate is refit, and the empirical covariance
/// over the `b` replicates is returned per time. A replicate whose refit
/// fails is redrawn up to ten times.
pub fn bootstrap_covariance(
    ds: &EventDataset,
    system: &SystemKind,
    grid_step: f64,
    b: usize,
    seed: u64,
    times: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    if b < 100 {
        return Err(Error::Contract(format!("bootstrap needs at least 100 replicates, got {b}")));
    }
    let sys = make_system(system.clone())?;
    let dim = sys.state_dim();
    let base = LazyDriver::build(system, ds, grid_step)?;
    let root_n = (base.scale_n() as f64).sqrt();
    let point = sample_at(&sys, &base, times, false)?;

    let mut by_subject: BTreeMap<&str, Vec<&EventRecord>> = BTreeMap::new();
    for r in ds.records() {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r);
    }
    let mut strata: BTreeMap<Option<i64>, Vec<Vec<&EventRecord>>> = BTreeMap::new();
    for records in by_subject.into_values() {
        strata.entry(records[0].group).or_default().push(records);
    }

    let replicates: Vec<Result<Vec<DVector<f64>>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut last = None;
            for _ in 0..=10 {
                let mut records = Vec::with_capacity(ds.records().len());
                let mut next_id = 0usize;
                for subjects in strata.values() {
                    for _ in 0..subjects.len() {
                        let pick = &subjects[rng.random_range(0..subjects.len())];
                        let id = next_id.to_string();
                        next_id += 1;
                        records.extend(pick.iter().map(|rec| EventRecord {
                            subject_id: id.clone(),
                            ..(*rec).clone()
                        }));
                    }
                }
                let refit = EventDataset::new(records, Some(ds.horizon()))
                    .and_then(|d| LazyDriver::build(system, &d, grid_step))
                    .and_then(|driver| sample_at(&sys, &driver, times, false));
                match refit {
                    Ok(samples) => {
                        return Ok(samples
                            .iter()
                            .zip(&point)
                            .map(|((x, _), (x0, _))| {
                                DVector::from_iterator(dim, x.iter().zip(x0).map(|(a, b)| root_n * (a - b)))
                            })
                            .collect())
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt was made"))
        })
        .collect();
    let replicates = replicates.into_iter().collect::<Result<Vec<_>>>()?;

    Ok((0..times.len())
        .map(|i| {
            let mean = replicates.iter().map(|rep| &rep[i]).sum::<DVector<f64>>() / b as f64;
            let mut cov = DMatrix::zeros(dim, dim);
            for rep in &replicates {
                let d = &rep[i] - &mean;
                cov += &d * d.transpose();
            }
            cov / (b - 1) as f64
        })
        .collect())
}
