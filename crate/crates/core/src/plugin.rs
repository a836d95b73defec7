//! Plugin estimators driven by step-function cumulative hazards.
//!
//! Given a driver `Â` with jump times `τ_1 < τ_2 < ...`, the estimate solves
//!
//! ```text
//! X̂_{τ_k} = X̂_{τ_{k-1}} + F(X̂_{τ_{k-1}}) ΔÂ_{τ_k}
//! ```
//!
//! and its covariance estimate solves
//!
//! ```text
//! V̂_{τ_k} = V̂_{τ_{k-1}} + Σ_j (V̂ ∇F_jᵀ + ∇F_j V̂) ΔÂ^j_{τ_k} + n F ΔÂ ΔÂᵀ Fᵀ
//! ```
//!
//! with `F` and `∇F_j` evaluated at the previous state. Both paths are
//! constant between driver jumps. `V̂` estimates the covariance of
//! `√n (X̂ - X)`, so pointwise standard errors are `sqrt(V̂_ii / n)`.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hazards::DriverMeta;
use crate::path::StepPath;
use crate::systems::OdeSystem;

/// Estimate, covariance path and scale constant from one plugin fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginFit {
    pub state: StepPath,
    /// `cov[0]` is `V̂_0`; `cov[k]` is the value after the `k`-th jump.
    pub cov: Vec<DMatrix<f64>>,
    pub scale_n: usize,
    pub labels: Vec<String>,
}

impl PluginFit {
    /// Time of each covariance entry: 0 followed by the jump times.
    pub fn cov_times(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.state.times().iter().copied()).collect()
    }

    /// Right-continuous covariance lookup.
    pub fn cov_at(&self, t: f64) -> &DMatrix<f64> {
        &self.cov[self.state.jumps_until(t)]
    }
}

/// Pointwise normal-approximation band.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    /// 0 followed by the jump times of the fit.
    pub times: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub level: f64,
}

/// Two-sided standard normal quantile `z_{(1+level)/2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf((1.0 + level) / 2.0))
}

/// Incremental solver for the state and (optionally) covariance recursions.
///
/// Feeds on one driver jump at a time without storing the path, which keeps
/// long deterministic time grids cheap.
pub struct PluginStepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    x: Vec<f64>,
    v: Option<DMatrix<f64>>,
    scale_n: f64,
    armed: Vec<bool>,
    held: Vec<usize>,
    f: DMatrix<f64>,
    grad: DMatrix<f64>,
    gv: DMatrix<f64>,
    dv: DMatrix<f64>,
    w: Vec<f64>,
}

impl<'a, S: OdeSystem + ?Sized> PluginStepper<'a, S> {
    pub fn new(sys: &'a S, x0: Vec<f64>, v0: Option<DMatrix<f64>>, scale_n: usize) -> Result<Self> {
        let n = sys.state_dim();
        let k = sys.driver_dim();
        if x0.len() != n {
            return Err(Error::Contract(format!(
                "initial state has length {} but the system has dimension {n}",
                x0.len()
            )));
        }
        if let Some(v0) = &v0 {
            if v0.shape() != (n, n) {
                return Err(Error::Contract(format!(
                    "initial covariance is {:?}, expected {n}×{n}",
                    v0.shape()
                )));
            }
            if (v0 - v0.transpose()).abs().max() > 1e-12 {
                return Err(Error::Contract("initial covariance is not symmetric".into()));
            }
            if scale_n == 0 {
                return Err(Error::Contract("covariance recursion needs scale_n ≥ 1".into()));
            }
        }
        Ok(PluginStepper {
            sys,
            x: x0,
            v: v0,
            scale_n: scale_n as f64,
            armed: vec![false; sys.guards().len()],
            held: Vec::new(),
            f: DMatrix::zeros(n, k),
            grad: DMatrix::zeros(n, n),
            gv: DMatrix::zeros(n, n),
            dv: DMatrix::zeros(n, n),
            w: vec![0.0; n],
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn cov(&self) -> Option<&DMatrix<f64>> {
        self.v.as_ref()
    }

    fn update_guards(&mut self, time: f64) -> Result<()> {
        self.held.clear();
        for (g, armed) in self.sys.guards().iter().zip(self.armed.iter_mut()) {
            let value = self.x[g.index];
            if value > g.lower {
                *armed = true;
            } else if !*armed && !g.hold_rows.is_empty() {
                self.held.extend_from_slice(&g.hold_rows);
            } else {
                return Err(Error::Guard {
                    component: self.sys.labels()[g.index].clone(),
                    value,
                    lower: g.lower,
                    time: Some(time),
                });
            }
        }
        Ok(())
    }

    /// Applies one driver jump at `time` with increment vector `inc`.
    pub fn step(&mut self, time: f64, inc: &[f64]) -> Result<()> {
        let n = self.x.len();
        self.update_guards(time)?;
        self.sys.integrand_into(&self.x, &mut self.f);
        for &r in &self.held {
            self.f.row_mut(r).fill(0.0);
        }
        for (i, wi) in self.w.iter_mut().enumerate() {
            *wi = (0..inc.len()).map(|j| self.f[(i, j)] * inc[j]).sum();
        }

        if let Some(v) = self.v.as_mut() {
            self.dv.fill(0.0);
            for (j, &a) in inc.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                self.sys.gradient_into(&self.x, j, &mut self.grad);
                for &r in &self.held {
                    self.grad.row_mut(r).fill(0.0);
                }
                self.grad.mul_to(v, &mut self.gv);
                // V ∇Fᵀ = (∇F V)ᵀ since V is symmetric.
                for c in 0..n {
                    for r in 0..=c {
                        self.dv[(r, c)] += (self.gv[(r, c)] + self.gv[(c, r)]) * a;
                    }
                }
            }
            for c in 0..n {
                for r in 0..=c {
                    let entry = v[(r, c)] + self.dv[(r, c)] + self.scale_n * self.w[r] * self.w[c];
                    v[(r, c)] = entry;
                    v[(c, r)] = entry;
                }
            }
        }
        for (xi, wi) in self.x.iter_mut().zip(&self.w) {
            *xi += wi;
        }
        Ok(())
    }
}

fn check_driver<S: OdeSystem + ?Sized>(sys: &S, driver: &StepPath) -> Result<()> {
    if driver.dim() != sys.driver_dim() {
        return Err(Error::Contract(format!(
            "driver has dimension {} but the system expects {}",
            driver.dim(),
            sys.driver_dim()
        )));
    }
    Ok(())
}

/// Solves the plugin recursion over every jump of `driver`.
pub fn solve_plugin<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &StepPath,
    x0_override: Option<&[f64]>,
) -> Result<StepPath> {
    check_driver(sys, driver)?;
    let x0 = x0_override.unwrap_or(sys.initial_value()).to_vec();
    let mut stepper = PluginStepper::new(sys, x0.clone(), None, 0)?;
    let mut values = Vec::with_capacity(driver.len() * sys.state_dim());
    for (i, &t) in driver.times().iter().enumerate() {
        stepper.step(t, driver.increment(i))?;
        values.extend_from_slice(stepper.state());
    }
    StepPath::from_values(x0, driver.times().to_vec(), values)
}

/// Solves the covariance recursion along a state path previously produced
/// by [`solve_plugin`] on the same driver. Returns `V̂_0` followed by one
/// matrix per jump.
pub fn solve_variance<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &StepPath,
    meta: &DriverMeta,
    state: &StepPath,
    v0: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_driver(sys, driver)?;
    if state.times() != driver.times() || state.dim() != sys.state_dim() {
        return Err(Error::Contract(
            "state path does not come from this system and driver".into(),
        ));
    }
    let mut stepper = PluginStepper::new(sys, state.origin().to_vec(), Some(v0.clone()), meta.scale_n)?;
    let mut out = Vec::with_capacity(driver.len() + 1);
    out.push(v0.clone());
    for (i, &t) in driver.times().iter().enumerate() {
        stepper.step(t, driver.increment(i))?;
        out.push(stepper.cov().expect("covariance is tracked").clone());
        // Re-anchor on the supplied path so F and ∇F see exactly its values.
        stepper.x.copy_from_slice(state.value(i));
    }
    Ok(out)
}

/// Runs both recursions in one pass. `v0` defaults to zero, which is right
/// when the initial value is known exactly.
pub fn fit<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &StepPath,
    meta: &DriverMeta,
    x0_override: Option<&[f64]>,
    v0: Option<DMatrix<f64>>,
) -> Result<PluginFit> {
    check_driver(sys, driver)?;
    let n = sys.state_dim();
    let x0 = x0_override.unwrap_or(sys.initial_value()).to_vec();
    let v0 = v0.unwrap_or_else(|| DMatrix::zeros(n, n));
    let mut stepper = PluginStepper::new(sys, x0.clone(), Some(v0.clone()), meta.scale_n)?;
    let mut values = Vec::with_capacity(driver.len() * n);
    let mut cov = Vec::with_capacity(driver.len() + 1);
    cov.push(v0);
    for (i, &t) in driver.times().iter().enumerate() {
        stepper.step(t, driver.increment(i))?;
        values.extend_from_slice(stepper.state());
        cov.push(stepper.cov().expect("covariance is tracked").clone());
    }
    Ok(PluginFit {
        state: StepPath::from_values(x0, driver.times().to_vec(), values)?,
        cov,
        scale_n: meta.scale_n,
        labels: sys.labels().to_vec(),
    })
}

/// State and covariance right after all jumps at or before each query time.
/// `queries` must be nondecreasing.
pub fn fit_at<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &StepPath,
    meta: &DriverMeta,
    queries: &[f64],
) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
    check_driver(sys, driver)?;
    if queries.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("query times must be nondecreasing".into()));
    }
    let n = sys.state_dim();
    let mut stepper = PluginStepper::new(
        sys,
        sys.initial_value().to_vec(),
        Some(DMatrix::zeros(n, n)),
        meta.scale_n,
    )?;
    let mut out = Vec::with_capacity(queries.len());
    let mut next = 0;
    for &q in queries {
        while next < driver.len() && driver.times()[next] <= q {
            stepper.step(driver.times()[next], driver.increment(next))?;
            next += 1;
        }
        out.push((stepper.state().to_vec(), stepper.cov().expect("covariance is tracked").clone()));
    }
    Ok(out)
}

/// Whether `V_ii` is negative beyond round-off relative to the largest
/// diagonal entry of `v`. Entries that are negative only at round-off level
/// are read as zero.
pub fn negative_variance(v: &DMatrix<f64>, i: usize) -> bool {
    let scale = v.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    v[(i, i)] < -1e-12 * scale
}

/// `X̂_i ± z · sqrt(V̂_ii / n)` at every jump time of the fit.
pub fn confidence_band(fit: &PluginFit, level: f64) -> Result<ConfidenceBand> {
    let z = normal_quantile(level)?;
    if fit.scale_n == 0 {
        return Err(Error::Contract("fit has scale_n = 0".into()));
    }
    let n = fit.state.dim();
    let times = fit.cov_times();
    for i in 0..n {
        let negative: Vec<f64> = fit
            .cov
            .iter()
            .zip(&times)
            .filter(|(v, _)| negative_variance(v, i))
            .map(|(_, &t)| t)
            .collect();
        if !negative.is_empty() {
            return Err(Error::NegativeVariance {
                state: fit.labels[i].clone(),
                times: negative,
            });
        }
    }
    let scale = fit.scale_n as f64;
    let mut lower = Vec::with_capacity(times.len());
    let mut upper = Vec::with_capacity(times.len());
    for (k, v) in fit.cov.iter().enumerate() {
        let x = if k == 0 { fit.state.origin() } else { fit.state.value(k - 1) };
        let half: Vec<f64> = (0..n).map(|i| z * (v[(i, i)].max(0.0) / scale).sqrt()).collect();
        lower.push(x.iter().zip(&half).map(|(x, h)| x - h).collect());
        upper.push(x.iter().zip(&half).map(|(x, h)| x + h).collect());
    }
    Ok(ConfidenceBand {
        times,
        lower,
        upper,
        level,
    })
}
