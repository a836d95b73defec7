//! Plugin fits that never materialize the time grid.
//!
//! Systems integrating over time need grids far finer than the event times
//! (the grid's own contribution to the covariance recursion grows with the
//! step). The walker here interleaves grid points with the estimated hazard
//! jumps on the fly and feeds them to a [`PluginStepper`].

use nalgebra::DMatrix;

use super::scenario::recipe_for;
use crate::error::{Error, Result};
use crate::events::EventDataset;
use crate::hazards::{grid_times, ComponentSource, DriverMeta, DriverRecipe};
use crate::path::StepPath;
use crate::plugin::PluginStepper;
use crate::systems::{OdeSystem, SystemKind};

/// Estimated hazard components plus an optional implicit time grid in
/// driver slot 0.
pub struct LazyDriver {
    hazards: StepPath,
    meta: DriverMeta,
    grid: Option<(f64, f64)>,
}

impl LazyDriver {
    pub fn build(kind: &SystemKind, ds: &EventDataset, grid_step: f64) -> Result<Self> {
        let full = recipe_for(kind, grid_step);
        let has_time = full.components.first() == Some(&ComponentSource::Time);
        let hazards_only = DriverRecipe {
            components: full
                .components
                .into_iter()
                .filter(|c| *c != ComponentSource::Time)
                .collect(),
            grid_step: None,
        };
        if hazards_only.components.len() + usize::from(has_time) != kind.driver_roles().len() {
            return Err(Error::Contract("time must be the first driver component".into()));
        }
        let (hazards, meta) = hazards_only.build(ds)?;
        if has_time {
            let _ = grid_times(ds.horizon(), grid_step)?;
        }
        Ok(LazyDriver {
            hazards,
            meta,
            grid: has_time.then_some((ds.horizon(), grid_step)),
        })
    }

    pub fn scale_n(&self) -> usize {
        self.meta.scale_n
    }

    pub fn dim(&self) -> usize {
        self.hazards.dim() + usize::from(self.grid.is_some())
    }

    /// Calls `f(time, increment)` for each merged jump in time order.
    pub fn for_each(&self, mut f: impl FnMut(f64, &[f64]) -> Result<()>) -> Result<()> {
        let offset = usize::from(self.grid.is_some());
        let mut inc = vec![0.0; self.dim()];
        let mut grid = match self.grid {
            Some((horizon, step)) => Some(grid_times(horizon, step)?.peekable()),
            None => None,
        };
        let mut previous_grid = 0.0;
        let times = self.hazards.times();
        let mut i = 0;
        loop {
            let next_grid = grid.as_mut().and_then(|g| g.peek().copied());
            let next_hazard = times.get(i).copied();
            let t = match (next_grid, next_hazard) {
                (None, None) => return Ok(()),
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
            };
            inc.fill(0.0);
            if next_grid == Some(t) {
                inc[0] = t - previous_grid;
                previous_grid = t;
                grid.as_mut().unwrap().next();
            }
            if next_hazard == Some(t) {
                inc[offset..].copy_from_slice(self.hazards.increment(i));
                i += 1;
            }
            f(t, &inc)?;
        }
    }
}

/// A state vector with its covariance, when tracked.
pub type Sample = (Vec<f64>, Option<DMatrix<f64>>);

/// State and, when requested, covariance right after all jumps at or before
/// each query time. `queries` must be nondecreasing.
pub fn sample_at<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &LazyDriver,
    queries: &[f64],
    with_cov: bool,
) -> Result<Vec<Sample>> {
    if queries.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("query times must be nondecreasing".into()));
    }
    let n = sys.state_dim();
    let v0 = with_cov.then(|| DMatrix::zeros(n, n));
    let mut stepper = PluginStepper::new(sys, sys.initial_value().to_vec(), v0, driver.scale_n())?;
    let mut out = Vec::with_capacity(queries.len());
    let mut q = 0;
    driver.for_each(|t, inc| {
        while q < queries.len() && queries[q] < t {
            out.push((stepper.state().to_vec(), stepper.cov().cloned()));
            q += 1;
        }
        stepper.step(t, inc)
    })?;
    while out.len() < queries.len() {
        out.push((stepper.state().to_vec(), stepper.cov().cloned()));
    }
    Ok(out)
}

/// One-dimensional paths of state component `c` and, when requested, of
/// its variance `V̂_cc`.
pub fn trace<S: OdeSystem + ?Sized>(
    sys: &S,
    driver: &LazyDriver,
    c: usize,
    with_cov: bool,
) -> Result<(StepPath, Option<StepPath>)> {
    let n = sys.state_dim();
    let x0 = sys.initial_value().to_vec();
    let v0 = with_cov.then(|| DMatrix::zeros(n, n));
    let mut stepper = PluginStepper::new(sys, x0.clone(), v0, driver.scale_n())?;
    let (mut times, mut xs, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    driver.for_each(|t, inc| {
        stepper.step(t, inc)?;
        times.push(t);
        xs.push(stepper.state()[c]);
        if let Some(v) = stepper.cov() {
            vs.push(v[(c, c)]);
        }
        Ok(())
    })?;
    let variance = match with_cov {
        true => Some(StepPath::from_values(vec![0.0], times.clone(), vs)?),
        false => None,
    };
    Ok((StepPath::from_values(vec![x0[c]], times, xs)?, variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plugin::fit;
    use crate::simlab::{simulate_dataset, HazardSpec, Scenario};
    use crate::systems::make_system;

    #[test]
    fn lazy_walk_matches_materialized_driver() {
        let mut sc = Scenario::crossing(SystemKind::Led).unwrap();
        sc.n = 40;
        sc.seed = 3;
        let ds = simulate_dataset(&sc).unwrap();
        let step = 0.01;
        let sys = make_system(SystemKind::Led).unwrap();
        let (driver, meta) = recipe_for(&SystemKind::Led, step).build(&ds).unwrap();
        let lazy = LazyDriver::build(&SystemKind::Led, &ds, step).unwrap();
        assert_eq!(lazy.scale_n(), meta.scale_n);

        let mut k = 0;
        lazy.for_each(|t, inc| {
            assert_eq!(t, driver.times()[k]);
            assert_eq!(inc, driver.increment(k));
            k += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(k, driver.len());

        let full = fit(&sys, &driver, &meta, None, None).unwrap();
        let queries = [0.0, 0.2, 0.5, 0.77, 1.0];
        let sampled = sample_at(&sys, &lazy, &queries, true).unwrap();
        for (q, (x, v)) in queries.iter().zip(&sampled) {
            assert_eq!(x.as_slice(), full.state.eval(*q));
            assert_eq!(v.as_ref().unwrap(), full.cov_at(*q));
        }
        let (x, v) = trace(&sys, &lazy, 0, true).unwrap();
        assert_eq!(x, full.state.component(0));
        assert_eq!(v.unwrap().final_value()[0], full.cov.last().unwrap()[(0, 0)]);
    }

    #[test]
    fn survival_has_no_grid() {
        let sc = Scenario::new(SystemKind::Survival, [("A", HazardSpec::Constant { rate: 1.0 })]);
        let ds = simulate_dataset(&sc).unwrap();
        let lazy = LazyDriver::build(&SystemKind::Survival, &ds, 1e-9).unwrap();
        let mut count = 0;
        lazy.for_each(|_, _| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert!(count <= sc.n);
    }
}
