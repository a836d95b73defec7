use std::collections::BTreeMap;

use super::HazardSpec;
use crate::error::{Error, Result};
use crate::hazards::grid_times;
use crate::path::StepPath;
use crate::plugin::solve_plugin;
use crate::systems::{make_system, DriverRole, SystemKind};

/// The true parameter, computed by running the plugin recursion on the exact
/// cumulative hazards sampled on a fine grid of step `fine_step`.
pub fn oracle_parameter(
    hazards: &BTreeMap<String, HazardSpec>,
    system: &SystemKind,
    horizon: f64,
    fine_step: f64,
) -> Result<StepPath> {
    let sys = make_system(system.clone())?;
    let roles = system.driver_roles();
    let mut cumulative: Vec<Box<dyn Fn(f64) -> f64 + '_>> = Vec::with_capacity(roles.len());
    for role in &roles {
        cumulative.push(match role {
            DriverRole::Time => Box::new(|t| t),
            DriverRole::Hazard { name, .. } => {
                let spec = hazards.get(name).ok_or_else(|| {
                    Error::Config(format!("system {} needs a hazard named `{name}`", system.name()))
                })?;
                spec.validate(horizon)?;
                Box::new(move |t| spec.cumulative(t))
            }
        });
    }
    let times: Vec<f64> = grid_times(horizon, fine_step)?.collect();
    let mut values = Vec::with_capacity(times.len() * roles.len());
    for &t in &times {
        values.extend(cumulative.iter().map(|f| f(t)));
    }
    let driver = StepPath::from_values(vec![0.0; roles.len()], times, values)?;
    solve_plugin(&sys, &driver, None)
}

/// Sup-norm change of the oracle when its step is halved, over all
/// components and the coarse grid times.
pub fn richardson_gap(
    hazards: &BTreeMap<String, HazardSpec>,
    system: &SystemKind,
    horizon: f64,
    fine_step: f64,
) -> Result<f64> {
    let coarse = oracle_parameter(hazards, system, horizon, fine_step)?;
    let fine = oracle_parameter(hazards, system, horizon, fine_step / 2.0)?;
    let mut gap: f64 = 0.0;
    for (i, &t) in coarse.times().iter().enumerate() {
        for (a, b) in coarse.value(i).iter().zip(fine.eval(t)) {
            gap = gap.max((a - b).abs());
        }
    }
    Ok(gap)
}
