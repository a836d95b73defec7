use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::HazardSpec;
use crate::error::{Error, Result};
use crate::events::{EventDataset, EventRecord};
use crate::hazards::{ComponentSource, DriverRecipe};
use crate::systems::{make_system, DriverRole, OdeSystem, SystemKind};

/// A simulation setting: true hazards, sample size and study controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemKind,
    /// True hazards keyed by driver role name (`A`, `A1`, `A0`, `H`, ...).
    pub hazards: BTreeMap<String, HazardSpec>,
    #[serde(default = "unit")]
    pub horizon: f64,
    /// Subjects per group (two-group systems simulate `n` in each).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k_replications: usize,
    #[serde(default)]
    pub censor: Option<HazardSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Step of the time grid for systems driven by time. Defaults to
    /// `horizon / 1e6`.
    #[serde(default)]
    pub grid_step: Option<f64>,
    /// Step of the oracle grid. Defaults to `horizon / 1e5`.
    #[serde(default)]
    pub oracle_step: Option<f64>,
    /// State component under study. Defaults to the system's main parameter.
    #[serde(default)]
    pub component: Option<usize>,
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Settings for the bootstrap target of the variance convergence study.
    #[serde(default)]
    pub variance_target: Option<VarianceTarget>,
}

/// The variance study compares plugin covariances against a bootstrap
/// covariance computed once on a large simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceTarget {
    #[serde(default = "default_target_n")]
    pub n: usize,
    #[serde(default = "default_target_b")]
    pub bootstrap: usize,
    #[serde(default = "default_target_points")]
    pub grid_points: usize,
}

impl Default for VarianceTarget {
    fn default() -> Self {
        VarianceTarget {
            n: default_target_n(),
            bootstrap: default_target_b(),
            grid_points: default_target_points(),
        }
    }
}

fn unit() -> f64 {
    1.0
}
fn default_n() -> usize {
    500
}
fn default_k() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}
fn default_target_n() -> usize {
    20_000
}
fn default_target_b() -> usize {
    400
}
fn default_target_points() -> usize {
    100
}

impl Scenario {
    /// A scenario with the given hazards and every control at its default.
    pub fn new(system: SystemKind, hazards: impl IntoIterator<Item = (&'static str, HazardSpec)>) -> Self {
        Scenario {
            system,
            hazards: hazards.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            horizon: unit(),
            n: default_n(),
            k_replications: default_k(),
            censor: None,
            seed: 0,
            grid_step: None,
            oracle_step: None,
            component: None,
            n_list: Vec::new(),
            t_grid: Vec::new(),
            level: default_level(),
            variance_target: None,
        }
    }

    /// Two-group scenario with linear hazards that cross at the middle of
    /// the unit horizon: `1.5 - t` in the first group and `0.5 + t` in the
    /// second.
    pub fn crossing(system: SystemKind) -> Result<Self> {
        let names: Vec<String> = hazard_roles(&system).into_iter().map(|r| r.0).collect();
        if names.len() != 2 {
            return Err(Error::Config(format!(
                "the crossing scenario needs a two-group system, not {}",
                system.name()
            )));
        }
        let mut sc = Scenario::new(system, []);
        sc.hazards.insert(names[0].clone(), HazardSpec::Linear { intercept: 1.5, slope: -1.0 });
        sc.hazards.insert(names[1].clone(), HazardSpec::Linear { intercept: 0.5, slope: 1.0 });
        Ok(sc)
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(self.horizon / 1e6)
    }

    pub fn oracle_step(&self) -> f64 {
        self.oracle_step.unwrap_or(self.horizon / 1e5)
    }

    pub fn component(&self) -> usize {
        self.component.unwrap_or_else(|| self.system.primary_component())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.n == 0 || self.k_replications == 0 {
            return Err(Error::Config("n and k_replications must be at least 1".into()));
        }
        if self.n_list.contains(&0) {
            return Err(Error::Config("n_list entries must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        for (name, _, _) in hazard_roles(&self.system) {
            if !self.hazards.contains_key(&name) {
                return Err(Error::Config(format!(
                    "system {} needs a hazard named `{name}`",
                    self.system.name()
                )));
            }
        }
        for spec in self.hazards.values().chain(self.censor.iter()) {
            spec.validate(self.horizon)?;
        }
        let dim = make_system(self.system.clone())?.state_dim();
        if self.component() >= dim {
            return Err(Error::Config(format!(
                "component {} is out of range for a {dim}-dimensional system",
                self.component()
            )));
        }
        Ok(())
    }
}

/// Hazard roles of a system as `(name, group, cause)`.
pub(crate) fn hazard_roles(kind: &SystemKind) -> Vec<(String, Option<i64>, u32)> {
    kind.driver_roles()
        .into_iter()
        .filter_map(|r| match r {
            DriverRole::Hazard { name, group, cause } => Some((name, group, cause)),
            DriverRole::Time => None,
        })
        .collect()
}

/// Nelson–Aalen estimates for every driver role of `kind`, in driver order,
/// with the time grid where the system integrates over time.
pub fn recipe_for(kind: &SystemKind, grid_step: f64) -> DriverRecipe {
    DriverRecipe {
        components: kind
            .driver_roles()
            .into_iter()
            .map(|r| match r {
                DriverRole::Time => ComponentSource::Time,
                DriverRole::Hazard { group, cause, .. } => ComponentSource::NelsonAalen { cause, group },
            })
            .collect(),
        grid_step: Some(grid_step),
    }
}

/// Simulates the dataset for `sc` from its own seed.
pub fn simulate_dataset(sc: &Scenario) -> Result<EventDataset> {
    sc.validate()?;
    simulate_stream(sc, sc.n, 0)
}

/// Simulates `n` subjects per group from substream `stream` of the seed.
pub(crate) fn simulate_stream(sc: &Scenario, n: usize, stream: u64) -> Result<EventDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(stream);
    let roles = hazard_roles(&sc.system);
    let spec = |name: &str| &sc.hazards[name];
    let horizon = sc.horizon;
    let mut records = Vec::new();

    let censor_time = |rng: &mut ChaCha8Rng| match &sc.censor {
        Some(c) => c.invert(0.0, rng.sample(Exp1), horizon).unwrap_or(horizon),
        None => horizon,
    };

    if sc.system.recurrent() {
        let (recurrent, terminal) = (spec(&roles[0].0), spec(&roles[1].0));
        for i in 0..n {
            let death = terminal.invert(0.0, rng.sample(Exp1), horizon);
            let censor = censor_time(&mut rng);
            let (end, code) = match death {
                Some(d) if d <= censor => (d, roles[1].2),
                _ => (censor, 0),
            };
            let mut start = 0.0;
            while let Some(t) = recurrent.invert(start, rng.sample(Exp1), horizon) {
                if t >= end {
                    break;
                }
                records.push(record(format!("{i}"), start, t, roles[0].2, None));
                start = t;
            }
            records.push(record(format!("{i}"), start, end, code, None));
        }
    } else if roles.iter().any(|r| r.1.is_some()) {
        for (name, group, cause) in &roles {
            let hazard = spec(name);
            for i in 0..n {
                let event = hazard.invert(0.0, rng.sample(Exp1), horizon);
                let censor = censor_time(&mut rng);
                let id = format!("g{}-{i}", group.unwrap_or(0));
                records.push(match event {
                    Some(t) if t <= censor => record(id, 0.0, t, *cause, *group),
                    _ => record(id, 0.0, censor, 0, *group),
                });
            }
        }
    } else {
        // One or more competing causes: the observed event is the earliest
        // latent time.
        for i in 0..n {
            let mut first: Option<(f64, u32)> = None;
            for (name, _, cause) in &roles {
                if let Some(t) = spec(name).invert(0.0, rng.sample(Exp1), horizon) {
                    if first.is_none_or(|(s, _)| t < s) {
                        first = Some((t, *cause));
                    }
                }
            }
            let censor = censor_time(&mut rng);
            records.push(match first {
                Some((t, cause)) if t <= censor => record(format!("{i}"), 0.0, t, cause, None),
                _ => record(format!("{i}"), 0.0, censor, 0, None),
            });
        }
    }
    EventDataset::new(records, Some(horizon))
}

fn record(id: String, entry: f64, exit: f64, code: u32, group: Option<i64>) -> EventRecord {
    EventRecord {
        subject_id: id,
        entry_time: entry,
        exit_time: exit,
        event_code: code,
        group,
        covariates: Vec::new(),
    }
}
