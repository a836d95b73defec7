//! Catalogue of parameter systems `X_t = X_0 + ∫ F(X_{s-}) dA_s`.
//!
//! A system bundles the state and driver dimensions, the integrand `F`
//! (an `n×k` matrix function of the state), the Jacobians `∇F_j` of its
//! columns, the initial value and the lower-bound guards that keep `F`
//! away from its singularities. Eight systems ship; library users may
//! implement [`OdeSystem`] for their own.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound for guarded state components.
pub const DEFAULT_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Survival,
    RelativeSurvival,
    Rmst,
    Led,
    Ler,
    CumulativeIncidence {
        m: usize,
    },
    MeanFrequency,
    /// Cumulative predictive values, sensitivity and specificity after a
    /// screening at time zero. `prevalence` is the disease prevalence β and
    /// `initial` holds `(U₀, V₀, W₀, X₀)`.
    Screening {
        prevalence: f64,
        #[serde(default)]
        initial: Option<[f64; 4]>,
    },
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Survival => "survival",
            SystemKind::RelativeSurvival => "relative_survival",
            SystemKind::Rmst => "rmst",
            SystemKind::Led => "led",
            SystemKind::Ler => "ler",
            SystemKind::CumulativeIncidence { .. } => "cumulative_incidence",
            SystemKind::MeanFrequency => "mean_frequency",
            SystemKind::Screening { .. } => "screening",
        }
    }

    /// Parses the names printed by [`SystemKind::name`]; `cumulative_incidence`
    /// takes `m` from `param`, `screening` takes the prevalence.
    pub fn from_name(name: &str, param: Option<f64>) -> Result<Self> {
        Ok(match name {
            "survival" => SystemKind::Survival,
            "relative_survival" => SystemKind::RelativeSurvival,
            "rmst" => SystemKind::Rmst,
            "led" => SystemKind::Led,
            "ler" => SystemKind::Ler,
            "mean_frequency" => SystemKind::MeanFrequency,
            "cumulative_incidence" => SystemKind::CumulativeIncidence {
                m: param.map_or(Ok(2), |m| {
                    if m >= 1.0 && m.fract() == 0.0 {
                        Ok(m as usize)
                    } else {
                        Err(Error::Config(format!("number of causes must be a positive integer, got {m}")))
                    }
                })?,
            },
            "screening" => SystemKind::Screening {
                prevalence: param
                    .ok_or_else(|| Error::Config("screening needs a prevalence".into()))?,
                initial: None,
            },
            other => return Err(Error::Config(format!("unknown system `{other}`"))),
        })
    }

    /// The component reported by studies when no other is requested: the
    /// parameter the system exists to estimate.
    pub fn primary_component(&self) -> usize {
        match self {
            SystemKind::RelativeSurvival | SystemKind::Screening { .. } => 2,
            SystemKind::CumulativeIncidence { .. } => 1,
            _ => 0,
        }
    }

    /// Meaning of each driver component, in driver order.
    pub fn driver_roles(&self) -> Vec<DriverRole> {
        let hz = |name: &str, group, cause| DriverRole::Hazard {
            name: name.to_string(),
            group,
            cause,
        };
        match self {
            SystemKind::Survival => vec![hz("A", None, 1)],
            SystemKind::RelativeSurvival | SystemKind::Screening { .. } => {
                vec![hz("A1", Some(1), 1), hz("A0", Some(0), 1)]
            }
            SystemKind::Rmst => vec![DriverRole::Time, hz("A", None, 1)],
            SystemKind::Led | SystemKind::Ler => {
                vec![DriverRole::Time, hz("A1", Some(1), 1), hz("A2", Some(2), 1)]
            }
            SystemKind::CumulativeIncidence { m } => {
                (1..=*m as u32).map(|j| hz(&format!("A{j}"), None, j)).collect()
            }
            SystemKind::MeanFrequency => vec![hz("H", None, 1), hz("D", None, 2)],
        }
    }

    /// Whether cause 1 is a recurrent event (cause 2 terminates follow-up).
    pub fn recurrent(&self) -> bool {
        matches!(self, SystemKind::MeanFrequency)
    }
}

/// What one driver component represents.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverRole {
    /// Lebesgue time, `A_t = t`.
    Time,
    /// Cumulative hazard of `cause`, within `group` when given. `name` keys
    /// the hazard in simulation scenarios.
    Hazard {
        name: String,
        group: Option<i64>,
        cause: u32,
    },
}

/// Lower bound on one state component.
///
/// `hold_rows` lists integrand rows that stay at zero while the component
/// has not yet risen above `lower` since time zero. This covers removable
/// singularities at the origin, such as a ratio of two quantities that both
/// start at zero; a later dip below the bound is still an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub index: usize,
    pub lower: f64,
    pub hold_rows: Vec<usize>,
}

/// Interface the plugin solver needs from a system.
///
/// The `*_into` methods are raw evaluations that assume `x` satisfies the
/// guards; `out` arrives with the right shape and is overwritten.
pub trait OdeSystem: Sync {
    fn state_dim(&self) -> usize;
    fn driver_dim(&self) -> usize;
    fn initial_value(&self) -> &[f64];
    fn labels(&self) -> &[String];
    fn guards(&self) -> &[Guard];
    fn integrand_into(&self, x: &[f64], out: &mut DMatrix<f64>);
    /// Jacobian of column `j` of the integrand.
    fn gradient_into(&self, x: &[f64], j: usize, out: &mut DMatrix<f64>);
}

/// One of the eight shipped systems.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSystem {
    kind: SystemKind,
    state_dim: usize,
    driver_dim: usize,
    initial: Vec<f64>,
    labels: Vec<String>,
    guards: Vec<Guard>,
    // Screening odds β/(1-β); unused elsewhere.
    odds: f64,
}

pub fn make_system(kind: SystemKind) -> Result<ParameterSystem> {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut guards = Vec::new();
    let mut odds = 0.0;
    let (initial, labels) = match &kind {
        SystemKind::Survival => (vec![1.0], strings(&["S"])),
        SystemKind::RelativeSurvival => (vec![1.0, 1.0, 1.0], strings(&["S1", "S0", "RS"])),
        SystemKind::Rmst => (vec![0.0, 1.0], strings(&["R", "S"])),
        SystemKind::Led => (vec![0.0, 1.0, 1.0], strings(&["LED", "S1", "S2"])),
        SystemKind::Ler => {
            guards.push(Guard {
                index: 4,
                lower: DEFAULT_GUARD,
                hold_rows: vec![0],
            });
            (
                vec![1.0, 1.0, 1.0, 0.0, 0.0],
                strings(&["LER", "S1", "S2", "R1", "R2"]),
            )
        }
        SystemKind::CumulativeIncidence { m } => {
            if *m == 0 {
                return Err(Error::Config("competing risks need at least one cause".into()));
            }
            let mut x0 = vec![0.0; m + 1];
            x0[0] = 1.0;
            let mut labels = vec!["S".to_string()];
            labels.extend((1..=*m).map(|j| format!("C{j}")));
            (x0, labels)
        }
        SystemKind::MeanFrequency => (vec![0.0, 1.0], strings(&["K", "S"])),
        SystemKind::Screening { prevalence, initial } => {
            if !(*prevalence > 0.0 && *prevalence < 1.0) {
                return Err(Error::Config(format!(
                    "prevalence must lie in (0, 1), got {prevalence}"
                )));
            }
            let x0 = initial.ok_or_else(|| {
                Error::Config("screening needs initial values (U0, V0, W0, X0)".into())
            })?;
            odds = prevalence / (1.0 - prevalence);
            for index in [0, 1] {
                guards.push(Guard {
                    index,
                    lower: DEFAULT_GUARD,
                    hold_rows: Vec::new(),
                });
            }
            (x0.to_vec(), strings(&["U", "V", "W", "X"]))
        }
    };
    Ok(ParameterSystem {
        state_dim: initial.len(),
        driver_dim: kind.driver_roles().len(),
        kind,
        initial,
        labels,
        guards,
        odds,
    })
}

impl ParameterSystem {
    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    /// Replaces every guard's lower bound.
    pub fn with_guard_threshold(mut self, lower: f64) -> Self {
        for g in &mut self.guards {
            g.lower = lower;
        }
        self
    }

    pub fn driver_labels(&self) -> Vec<String> {
        self.kind
            .driver_roles()
            .into_iter()
            .map(|r| match r {
                DriverRole::Time => "time".to_string(),
                DriverRole::Hazard { name, .. } => name,
            })
            .collect()
    }
}

impl OdeSystem for ParameterSystem {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    fn initial_value(&self) -> &[f64] {
        &self.initial
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn guards(&self) -> &[Guard] {
        &self.guards
    }

    fn integrand_into(&self, x: &[f64], f: &mut DMatrix<f64>) {
        f.fill(0.0);
        match self.kind {
            SystemKind::Survival => f[(0, 0)] = -x[0],
            SystemKind::RelativeSurvival => {
                f[(0, 0)] = -x[0];
                f[(1, 1)] = -x[1];
                f[(2, 0)] = -x[2];
                f[(2, 1)] = x[2];
            }
            SystemKind::Rmst | SystemKind::MeanFrequency => {
                f[(0, 0)] = x[1];
                f[(1, 1)] = -x[1];
            }
            SystemKind::Led => {
                f[(0, 0)] = x[1] - x[2];
                f[(1, 1)] = -x[1];
                f[(2, 2)] = -x[2];
            }
            SystemKind::Ler => {
                let (s1, s2, r1, r2) = (x[1], x[2], x[3], x[4]);
                f[(0, 0)] = (s1 * r2 - s2 * r1) / (r2 * r2);
                f[(1, 1)] = -s1;
                f[(2, 2)] = -s2;
                f[(3, 0)] = s1;
                f[(4, 0)] = s2;
            }
            SystemKind::CumulativeIncidence { m } => {
                for j in 0..m {
                    f[(0, j)] = -x[0];
                    f[(j + 1, j)] = x[0];
                }
            }
            SystemKind::Screening { .. } => {
                let (u, v, w, xs) = (x[0], x[1], x[2], x[3]);
                let g = self.odds;
                f[(0, 0)] = 1.0 - u;
                f[(1, 1)] = -v;
                f[(2, 0)] = w * w * (1.0 - v) * (1.0 - u) / (g * u * u);
                f[(2, 1)] = -(w * w * v * u) / (g * u * u);
                f[(3, 0)] = g * xs * xs * (1.0 - u) / v;
                f[(3, 1)] = -(g * xs * xs * (1.0 - u)) / v;
            }
        }
    }

    fn gradient_into(&self, x: &[f64], j: usize, d: &mut DMatrix<f64>) {
        d.fill(0.0);
        match (&self.kind, j) {
            (SystemKind::Survival, _) => d[(0, 0)] = -1.0,
            (SystemKind::RelativeSurvival, 0) => {
                d[(0, 0)] = -1.0;
                d[(2, 2)] = -1.0;
            }
            (SystemKind::RelativeSurvival, _) => {
                d[(1, 1)] = -1.0;
                d[(2, 2)] = 1.0;
            }
            (SystemKind::Rmst | SystemKind::MeanFrequency, 0) => d[(0, 1)] = 1.0,
            (SystemKind::Rmst | SystemKind::MeanFrequency, _) => d[(1, 1)] = -1.0,
            (SystemKind::Led, 0) => {
                d[(0, 1)] = 1.0;
                d[(0, 2)] = -1.0;
            }
            (SystemKind::Ler, 0) => {
                let (s1, s2, r1, r2) = (x[1], x[2], x[3], x[4]);
                d[(0, 1)] = 1.0 / r2;
                d[(0, 2)] = -r1 / (r2 * r2);
                d[(0, 3)] = -s2 / (r2 * r2);
                d[(0, 4)] = (2.0 * s2 * r1 - s1 * r2) / (r2 * r2 * r2);
                d[(3, 1)] = 1.0;
                d[(4, 2)] = 1.0;
            }
            (SystemKind::Led | SystemKind::Ler, j) => d[(j, j)] = -1.0,
            (SystemKind::CumulativeIncidence { .. }, j) => {
                d[(0, 0)] = -1.0;
                d[(j + 1, 0)] = 1.0;
            }
            (SystemKind::Screening { .. }, 0) => {
                let (u, v, w, xs) = (x[0], x[1], x[2], x[3]);
                let g = self.odds;
                d[(0, 0)] = -1.0;
                d[(2, 0)] = w * w * (1.0 - v) * (u - 2.0) / (g * u * u * u);
                d[(2, 1)] = w * w * (u - 1.0) / (g * u * u);
                d[(2, 2)] = 2.0 * w * (1.0 - u) * (1.0 - v) / (g * u * u);
                d[(3, 0)] = -g * xs * xs / v;
                d[(3, 1)] = -g * xs * xs * (1.0 - u) / (v * v);
                d[(3, 3)] = 2.0 * g * xs * (1.0 - u) / v;
            }
            (SystemKind::Screening { .. }, _) => {
                let (u, v, w, xs) = (x[0], x[1], x[2], x[3]);
                let g = self.odds;
                d[(1, 1)] = -1.0;
                d[(2, 0)] = w * w * v / (g * u * u);
                d[(2, 1)] = -(w * w) / (g * u);
                d[(2, 2)] = -2.0 * w * v / (g * u);
                d[(3, 0)] = g * xs * xs / v;
                d[(3, 1)] = g * xs * xs * (1.0 - u) / (v * v);
                d[(3, 3)] = -2.0 * g * xs * (1.0 - u) / v;
            }
        }
    }
}

/// Fails with a guard error if any guarded component is at or below its bound.
pub fn check_guards<S: OdeSystem + ?Sized>(sys: &S, x: &[f64], time: Option<f64>) -> Result<()> {
    for g in sys.guards() {
        let value = x[g.index];
        if !(value > g.lower) {
            return Err(Error::Guard {
                component: sys.labels()[g.index].clone(),
                value,
                lower: g.lower,
                time,
            });
        }
    }
    Ok(())
}

fn check_state<S: OdeSystem + ?Sized>(sys: &S, x: &[f64]) -> Result<()> {
    if x.len() != sys.state_dim() {
        return Err(Error::Contract(format!(
            "state has length {} but the system has dimension {}",
            x.len(),
            sys.state_dim()
        )));
    }
    check_guards(sys, x, None)
}

/// `F(x)` as an `n×k` matrix, after checking the guards.
pub fn eval_integrand<S: OdeSystem + ?Sized>(sys: &S, x: &[f64]) -> Result<DMatrix<f64>> {
    check_state(sys, x)?;
    let mut out = DMatrix::zeros(sys.state_dim(), sys.driver_dim());
    sys.integrand_into(x, &mut out);
    Ok(out)
}

/// `∇F_j(x)`, the `n×n` Jacobian of column `j` (zero-based) of `F`.
pub fn eval_gradient<S: OdeSystem + ?Sized>(sys: &S, x: &[f64], j: usize) -> Result<DMatrix<f64>> {
    check_state(sys, x)?;
    if j >= sys.driver_dim() {
        return Err(Error::Contract(format!(
            "driver index {j} out of range for driver dimension {}",
            sys.driver_dim()
        )));
    }
    let mut out = DMatrix::zeros(sys.state_dim(), sys.state_dim());
    sys.gradient_into(x, j, &mut out);
    Ok(out)
}
