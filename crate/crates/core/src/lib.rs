//! Estimating survival-analysis parameters by transforming cumulative
//! hazards.
//!
//! Many parameters of interest solve an ordinary differential equation
//! driven by cumulative hazards, `dX_t = F(X_{t-}) dA_t`. Substituting a
//! step-function estimate `Â` for `A` gives a plugin estimator `X̂` that is
//! computed by a simple recursion over the jump times of `Â`, together with
//! a recursion for its covariance.
//!
//! ```
//! use hazard_transform::events::{parse_dataset, ColumnMap};
//! use hazard_transform::hazards::nelson_aalen;
//! use hazard_transform::plugin::{confidence_band, fit};
//! use hazard_transform::systems::{make_system, SystemKind};
//!
//! let csv = "id,entry,exit,event\n1,0,2,1\n2,0,3,0\n3,0,4,1\n4,0,5,1\n";
//! let data = parse_dataset(csv.as_bytes(), &ColumnMap::default(), None)?;
//! let (driver, meta) = nelson_aalen(&data, 1, None)?;
//! let survival = make_system(SystemKind::Survival)?;
//! let estimate = fit(&survival, &driver, &meta, None, None)?;
//! assert!((estimate.state.eval(4.0)[0] - 0.75 * 0.5).abs() < 1e-12);
//! let band = confidence_band(&estimate, 0.95)?;
//! assert!(band.lower[1][0] <= 0.75 && 0.75 <= band.upper[1][0]);
//! # Ok::<(), hazard_transform::Error>(())
//! ```
//!
//! Modules, from the bottom up:
//!
//! * [`events`] reads and validates event-history data;
//! * [`hazards`] estimates cumulative hazards (Nelson–Aalen, Aalen's
//!   additive model) and stacks them into drivers;
//! * [`systems`] defines the parameter systems and their Jacobians;
//! * [`plugin`] solves the estimator and covariance recursions;
//! * [`simlab`] simulates data and runs convergence and coverage studies;
//! * [`cli`] is the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod events;
pub mod hazards;
pub mod io;
pub mod path;
pub mod plugin;
pub mod simlab;
pub mod systems;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/plugin.md")]
    mod plugin {}
    #[doc = include_str!("../../../book/src/drivers.md")]
    mod drivers {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/variance.md")]
    mod variance {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
pub use path::StepPath;
