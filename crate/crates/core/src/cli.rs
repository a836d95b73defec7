//! The `hazard-transform` command line.
//!
//! ```text
//! hazard-transform <estimate|simulate|converge|coverage> [--config FILE] [--seed N] [--jobs K] [--out DIR]
//! ```
//!
//! Settings come from an optional JSON config file and are overridden by
//! flags. Every failure is reported as one JSON object on standard error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::events::{parse_dataset, write_dataset, ColumnMap, EventDataset};
use crate::hazards::{ComponentSource, DriverRecipe};
use crate::io::{write_fit_csv, write_path_csv, write_study_csv, FitMeta, PathMeta};
use crate::plugin::{confidence_band, fit, ConfidenceBand};
use crate::simlab::{
    coverage_study, l2_convergence, recipe_for, simulate_dataset, HazardSpec, L2Target, Scenario, StudyResult,
};
use crate::systems::{make_system, DriverRole, SystemKind};

#[derive(Debug, Parser)]
#[command(name = "hazard-transform", version, about = "Plugin estimators for hazard-driven parameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a parameter system to a dataset and write the estimate, its
    /// covariance and a pointwise band.
    Estimate(RunArgs),
    /// Simulate a dataset from known hazards.
    Simulate(RunArgs),
    /// Run the L² convergence study over a list of sample sizes.
    Converge(RunArgs),
    /// Run the band coverage study.
    Coverage(RunArgs),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; required by the study commands.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for study replications.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// System name, e.g. `survival`, `rmst`, `ler`, `cumulative_incidence`.
    #[arg(long)]
    pub system: Option<String>,
    /// Numeric system parameter: causes for `cumulative_incidence`,
    /// prevalence for `screening`.
    #[arg(long)]
    pub param: Option<f64>,
    /// Input dataset (CSV).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Confidence level of the bands.
    #[arg(long)]
    pub level: Option<f64>,
    /// True hazard, as `SPEC` or `NAME=SPEC` with SPEC one of
    /// `constant:R`, `linear:A,B`, `table:T:R,...`. Repeatable.
    #[arg(long = "hazard")]
    pub hazards: Vec<String>,
    /// Subjects per group.
    #[arg(long)]
    pub n: Option<usize>,
    /// Replications per sample size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sample sizes for the convergence study.
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Vec<usize>,
    /// Evaluation times for the coverage study.
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    /// Data group labels feeding the group hazards, in driver order.
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<i64>,
    /// Step of the time grid for systems integrating over time.
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Convergence target: `estimate` or `variance`.
    #[arg(long)]
    pub target: Option<String>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Option<SystemKind>,
    pub data: Option<PathBuf>,
    pub columns: Option<ColumnMap>,
    pub horizon: Option<f64>,
    pub recipe: Option<DriverRecipe>,
    pub grid_step: Option<f64>,
    pub level: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<Vec<f64>>>,
    pub scenario: Option<Scenario>,
    pub target: Option<L2Target>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }
}

/// The JSON object printed on standard error for `err`.
pub fn error_json(err: &Error) -> serde_json::Value {
    let mut v = json!({ "error": err.kind(), "message": err.to_string() });
    let extra = match err {
        Error::Parse { line, .. } => json!({ "line": line }),
        Error::Validation { subjects, .. } => json!({ "subjects": subjects }),
        Error::Guard {
            component,
            value,
            lower,
            time,
        } => json!({ "component": component, "value": value, "lower": lower, "time": time }),
        Error::DesignNeverFullRank { time } => json!({ "time": time }),
        Error::NegativeVariance { state, times } => json!({ "state": state, "times": times }),
        Error::AllReplicationsFailed { failed, .. } => json!({ "failed": failed }),
        _ => json!({}),
    };
    if let (Some(obj), Some(more)) = (v.as_object_mut(), extra.as_object()) {
        obj.extend(more.clone());
    }
    v
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Converge(args) => cmd_study(&args, Study::Converge),
        Command::Coverage(args) => cmd_study(&args, Study::Coverage),
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    args.config.as_deref().map_or(Ok(RunConfig::default()), RunConfig::load)
}

fn out_dir(args: &RunArgs, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn system_from(args: &RunArgs, fallback: Option<&SystemKind>) -> Result<SystemKind> {
    match (&args.system, fallback) {
        (Some(name), _) => SystemKind::from_name(name, args.param),
        (None, Some(kind)) => Ok(kind.clone()),
        (None, None) => Err(Error::Config("no system given (use --system or the config file)".into())),
    }
}

fn check_level(level: f64) -> Result<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(Error::Config(format!("level must lie in (0, 1), got {level}")))
    }
}

fn group_roles(kind: &SystemKind) -> Vec<(String, i64)> {
    kind.driver_roles()
        .into_iter()
        .filter_map(|r| match r {
            DriverRole::Hazard {
                name,
                group: Some(g),
                ..
            } => Some((name, g)),
            _ => None,
        })
        .collect()
}

/// The default recipe for `kind`, with group labels replaced by `groups`
/// when given, checked against the groups present in `ds`.
fn default_recipe(kind: &SystemKind, ds: &EventDataset, grid_step: f64, groups: &[i64]) -> Result<DriverRecipe> {
    let mut recipe = recipe_for(kind, grid_step);
    let roles = group_roles(kind);
    if !groups.is_empty() {
        if groups.len() != roles.len() {
            return Err(Error::Config(format!(
                "system {} takes {} group label(s), got {}",
                kind.name(),
                roles.len(),
                groups.len()
            )));
        }
        let mut next = groups.iter();
        for c in &mut recipe.components {
            if let ComponentSource::NelsonAalen { group: g @ Some(_), .. } = c {
                *g = next.next().copied();
            }
        }
    }
    let wanted: Vec<i64> = recipe
        .components
        .iter()
        .filter_map(|c| match c {
            ComponentSource::NelsonAalen { group, .. } => *group,
            _ => None,
        })
        .collect();
    let present = ds.groups();
    let missing: Vec<String> = roles
        .iter()
        .zip(&wanted)
        .filter(|(_, g)| !present.contains(g))
        .map(|((name, _), g)| format!("{name} (group {g})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "system {} needs a hazard for each group, but the data has no subjects for {}; \
             groups present: {present:?} (map them with --groups or a recipe)",
            kind.name(),
            missing.join(", ")
        )));
    }
    Ok(recipe)
}

fn cmd_estimate(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let kind = system_from(args, cfg.system.as_ref())?;
    let level = check_level(args.level.or(cfg.level).unwrap_or(0.95))?;
    let data = args
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Config("estimate needs a dataset (--data)".into()))?;
    if !data.is_file() {
        return Err(Error::Config(format!("data file {} does not exist", data.display())));
    }
    let columns = cfg.columns.clone().unwrap_or_default();
    let ds = parse_dataset(File::open(&data)?, &columns, cfg.horizon)?;
    if ds.n_subjects() == 0 {
        return Err(Error::Domain("no subjects".into()));
    }
    let sys = make_system(kind.clone())?;
    let grid_step = args.grid_step.or(cfg.grid_step).unwrap_or(ds.horizon() / 1e4);
    let recipe = match &cfg.recipe {
        Some(r) => r.clone(),
        None => default_recipe(&kind, &ds, grid_step, &args.groups)?,
    };
    if recipe.components.len() != kind.driver_roles().len() {
        return Err(Error::Config(format!(
            "system {} needs {} driver components, the recipe has {}",
            kind.name(),
            kind.driver_roles().len(),
            recipe.components.len()
        )));
    }
    let (driver, meta) = recipe.build(&ds)?;
    let v0 = match &cfg.v0 {
        Some(rows) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::Config("v0 must be a square matrix".into()));
            }
            Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
        None => None,
    };
    let result = fit(&sys, &driver, &meta, cfg.x0.as_deref(), v0)?;
    let band = confidence_band(&result, level)?;

    let dir = out_dir(args, &cfg)?;
    write_fit_csv(&result, Some(&band), BufWriter::new(File::create(dir.join("fit.csv"))?))?;
    write_band_csv(&band, BufWriter::new(File::create(dir.join("band.csv"))?))?;
    write_json(
        &dir.join("fit.json"),
        &FitMeta {
            system: kind.name().to_string(),
            labels: result.labels.clone(),
            scale_n: result.scale_n,
            level: Some(level),
            driver: meta.clone(),
            jumps: driver.len(),
        },
    )?;
    write_path_csv(&driver, &meta.labels, BufWriter::new(File::create(dir.join("driver.csv"))?))?;
    write_json(
        &dir.join("driver.json"),
        &PathMeta {
            origin: driver.origin().to_vec(),
            driver: meta,
        },
    )
}

fn write_band_csv<W: std::io::Write>(band: &ConfidenceBand, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let n = band.lower.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    for i in 1..=n {
        header.push(format!("lo_{i}"));
        header.push(format!("hi_{i}"));
    }
    header.push("level".into());
    w.write_record(&header)?;
    for (k, t) in band.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for i in 0..n {
            row.push(band.lower[k][i].to_string());
            row.push(band.upper[k][i].to_string());
        }
        row.push(band.level.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The scenario from the config, with flags applied on top.
fn scenario_from(args: &RunArgs, cfg: &RunConfig) -> Result<Scenario> {
    let mut sc = match (&cfg.scenario, &args.system) {
        (Some(sc), None) => sc.clone(),
        (Some(sc), Some(_)) => Scenario {
            system: system_from(args, None)?,
            ..sc.clone()
        },
        (None, _) => Scenario::new(system_from(args, cfg.system.as_ref())?, []),
    };
    let role_names: Vec<String> = sc
        .system
        .driver_roles()
        .into_iter()
        .filter_map(|r| match r {
            DriverRole::Hazard { name, .. } => Some(name),
            DriverRole::Time => None,
        })
        .collect();
    for (i, raw) in args.hazards.iter().enumerate() {
        let (name, spec) = match raw.split_once('=') {
            Some((name, spec)) => (name.trim().to_string(), spec),
            None => (
                role_names
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("too many hazards for system {}", sc.system.name())))?,
                raw.as_str(),
            ),
        };
        sc.hazards.insert(name, spec.parse::<HazardSpec>()?);
    }
    if let Some(n) = args.n {
        sc.n = n;
    }
    if let Some(k) = args.k {
        sc.k_replications = k;
    }
    if !args.n_list.is_empty() {
        sc.n_list = args.n_list.clone();
    }
    if !args.times.is_empty() {
        sc.t_grid = args.times.clone();
    }
    if let Some(step) = args.grid_step.or(cfg.grid_step) {
        sc.grid_step = Some(step);
    }
    if let Some(level) = args.level.or(cfg.level) {
        sc.level = check_level(level)?;
    }
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let sc = scenario_from(args, &cfg)?;
    let ds = simulate_dataset(&sc)?;
    let dir = out_dir(args, &cfg)?;
    write_dataset(&ds, BufWriter::new(File::create(dir.join("data.csv"))?))?;
    write_json(&dir.join("scenario.json"), &sc)
}

#[derive(Clone, Copy)]
enum Study {
    Converge,
    Coverage,
}

fn cmd_study(args: &RunArgs, study: Study) -> Result<()> {
    let cfg = load_config(args)?;
    if args.seed.is_none() {
        return Err(Error::Config("study commands need an explicit --seed".into()));
    }
    let sc = scenario_from(args, &cfg)?;
    let target = match args.target.as_deref() {
        None => cfg.target.unwrap_or(L2Target::Estimate),
        Some("estimate") => L2Target::Estimate,
        Some("variance") => L2Target::Variance,
        Some(other) => return Err(Error::Config(format!("unknown target `{other}`"))),
    };
    let work = || -> Result<StudyResult> {
        match study {
            Study::Converge => l2_convergence(&sc, &sc.n_list, target),
            Study::Coverage => coverage_study(&sc, sc.level, &sc.t_grid),
        }
    };
    let result = match args.jobs {
        Some(0) => return Err(Error::Config("--jobs must be at least 1".into())),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let stem = match study {
        Study::Converge => "convergence",
        Study::Coverage => "coverage",
    };
    let dir = out_dir(args, &cfg)?;
    write_study_csv(&result, BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
    write_json(&dir.join(format!("{stem}.json")), &json!({ "scenario": sc, "result": result }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_objects_carry_details() {
        let v = error_json(&Error::Guard {
            component: "R2".into(),
            value: 0.0,
            lower: 1e-8,
            time: Some(0.5),
        });
        assert_eq!(v["error"], "guard");
        assert_eq!(v["component"], "R2");
        assert_eq!(v["time"], 0.5);
        let v = error_json(&Error::Domain("no subjects".into()));
        assert!(v["message"].as_str().unwrap().contains("no subjects"));
    }

    #[test]
    fn hazard_flags_fill_roles_in_order() {
        let args = RunArgs {
            system: Some("relative_survival".into()),
            hazards: vec!["constant:1".into(), "A0=linear:0.5,1".into()],
            ..RunArgs::default()
        };
        let sc = scenario_from(&args, &RunConfig::default()).unwrap();
        assert_eq!(sc.hazards["A1"], HazardSpec::Constant { rate: 1.0 });
        assert_eq!(
            sc.hazards["A0"],
            HazardSpec::Linear {
                intercept: 0.5,
                slope: 1.0
            }
        );
    }

    #[test]
    fn study_without_seed_is_rejected() {
        let args = RunArgs {
            system: Some("survival".into()),
            hazards: vec!["constant:1".into()],
            n_list: vec![10],
            ..RunArgs::default()
        };
        assert!(matches!(cmd_study(&args, Study::Converge), Err(Error::Config(_))));
    }
}
