//! Run configuration: flags over config file over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use decsolve::metrics::ReportFormat;
use decsolve::{EvoParams, Family, ProblemSpec, SelectionMethod, Topology};

use crate::UsageError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SLAVES: usize = 5;

/// Everything needed to reproduce a run. Reports embed it verbatim, and
/// `--config` accepts the same document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: EvoParams,
    pub problem: ProblemSpec,
    pub topology: Topology,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: EvoParams::default(),
            problem: ProblemSpec::new(Family::P1, 100, DEFAULT_SEED),
            topology: Topology::Single,
            seed: DEFAULT_SEED,
            output: None,
            format: ReportFormat::Csv,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError::new("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError::new("--config", format!("{}: {e}", path.display())))
    }

    /// Configs may be embedded in a report as a JSON value.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Flags shared by every subcommand that runs the solver.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file (same schema as the config embedded in reports).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Problem family: p1..p6, or file.
    #[arg(long, value_name = "FAMILY")]
    pub problem: Option<Family>,
    /// Problem file to load (implies --problem file).
    #[arg(long, value_name = "PATH")]
    pub problem_file: Option<PathBuf>,
    /// System dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed for problem generation (defaults to --seed).
    #[arg(long)]
    pub problem_seed: Option<u64>,
    /// Rescale diagonals to make the system strictly dominant.
    #[arg(long)]
    pub dominant: bool,
    /// Population size N.
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Generation limit T.
    #[arg(long)]
    pub max_gen: Option<u64>,
    #[arg(long)]
    pub omega_lower: Option<f64>,
    #[arg(long)]
    pub omega_upper: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long)]
    pub p_min: Option<f64>,
    /// bas or ts.
    #[arg(long)]
    pub selection: Option<SelectionMethod>,
    #[arg(long)]
    pub init_clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(short, long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// csv or json (defaults to json for a .json output, else csv).
    #[arg(long)]
    pub format: Option<ReportFormat>,
    /// Run label in the report.
    #[arg(long)]
    pub label: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    /// Layers these flags over the config file (or the defaults).
    pub fn resolve(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let p = &mut cfg.params;
        set(&mut p.pop_size, self.pop);
        set(&mut p.epsilon, self.epsilon);
        set(&mut p.max_gen, self.max_gen);
        set(&mut p.omega_lower, self.omega_lower);
        set(&mut p.omega_upper, self.omega_upper);
        set(&mut p.gamma, self.gamma);
        set(&mut p.lambda, self.lambda);
        set(&mut p.p_max, self.p_max);
        set(&mut p.p_min, self.p_min);
        set(&mut p.selection, self.selection);
        set(&mut p.init_clip, self.init_clip);

        if let Some(seed) = self.seed {
            cfg.seed = seed;
            if self.problem_seed.is_none() {
                cfg.problem.seed = seed;
            }
        }
        let pr = &mut cfg.problem;
        set(&mut pr.family, self.problem);
        set(&mut pr.n, self.n);
        set(&mut pr.seed, self.problem_seed);
        if self.dominant {
            pr.ensure_dominance = true;
        }
        if let Some(path) = &self.problem_file {
            if self.problem.is_some_and(|f| f != Family::File) {
                return Err(UsageError::new(
                    "--problem-file",
                    "conflicts with a generated --problem family",
                ));
            }
            pr.family = Family::File;
            pr.path = Some(path.clone());
        }
        if pr.family == Family::File && pr.path.is_none() {
            return Err(UsageError::new("--problem", "family `file` needs --problem-file"));
        }

        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        match self.format {
            Some(f) => cfg.format = f,
            None if self.output.is_some() => {
                cfg.format = format_for(self.output.as_deref());
            }
            None => {}
        }
        Ok(cfg)
    }
}

/// Report format implied by a path's extension.
pub fn format_for(path: Option<&Path>) -> ReportFormat {
    match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => ReportFormat::Json,
        _ => ReportFormat::Csv,
    }
}

/// Names the flag behind an invalid parameter.
pub fn validate(cfg: &RunConfig) -> Result<(), UsageError> {
    let p = &cfg.params;
    let fail = |flag: &str, e: decsolve::evolution::EvoError| Err(UsageError::new(flag, e.to_string()));
    if let Err(e) = p.validate() {
        let flag = if p.pop_size < 2 || !p.pop_size.is_multiple_of(2) {
            "--pop"
        } else if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            "--epsilon"
        } else if !(p.omega_lower < p.omega_upper) || !p.omega_lower.is_finite() || !p.omega_upper.is_finite() {
            "--omega-lower/--omega-upper"
        } else if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            "--gamma"
        } else if p.selection == SelectionMethod::Ts && !(p.lambda > 10.0 && p.lambda.is_finite()) {
            "--lambda"
        } else if !(p.init_clip > 0.0 && p.init_clip.is_finite()) {
            "--init-clip"
        } else if !p.p_max.is_finite() || !p.p_min.is_finite() {
            "--p-max/--p-min"
        } else {
            "--max-gen"
        };
        return fail(flag, e);
    }
    if cfg.problem.family != Family::File && cfg.problem.n < 2 {
        return Err(UsageError::new("--n", format!("dimension {} must be at least 2", cfg.problem.n)));
    }
    if let Err(e) = cfg.topology.validate(p.pop_size) {
        return Err(UsageError::new("--slaves", format!("{e} (--pop {})", p.pop_size)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"params":{"pop_size":20,"gamma":3.0},"seed":9}"#).unwrap();
        let args = RunArgs {
            config: Some(path),
            pop: Some(10),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.params.pop_size, 10);
        assert_eq!(cfg.params.gamma, 3.0);
        assert_eq!(cfg.params.max_gen, 10_000);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.problem.n, 100);
    }

    #[test]
    fn config_round_trips_through_json() {
        let args = RunArgs {
            selection: Some(SelectionMethod::Ts),
            seed: Some(5),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        let back: RunConfig = serde_json::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.problem.seed, 5);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"popsize":20}"#).unwrap();
        let err = RunArgs {
            config: Some(path),
            ..Default::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(err.flag, "--config");
    }

    #[test]
    fn validation_names_the_flag() {
        let mut cfg = RunConfig::default();
        cfg.params.pop_size = 7;
        assert_eq!(validate(&cfg).unwrap_err().flag, "--pop");

        let mut cfg = RunConfig::default();
        cfg.params.pop_size = 10;
        cfg.topology = Topology::Virtual { slaves: 3 };
        assert_eq!(validate(&cfg).unwrap_err().flag, "--slaves");
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(format_for(Some(Path::new("r.JSON"))), ReportFormat::Json);
        assert_eq!(format_for(Some(Path::new("r.csv"))), ReportFormat::Csv);
        assert_eq!(format_for(None), ReportFormat::Csv);
    }
}
