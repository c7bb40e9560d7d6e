//! Run configuration: command-line flags and an optional TOML file with the
//! same keys. Values in the file take precedence over flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use prmix_core::bench::{default_checkpoints, misspecified_scenario_suite, scenario, Scenario};
use prmix_core::search::{AnnealConfig, GridSpec, EXHAUSTIVE_MAX_POINTS};
use prmix_core::{Kernel, SupportSet, WeightSchedule};

use crate::dataset::{self, DataFormat, Dataset};
use crate::error::{ExitKind, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fit,
    Select,
    BenchRate,
    Diagnose,
    Simulate,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Select => "select",
            Command::BenchRate => "bench-rate",
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
            Command::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    Exhaustive,
    Anneal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand this configuration belongs to (config files only).
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,

    /// Observation file, or builtin:galaxies / builtin:defaults.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,

    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DataFormat>,

    /// Drop the open-ended top bin of builtin:defaults instead of recording it at 16.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_censored_bin: Option<bool>,

    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,

    /// Gaussian kernel standard deviation.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,

    /// "lo:hi:step", "linspace:lo:hi:count", or a comma-separated point list.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,

    /// Points forced into the grid.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include: Option<Vec<f64>>,

    /// Weight exponent: w_i = (i+1)^-gamma, 0.5 < gamma < 1. Default 0.9.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,

    /// Seed for annealing, data orderings and simulation. Default 0.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SearchMode>,

    /// Annealing start temperature (default: interquartile range of random objectives).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,

    /// Annealing cooling ratio.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,

    /// Annealing proposals per temperature.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,

    /// Annealing cap on distinct subsets evaluated.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,

    /// Number of data orderings averaged over (the first is the file order).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,

    /// Synthetic scenario: a, b, c (or "all" for bench-rate).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,

    /// Weight exponents swept by bench-rate.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,

    /// Seeds per bench-rate cell.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,

    /// Sample sizes at which bench-rate records errors.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,

    /// Sample size for simulate and diagnose.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    /// Directory of an earlier run, for plot.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).context("invalid configuration file")
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// `self` with every field set in `file` replaced by the file's value.
    pub fn overridden_by(mut self, file: &RunConfig) -> RunConfig {
        overlay!(self, file;
            command, data, format, drop_censored_bin, kernel, sigma, grid, include, gamma, seed,
            mode, t0, rho, steps, cap, permutations, scenario, gammas, seeds, checkpoints, n,
            input, out,
        );
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// A grid string: `lo:hi:step`, `linspace:lo:hi:count` or `p1,p2,...`.
/// Returns the bounds and the points.
pub fn parse_grid(spec: &str) -> Result<(f64, f64, Vec<f64>)> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| anyhow!("grid {spec:?}: cannot parse {s:?} as a number"))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["linspace", lo, hi, count] => {
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| anyhow!("grid {spec:?}: cannot parse count {count:?}"))?;
            let g = GridSpec::linspace(num(lo)?, num(hi)?, count)?;
            Ok((g.lower(), g.upper(), g.support().points().to_vec()))
        }
        [lo, hi, step] => {
            let g = GridSpec::equispaced(num(lo)?, num(hi)?, num(step)?)?;
            Ok((g.lower(), g.upper(), g.support().points().to_vec()))
        }
        [list] => {
            let points = list.split(',').map(num).collect::<Result<Vec<f64>>>()?;
            let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((lo, hi, points))
        }
        _ => bail!("grid {spec:?}: expected lo:hi:step, linspace:lo:hi:count or a point list"),
    }
}

/// First checkpoint of the slope window: `n >= 1000` when at least two
/// checkpoints reach it, otherwise the last three checkpoints.
pub fn slope_window_start(checkpoints: &[usize]) -> usize {
    if checkpoints.iter().filter(|&&n| n >= 1000).count() >= 2 {
        1000
    } else {
        checkpoints[checkpoints.len().saturating_sub(3)]
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub data: Dataset,
    pub kernel: Kernel,
    pub schedule: WeightSchedule,
    pub permutations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum Job {
    Fit {
        model: ModelSpec,
        support: SupportSet,
    },
    Select {
        model: ModelSpec,
        grid: GridSpec,
        mode: SearchMode,
        anneal: AnnealConfig,
    },
    BenchRate {
        scenarios: Vec<Scenario>,
        gammas: Vec<f64>,
        seeds: usize,
        checkpoints: Vec<usize>,
        fit_from: usize,
        base_seed: u64,
    },
    Diagnose {
        scenario: Scenario,
        schedule: WeightSchedule,
        n: usize,
        seed: u64,
    },
    Simulate {
        scenario: Scenario,
        n: usize,
        seed: u64,
    },
    Plot {
        input: PathBuf,
    },
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(msg.into()).context(ExitKind::Config)
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, cmd: Command) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| config_err(format!("`{}` needs --{flag}", cmd.name())))
}

fn single_scenario(name: Option<&str>) -> Result<Scenario> {
    let name = name.unwrap_or("a");
    scenario(name).ok_or_else(|| config_err(format!("unknown scenario {name:?}; expected a, b or c")))
}

/// Checks a merged configuration for `cmd`, loads its data, and returns the
/// job together with the configuration echo (defaults filled in, data paths
/// absolute, output directory omitted).
pub fn resolve(cmd: Command, cfg: &RunConfig, base_dir: &Path) -> Result<(Job, RunConfig)> {
    if let Some(c) = cfg.command {
        if c != cmd {
            return Err(config_err(format!(
                "configuration is for `{}` but the command is `{}`",
                c.name(),
                cmd.name()
            )));
        }
    }
    let mut echo = cfg.clone();
    echo.command = Some(cmd);
    echo.out = None;
    let seed = cfg.seed.unwrap_or(0);
    echo.seed = Some(seed);

    let job = match cmd {
        Command::Fit | Command::Select => {
            let model = model_spec(cmd, cfg, &mut echo, base_dir, seed)?;
            let (lo, hi, mut points) = parse_grid(require(&cfg.grid, "grid", cmd)?).tag(ExitKind::Config)?;
            let include = cfg.include.clone().unwrap_or_default();
            match cmd {
                Command::Fit => {
                    points.extend_from_slice(&include);
                    let support = SupportSet::from_unsorted(points).tag(ExitKind::Config)?;
                    support.validate_for(&model.kernel).tag(ExitKind::Config)?;
                    Job::Fit { model, support }
                }
                _ => {
                    let grid = GridSpec::new(lo, hi, points)
                        .and_then(|g| g.with_included(&include))
                        .tag(ExitKind::Config)?;
                    grid.support().validate_for(&model.kernel).tag(ExitKind::Config)?;
                    let mode = cfg.mode.unwrap_or(SearchMode::Anneal);
                    echo.mode = Some(mode);
                    if mode == SearchMode::Exhaustive && grid.len() > EXHAUSTIVE_MAX_POINTS {
                        return Err(config_err(format!(
                            "exhaustive search is limited to {EXHAUSTIVE_MAX_POINTS} grid points; this grid has {}",
                            grid.len()
                        )));
                    }
                    let defaults = AnnealConfig::default();
                    let anneal = AnnealConfig {
                        initial_temperature: cfg.t0,
                        cooling: cfg.rho.unwrap_or(defaults.cooling),
                        steps_per_temperature: cfg.steps.unwrap_or(defaults.steps_per_temperature),
                        max_evaluations: cfg.cap.unwrap_or(defaults.max_evaluations),
                        seed,
                        ..defaults
                    };
                    if mode == SearchMode::Anneal {
                        anneal.validate(grid.len()).tag(ExitKind::Config)?;
                        echo.rho = Some(anneal.cooling);
                        echo.steps = Some(anneal.steps_per_temperature);
                        echo.cap = Some(anneal.max_evaluations);
                    }
                    Job::Select {
                        model,
                        grid,
                        mode,
                        anneal,
                    }
                }
            }
        }
        Command::BenchRate => {
            let scenarios = match cfg.scenario.as_deref().unwrap_or("all") {
                "all" => misspecified_scenario_suite(),
                name => vec![single_scenario(Some(name))?],
            };
            echo.scenario = Some(cfg.scenario.clone().unwrap_or_else(|| "all".into()));
            let gammas = cfg.gammas.clone().unwrap_or_else(|| vec![0.6, 0.75, 0.9]);
            for &g in &gammas {
                WeightSchedule::new(g).tag(ExitKind::Config)?;
            }
            if gammas.is_empty() {
                return Err(config_err("bench-rate needs at least one gamma"));
            }
            let seeds = cfg.seeds.unwrap_or(20);
            let checkpoints = cfg.checkpoints.clone().unwrap_or_else(default_checkpoints);
            echo.gammas = Some(gammas.clone());
            echo.seeds = Some(seeds);
            echo.checkpoints = Some(checkpoints.clone());
            if checkpoints.is_empty() {
                return Err(config_err("bench-rate needs a nonempty checkpoint list"));
            }
            let fit_from = slope_window_start(&checkpoints);
            let probe = prmix_core::bench::RateExperiment {
                scenario: scenarios[0].clone(),
                gammas: gammas.clone(),
                checkpoints: checkpoints.clone(),
                seeds,
                base_seed: seed,
                fit_from,
            };
            probe.validate().tag(ExitKind::Config)?;
            Job::BenchRate {
                scenarios,
                gammas,
                seeds,
                checkpoints,
                fit_from,
                base_seed: seed,
            }
        }
        Command::Diagnose => {
            let scenario = single_scenario(cfg.scenario.as_deref())?;
            echo.scenario = Some(scenario.name.clone());
            let gamma = cfg.gamma.unwrap_or(WeightSchedule::DEFAULT_GAMMA);
            echo.gamma = Some(gamma);
            let n = cfg.n.unwrap_or(20_000);
            if n < 100 {
                return Err(config_err("diagnose needs --n of at least 100"));
            }
            echo.n = Some(n);
            Job::Diagnose {
                scenario,
                schedule: WeightSchedule::new(gamma).tag(ExitKind::Config)?,
                n,
                seed,
            }
        }
        Command::Simulate => {
            let scenario = single_scenario(cfg.scenario.as_deref())?;
            echo.scenario = Some(scenario.name.clone());
            let n = *require(&cfg.n, "n", cmd)?;
            if n == 0 {
                return Err(config_err("--n must be positive"));
            }
            Job::Simulate { scenario, n, seed }
        }
        Command::Plot => {
            let input = absolute(require(&cfg.input, "input", cmd)?, base_dir);
            echo.input = Some(input.clone());
            Job::Plot { input }
        }
    };
    Ok((job, echo))
}

fn absolute(p: &Path, base: &Path) -> PathBuf {
    let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    p.canonicalize().unwrap_or(p)
}

fn model_spec(cmd: Command, cfg: &RunConfig, echo: &mut RunConfig, base: &Path, seed: u64) -> Result<ModelSpec> {
    let kernel = match require(&cfg.kernel, "kernel", cmd)? {
        KernelName::Gaussian => {
            let sigma = cfg.sigma.unwrap_or(1.0);
            echo.sigma = Some(sigma);
            Kernel::gaussian(sigma).tag(ExitKind::Config)?
        }
        KernelName::Poisson => {
            if cfg.sigma.is_some() {
                return Err(config_err("--sigma applies only to the gaussian kernel"));
            }
            Kernel::poisson()
        }
    };
    let gamma = cfg.gamma.unwrap_or(WeightSchedule::DEFAULT_GAMMA);
    echo.gamma = Some(gamma);
    let schedule = WeightSchedule::new(gamma).tag(ExitKind::Config)?;
    let permutations = cfg.permutations.unwrap_or(1);
    if permutations == 0 {
        return Err(config_err("--permutations must be at least 1"));
    }
    echo.permutations = Some(permutations);

    let source = require(&cfg.data, "data", cmd)?;
    let drop_bin = cfg.drop_censored_bin.unwrap_or(false);
    let data = if let Some(name) = source.strip_prefix("builtin:") {
        let format =
            dataset::builtin_format(name).ok_or_else(|| config_err(format!("unknown builtin dataset {name:?}")))?;
        if cfg.format.is_some_and(|f| f != format) {
            return Err(config_err(format!("builtin:{name} is in {format:?} form")));
        }
        if drop_bin && name != "defaults" {
            return Err(config_err("--drop-censored-bin applies only to builtin:defaults"));
        }
        echo.format = Some(format);
        dataset::builtin(name, drop_bin).tag(ExitKind::Data)?
    } else {
        if drop_bin {
            return Err(config_err("--drop-censored-bin applies only to builtin:defaults"));
        }
        let format = cfg.format.unwrap_or(DataFormat::Values);
        echo.format = Some(format);
        let path = absolute(Path::new(source), base);
        echo.data = Some(path.display().to_string());
        dataset::ingest(&path, format).tag(ExitKind::Data)?
    };
    for (i, &y) in data.observations.iter().enumerate() {
        kernel
            .check_observation(y)
            .with_context(|| format!("observation {} of {}", i + 1, data.provenance))
            .tag(ExitKind::Data)?;
    }
    Ok(ModelSpec {
        data,
        kernel,
        schedule,
        permutations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let (lo, hi, p) = parse_grid("5.0:40.0:0.5").unwrap();
        assert_eq!((lo, hi, p.len()), (5.0, 40.0, 71));
        let (_, _, p) = parse_grid("linspace:0:30:100").unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p[99], 30.0);
        let (lo, hi, p) = parse_grid("4, 1,6").unwrap();
        assert_eq!((lo, hi), (1.0, 6.0));
        assert_eq!(p, vec![4.0, 1.0, 6.0]);
        let (_, _, p) = parse_grid("3").unwrap();
        assert_eq!(p, vec![3.0]);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("0:1:-1").is_err());
        assert_eq!(slope_window_start(&[100, 316, 1000, 3162, 10000]), 1000);
        assert_eq!(slope_window_start(&[10, 20, 40, 80, 160]), 40);
    }

    #[test]
    fn file_overrides_flags() {
        let flags = RunConfig {
            gamma: Some(0.7),
            seed: Some(3),
            grid: Some("1,2".into()),
            ..Default::default()
        };
        let file = RunConfig::from_toml("gamma = 0.8\ngrid = \"1,2,3\"\n").unwrap();
        let merged = flags.overridden_by(&file);
        assert_eq!(merged.gamma, Some(0.8));
        assert_eq!(merged.seed, Some(3));
        assert_eq!(merged.grid.as_deref(), Some("1,2,3"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("gama = 0.8\n").is_err());
        assert!(RunConfig::from_toml("mode = \"sideways\"\n").is_err());
    }

    #[test]
    fn toml_echo_round_trips() {
        let cfg = RunConfig {
            command: Some(Command::Select),
            data: Some("builtin:galaxies".into()),
            kernel: Some(KernelName::Gaussian),
            sigma: Some(1.0),
            include: Some(vec![0.0, 0.1]),
            gamma: Some(0.9),
            mode: Some(SearchMode::Anneal),
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    fn here() -> PathBuf {
        std::env::current_dir().unwrap()
    }

    #[test]
    fn validation_classes() {
        let base = RunConfig {
            data: Some("builtin:defaults".into()),
            kernel: Some(KernelName::Poisson),
            grid: Some("linspace:0:30:100".into()),
            ..Default::default()
        };
        let (job, echo) = resolve(Command::Select, &base, &here()).unwrap();
        assert!(matches!(
            job,
            Job::Select {
                mode: SearchMode::Anneal,
                ..
            }
        ));
        assert_eq!(echo.gamma, Some(0.9));
        assert_eq!(echo.permutations, Some(1));

        let kind = |cfg: &RunConfig, cmd| ExitKind::of(&resolve(cmd, cfg, &here()).unwrap_err());
        let mut c = base.clone();
        c.gamma = Some(0.5);
        assert_eq!(kind(&c, Command::Select), ExitKind::Config);
        let mut c = base.clone();
        c.mode = Some(SearchMode::Exhaustive);
        assert_eq!(kind(&c, Command::Select), ExitKind::Config);
        let mut c = base.clone();
        c.grid = None;
        assert_eq!(kind(&c, Command::Fit), ExitKind::Config);
        let mut c = base.clone();
        c.data = Some("/nonexistent/file.csv".into());
        assert_eq!(kind(&c, Command::Fit), ExitKind::Data);
        let mut c = base.clone();
        c.kernel = Some(KernelName::Gaussian);
        c.grid = Some("-1,1".into());
        c.data = Some("builtin:galaxies".into());
        assert!(resolve(Command::Fit, &c, &here()).is_ok());
        let mut c = base.clone();
        c.grid = Some("-1,1".into());
        assert_eq!(kind(&c, Command::Fit), ExitKind::Config);
        let mut c = base;
        c.command = Some(Command::Fit);
        assert_eq!(kind(&c, Command::Select), ExitKind::Config);
    }
}
