//! Synthetic data and convergence-rate experiments.
//!
//! A rate experiment runs one PR pass per (γ, seed) cell, records the error
//! of the estimate against the KL projection `f*` at geometric checkpoints,
//! takes medians over seeds and fits the log–log slope of median error
//! against `n`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{kl_oracle_fstar, OracleOptions, OracleResult, Population, TrueModel};
use crate::engine::{pr_run, MixingVector, SnapshotPlan, SupportSet, WeightSchedule};
use crate::error::{PrError, Result};
use crate::kernel::{Kernel, KernelFamily};
use crate::math::{linear_fit, median};

/// `n` i.i.d. draws from a finite mixture: a component index by discrete
/// sampling, then one draw from that component.
pub fn simulate(model: &TrueModel, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(PrError::Config("cannot simulate zero observations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(model.weights.weights()).map_err(|e| PrError::InvalidMixing(e.to_string()))?;
    let points = model.support.points();
    match model.kernel.family() {
        KernelFamily::GaussianLocation => {
            let noise = Normal::new(0.0, model.kernel.scale()).map_err(|e| PrError::Domain(e.to_string()))?;
            Ok((0..n)
                .map(|_| points[picker.sample(&mut rng)] + noise.sample(&mut rng))
                .collect())
        }
        KernelFamily::Poisson => {
            let components = points
                .iter()
                .map(|&u| {
                    if u == 0.0 {
                        Ok(None)
                    } else {
                        Poisson::new(u).map(Some).map_err(|e| PrError::Domain(e.to_string()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((0..n)
                .map(|_| match &components[picker.sample(&mut rng)] {
                    Some(p) => p.sample(&mut rng),
                    None => 0.0,
                })
                .collect())
        }
    }
}

/// A data-generating model paired with the support PR is run on.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: TrueModel,
    pub kernel: Kernel,
    pub fitted: SupportSet,
    /// Rate slopes are asserted only where the projection is interior.
    pub assert_rate: bool,
}

impl Scenario {
    pub fn population(&self) -> Result<Population> {
        Population::new(&self.model, &self.kernel, &self.fitted)
    }
}

/// The three standard scenarios:
///
/// - `a`: well-specified Gaussian (σ = 1) mixture on {0, 3, 6} with weights
///   (0.3, 0.5, 0.2), fitted on the same support;
/// - `b`: Poisson mixture on {1, 5} with equal weights, fitted on {1, 4, 6};
/// - `c`: the same Poisson truth fitted on {1, 3, 5}, so the projection sits
///   on the boundary of the simplex (report only).
pub fn misspecified_scenario_suite() -> Vec<Scenario> {
    let gauss = Kernel::gaussian(1.0).expect("unit scale");
    let pois = Kernel::poisson();
    let support = |p: &[f64]| SupportSet::new(p.to_vec()).expect("static support");
    let weights = |w: &[f64]| MixingVector::new(w.to_vec()).expect("static weights");
    let poisson_truth = TrueModel::new(pois, support(&[1.0, 5.0]), weights(&[0.5, 0.5])).expect("static model");
    vec![
        Scenario {
            name: "a".into(),
            description: "well-specified 3-point Gaussian, interior truth".into(),
            model: TrueModel::new(gauss, support(&[0.0, 3.0, 6.0]), weights(&[0.3, 0.5, 0.2])).expect("static model"),
            kernel: gauss,
            fitted: support(&[0.0, 3.0, 6.0]),
            assert_rate: true,
        },
        Scenario {
            name: "b".into(),
            description: "misspecified: Poisson truth on {1,5}, fitted grid {1,4,6}".into(),
            model: poisson_truth.clone(),
            kernel: pois,
            fitted: support(&[1.0, 4.0, 6.0]),
            assert_rate: true,
        },
        Scenario {
            name: "c".into(),
            description: "boundary: Poisson truth on {1,5}, fitted grid {1,3,5}".into(),
            model: poisson_truth,
            kernel: pois,
            fitted: support(&[1.0, 3.0, 5.0]),
            assert_rate: false,
        },
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    misspecified_scenario_suite().into_iter().find(|s| s.name == name)
}

/// `{10², 10^2.5, …, 10⁵}` rounded to integers.
pub fn default_checkpoints() -> Vec<usize> {
    (0..7)
        .map(|k| 10f64.powf(2.0 + 0.5 * k as f64).round() as usize)
        .collect()
}

/// Reference log–log slope `−(1 − 1/(2γ))` for the mixing-vector error.
pub fn theoretical_slope(gamma: f64) -> f64 {
    -(1.0 - 1.0 / (2.0 * gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Metric {
    /// `‖f_n − f*‖` (Euclidean)
    MixingError,
    /// `∫ |m_n − m_{f*}| dy`
    MixtureL1,
    /// `K(m, m_n) − K*`
    KlContrast,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MixingError, Metric::MixtureL1, Metric::KlContrast];

    pub fn label(&self) -> &'static str {
        match self {
            Metric::MixingError => "err_f",
            Metric::MixtureL1 => "err_L1",
            Metric::KlContrast => "kl_contrast",
        }
    }

    pub fn reference_slope(&self, gamma: f64) -> f64 {
        match self {
            Metric::MixingError | Metric::MixtureL1 => theoretical_slope(gamma),
            Metric::KlContrast => 2.0 * theoretical_slope(gamma),
        }
    }
}

pub const SLOPE_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct RateExperiment {
    pub scenario: Scenario,
    pub gammas: Vec<f64>,
    pub checkpoints: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Slopes are fitted over checkpoints `n ≥ fit_from`.
    pub fit_from: usize,
}

impl RateExperiment {
    pub fn new(scenario: Scenario) -> Self {
        RateExperiment {
            scenario,
            gammas: vec![0.6, 0.75, 0.9],
            checkpoints: default_checkpoints(),
            seeds: 20,
            base_seed: 0,
            fit_from: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.len() < 5 {
            return Err(PrError::Config("a rate experiment needs at least 5 checkpoints".into()));
        }
        if self.checkpoints[0] == 0 || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PrError::Config(
                "checkpoints must be positive and strictly increasing".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(PrError::Config("at least one seed per cell".into()));
        }
        if self.checkpoints.iter().filter(|&&n| n >= self.fit_from).count() < 2 {
            return Err(PrError::Config(
                "fewer than two checkpoints inside the slope window".into(),
            ));
        }
        for &g in &self.gammas {
            WeightSchedule::new(g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub scenario: String,
    pub gamma: f64,
    pub seed: u64,
    pub n: usize,
    pub err_f: f64,
    pub err_l1: f64,
    pub kl_contrast: f64,
}

impl CellRecord {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::MixingError => self.err_f,
            Metric::MixtureL1 => self.err_l1,
            Metric::KlContrast => self.kl_contrast,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeSummary {
    pub scenario: String,
    pub gamma: f64,
    pub metric: Metric,
    pub checkpoints: Vec<usize>,
    pub medians: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub reference: f64,
    /// `None` for report-only scenarios.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub scenario: String,
    pub oracle: OracleResult,
    pub cells: Vec<CellRecord>,
    pub summaries: Vec<SlopeSummary>,
}

impl RateReport {
    pub fn summary(&self, gamma: f64, metric: Metric) -> Option<&SlopeSummary> {
        self.summaries.iter().find(|s| s.gamma == gamma && s.metric == metric)
    }
}

/// Runs every (γ, seed) cell in parallel, then reduces to slope summaries.
///
/// Each seed's data set is shared by all γ values so the comparison across
/// schedules is paired.
pub fn rate_experiment(cfg: &RateExperiment) -> Result<RateReport> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let pop = sc.population()?;
    let oracle = kl_oracle_fstar(&pop, &OracleOptions::default())?;
    let n_max = *cfg.checkpoints.last().expect("validated");
    let s = sc.fitted.len();
    let f0 = MixingVector::uniform(s);
    let datasets = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|j| simulate(&sc.model, n_max, cfg.base_seed + j))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(f64, usize)> = cfg
        .gammas
        .iter()
        .flat_map(|&g| (0..cfg.seeds).map(move |j| (g, j)))
        .collect();
    let fstar = oracle.fstar.weights();
    let plan = SnapshotPlan::At(cfg.checkpoints.clone());
    let cells: Vec<CellRecord> = jobs
        .par_iter()
        .map(|&(gamma, j)| {
            let sched = WeightSchedule::new(gamma)?;
            let trace = pr_run(&datasets[j], &sc.kernel, &sc.fitted, &sched, &f0, &plan)?;
            Ok(trace
                .snapshots
                .iter()
                .map(|(n, f)| CellRecord {
                    scenario: sc.name.clone(),
                    gamma,
                    seed: cfg.base_seed + j as u64,
                    n: *n,
                    err_f: f.euclidean_distance(&oracle.fstar),
                    err_l1: pop.l1_mixture_distance(f.weights(), fstar),
                    kl_contrast: pop.kl(f.weights()) - oracle.kstar,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut summaries = Vec::new();
    for &gamma in &cfg.gammas {
        for metric in Metric::ALL {
            let medians: Vec<f64> = cfg
                .checkpoints
                .iter()
                .map(|&n| {
                    let vals: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.gamma == gamma && c.n == n)
                        .map(|c| c.metric(metric))
                        .collect();
                    median(&vals)
                })
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = cfg
                .checkpoints
                .iter()
                .zip(&medians)
                .filter(|(n, _)| **n >= cfg.fit_from)
                .map(|(&n, &m)| ((n as f64).ln(), m.max(f64::MIN_POSITIVE).ln()))
                .unzip();
            let (slope, _, slope_stderr) = linear_fit(&xs, &ys);
            let reference = metric.reference_slope(gamma);
            let pass = (sc.assert_rate && oracle.interior).then_some(slope <= reference + SLOPE_TOLERANCE);
            summaries.push(SlopeSummary {
                scenario: sc.name.clone(),
                gamma,
                metric,
                checkpoints: cfg.checkpoints.clone(),
                medians,
                slope,
                slope_stderr,
                reference,
                pass,
            });
        }
    }
    Ok(RateReport {
        scenario: sc.name.clone(),
        oracle,
        cells,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_draws_one_component() {
        let model = TrueModel::new(
            Kernel::poisson(),
            SupportSet::new(vec![0.0, 3.0]).unwrap(),
            MixingVector::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!(simulate(&model, 500, 1).unwrap().iter().all(|&y| y == 0.0));
        assert!(simulate(&model, 0, 1).is_err());
    }

    #[test]
    fn simulation_is_seeded() {
        let sc = scenario("a").unwrap();
        assert_eq!(simulate(&sc.model, 50, 7).unwrap(), simulate(&sc.model, 50, 7).unwrap());
        assert_ne!(simulate(&sc.model, 50, 7).unwrap(), simulate(&sc.model, 50, 8).unwrap());
    }

    #[test]
    fn poisson_sample_mean() {
        let sc = scenario("b").unwrap();
        let n = 100_000;
        let y = simulate(&sc.model, n, 3).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        // mixture mean 3, variance 3 + 4 = 7
        let se = (7.0 / n as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn component_frequencies_match_weights() {
        // well separated components let each draw be attributed to its source
        let model = TrueModel::new(
            Kernel::gaussian(1.0).unwrap(),
            SupportSet::new(vec![0.0, 100.0, 200.0]).unwrap(),
            MixingVector::new(vec![0.3, 0.5, 0.2]).unwrap(),
        )
        .unwrap();
        let n = 100_000;
        let y = simulate(&model, n, 11).unwrap();
        let mut counts = [0.0; 3];
        for v in y {
            counts[((v + 50.0) / 100.0).floor() as usize] += 1.0;
        }
        let chi2: f64 = counts
            .iter()
            .zip([0.3, 0.5, 0.2])
            .map(|(c, p)| (c - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.82, "chi2 {chi2}");
    }

    #[test]
    fn reference_slopes() {
        assert!((theoretical_slope(0.9) + 0.444_444_444).abs() < 1e-8);
        assert!((theoretical_slope(0.6) + 0.166_666_667).abs() < 1e-8);
        assert!((Metric::KlContrast.reference_slope(0.9) + 0.888_888_889).abs() < 1e-8);
    }

    #[test]
    fn default_checkpoints_are_half_decades() {
        assert_eq!(default_checkpoints(), vec![100, 316, 1000, 3162, 10000, 31623, 100000]);
    }

    #[test]
    fn scenario_suite_oracles() {
        let suite = misspecified_scenario_suite();
        assert_eq!(suite.len(), 3);
        let opts = OracleOptions::default();
        let a = kl_oracle_fstar(&suite[0].population().unwrap(), &opts).unwrap();
        assert!(a.kstar.abs() < 1e-8 && a.interior);
        let b = kl_oracle_fstar(&suite[1].population().unwrap(), &opts).unwrap();
        assert!(b.kstar > 0.0 && b.interior);
        let c = kl_oracle_fstar(&suite[2].population().unwrap(), &opts).unwrap();
        assert!(!c.interior);
    }

    #[test]
    fn experiment_validation() {
        let mut cfg = RateExperiment::new(scenario("a").unwrap());
        cfg.checkpoints = vec![10, 20, 30];
        assert!(cfg.validate().is_err());
        cfg.checkpoints = vec![10, 20, 20, 40, 50];
        assert!(cfg.validate().is_err());
        cfg.checkpoints = default_checkpoints();
        cfg.gammas = vec![0.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_experiment_produces_all_cells() {
        let mut cfg = RateExperiment::new(scenario("b").unwrap());
        cfg.gammas = vec![0.75];
        cfg.seeds = 3;
        cfg.checkpoints = vec![50, 100, 200, 400, 800, 1600];
        cfg.fit_from = 200;
        let report = rate_experiment(&cfg).unwrap();
        assert_eq!(report.cells.len(), 3 * 6);
        assert_eq!(report.summaries.len(), 3);
        assert!(report.summaries.iter().all(|s| s.slope.is_finite()));
        assert!(report.cells.iter().all(|c| c.kl_contrast >= -1e-12));
    }
}
