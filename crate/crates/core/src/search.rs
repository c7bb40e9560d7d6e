//! Support selection for finite mixtures with unknown support.
//!
//! Each candidate support `U` (a nonempty subset of a fixed grid) is scored
//! by one PR pass: `L_n(U) = −Σ_i log m_{i−1,U}(Y_i)`. This differs from the
//! KL estimate `K_n(U) = Σ_i log m(Y_i) + L_n(U)` only by a term that does not
//! depend on `U`, so both have the same minimizer and the unknown true
//! density is never needed. Subsets are searched exhaustively for small
//! grids and by simulated annealing otherwise; the chosen support is then
//! refit by one more PR pass.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    average_mixing, data_orders, LogLikTable, MixingVector, PrTrace, SnapshotPlan, SupportSet, WeightSchedule,
};
use crate::error::{PrError, Result};
use crate::kernel::Kernel;
use crate::math::{log_sum_exp_pairs, quantile};

/// Largest grid accepted by [`Selector::exhaustive`].
pub const EXHAUSTIVE_MAX_POINTS: usize = 20;

/// Bounds of the compact search region and the finite grid inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: f64,
    upper: f64,
    points: SupportSet,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, points: Vec<f64>) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(PrError::Config(format!("invalid grid bounds [{lower}, {upper}]")));
        }
        let points = SupportSet::from_unsorted(points)?;
        if points.len() < 2 {
            return Err(PrError::Config("a search grid needs at least two points".into()));
        }
        if let Some(p) = points.points().iter().find(|&&p| p < lower || p > upper) {
            return Err(PrError::Config(format!(
                "grid point {p} lies outside [{lower}, {upper}]"
            )));
        }
        Ok(GridSpec { lower, upper, points })
    }

    /// `lower, lower + step, …` up to `upper` (inclusive, to within `1e-9·step`).
    pub fn equispaced(lower: f64, upper: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(PrError::Config(format!("grid step {step} must be positive")));
        }
        let count = ((upper - lower) / step + 1e-9).floor() as usize + 1;
        let points = (0..count).map(|k| lower + k as f64 * step).collect();
        Self::new(lower, upper, points)
    }

    /// `count` equally spaced points including both ends.
    pub fn linspace(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(PrError::Config("linspace needs at least two points".into()));
        }
        let h = (upper - lower) / (count - 1) as f64;
        let points = (0..count)
            .map(|k| if k == count - 1 { upper } else { lower + k as f64 * h })
            .collect();
        Self::new(lower, upper, points)
    }

    /// Adds points that must be candidates, widening the bounds if needed.
    pub fn with_included(self, extra: &[f64]) -> Result<Self> {
        let mut points = self.points.points().to_vec();
        points.extend_from_slice(extra);
        let lower = extra.iter().copied().fold(self.lower, f64::min);
        let upper = extra.iter().copied().fold(self.upper, f64::max);
        Self::new(lower, upper, points)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn support(&self) -> &SupportSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Score of one candidate support. `value` is `+inf` when some observation
/// has zero predictive density under the subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetObjective {
    pub subset: Vec<usize>,
    pub value: f64,
    pub trace: Option<PrTrace>,
}

impl SubsetObjective {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSubset {
    pub subset: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub best: Vec<usize>,
    pub best_value: f64,
    /// Every nonempty subset, best first.
    pub ranking: Vec<RankedSubset>,
}

/// Order on candidate supports: objective, then size, then lexicographic
/// order of grid indices.
pub fn rank_cmp(a_value: f64, a: &[usize], b_value: f64, b: &[usize]) -> Ordering {
    a_value
        .total_cmp(&b_value)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSubset {
    FullGrid,
    Random,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// `None` picks the interquartile range of the objective over 20 random subsets.
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    pub steps_per_temperature: usize,
    /// Cap on distinct subsets evaluated.
    pub max_evaluations: usize,
    /// The chain stops once the temperature falls below this fraction of the start.
    pub min_temperature_ratio: f64,
    pub seed: u64,
    pub initial: InitialSubset,
    pub memoize: bool,
    /// Finish with single-toggle steepest descent from the best subset.
    pub quench: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            initial_temperature: None,
            cooling: 0.95,
            steps_per_temperature: 50,
            max_evaluations: 5000,
            min_temperature_ratio: 1e-8,
            seed: 0,
            initial: InitialSubset::FullGrid,
            memoize: true,
            quench: true,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self, grid_len: usize) -> Result<()> {
        if let Some(t) = self.initial_temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(PrError::Config(format!("initial temperature {t} must be positive")));
            }
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(PrError::Config(format!(
                "cooling ratio {} must lie in (0, 1)",
                self.cooling
            )));
        }
        if self.steps_per_temperature == 0 || self.max_evaluations == 0 {
            return Err(PrError::Config("annealing step counts must be positive".into()));
        }
        if !(self.min_temperature_ratio > 0.0 && self.min_temperature_ratio < 1.0) {
            return Err(PrError::Config("min_temperature_ratio must lie in (0, 1)".into()));
        }
        if let InitialSubset::Explicit(v) = &self.initial {
            if v.is_empty() || v.iter().any(|&i| i >= grid_len) {
                return Err(PrError::Config(
                    "explicit initial subset is empty or out of range".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealStep {
    pub iteration: usize,
    pub temperature: f64,
    pub toggled: usize,
    pub candidate_value: f64,
    pub accepted: bool,
    pub current_value: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub best: Vec<usize>,
    pub best_value: f64,
    pub trace: Vec<AnnealStep>,
    pub initial_temperature: f64,
    pub evaluations: usize,
    pub cap_reached: bool,
}

/// Final PR estimate on a selected support.
#[derive(Debug, Clone)]
pub struct Refit {
    pub support: SupportSet,
    pub weights: MixingVector,
    pub trace: PrTrace,
    pub kernel: Kernel,
}

impl Refit {
    /// `log m_{n,Û}(y)` of the refit mixture.
    pub fn log_density(&self, y: f64) -> f64 {
        let log_f: Vec<f64> = self.weights.weights().iter().map(|w| w.ln()).collect();
        let log_p: Vec<f64> = self
            .support
            .points()
            .iter()
            .map(|&u| self.kernel.log_density_unchecked(y, u))
            .collect();
        log_sum_exp_pairs(&log_f, &log_p)
    }
}

/// Data, kernel, grid and schedule shared by every candidate-support evaluation.
#[derive(Debug, Clone)]
pub struct Selector {
    kernel: Kernel,
    grid: SupportSet,
    schedule: WeightSchedule,
    tables: Vec<LogLikTable>,
}

impl Selector {
    pub fn new(data: &[f64], kernel: &Kernel, grid: &SupportSet, schedule: &WeightSchedule) -> Result<Self> {
        Self::with_permutations(data, kernel, grid, schedule, 1, 0)
    }

    /// A selector whose objective is `L_n(U)` averaged over the data orderings
    /// of [`data_orders`]; with one permutation it is the plain objective.
    pub fn with_permutations(
        data: &[f64],
        kernel: &Kernel,
        grid: &SupportSet,
        schedule: &WeightSchedule,
        permutations: usize,
        seed: u64,
    ) -> Result<Self> {
        grid.validate_for(kernel)?;
        let tables = data_orders(data, permutations, seed)?
            .iter()
            .map(|d| LogLikTable::new(d, kernel, grid.points()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Selector {
            kernel: *kernel,
            grid: grid.clone(),
            schedule: *schedule,
            tables,
        })
    }

    pub fn permutations(&self) -> usize {
        self.tables.len()
    }

    pub fn grid(&self) -> &SupportSet {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        self.tables[0].data()
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(PrError::InvalidSupport("candidate support is empty".into()));
        }
        if subset.windows(2).any(|w| w[0] >= w[1]) || subset[subset.len() - 1] >= self.grid.len() {
            return Err(PrError::InvalidSupport(format!(
                "subset {subset:?} is not an increasing list of grid indices"
            )));
        }
        Ok(())
    }

    fn passes(&self, subset: &[usize]) -> Result<Vec<PrTrace>> {
        let f0 = MixingVector::uniform(subset.len());
        self.tables
            .iter()
            .map(|t| t.run(subset, &self.schedule, &f0, &SnapshotPlan::None))
            .collect()
    }

    /// `L_n(U)` with the trace of the first ordering; infeasible subsets
    /// score `+inf`.
    pub fn objective(&self, subset: &[usize]) -> Result<SubsetObjective> {
        self.check_subset(subset)?;
        match self.passes(subset) {
            Ok(traces) => Ok(SubsetObjective {
                subset: subset.to_vec(),
                value: traces.iter().map(|t| t.neg_log_predictive()).sum::<f64>() / traces.len() as f64,
                trace: traces.into_iter().next(),
            }),
            Err(PrError::Nondegeneracy { .. }) => Ok(SubsetObjective {
                subset: subset.to_vec(),
                value: f64::INFINITY,
                trace: None,
            }),
            Err(e) => Err(e),
        }
    }

    pub fn objective_value(&self, subset: &[usize]) -> Result<f64> {
        self.objective(subset).map(|o| o.value)
    }

    /// Scores all `2^|grid| − 1` nonempty subsets in parallel.
    pub fn exhaustive(&self) -> Result<ExhaustiveResult> {
        let g = self.grid.len();
        if g > EXHAUSTIVE_MAX_POINTS {
            return Err(PrError::Config(format!(
                "exhaustive search is limited to {EXHAUSTIVE_MAX_POINTS} grid points \
                 (got {g}); use simulated annealing instead"
            )));
        }
        let mut ranking = (1u32..(1u32 << g))
            .into_par_iter()
            .map(|mask| {
                let subset: Vec<usize> = (0..g).filter(|i| mask & (1 << i) != 0).collect();
                self.objective_value(&subset)
                    .map(|value| RankedSubset { subset, value })
            })
            .collect::<Result<Vec<_>>>()?;
        ranking.sort_by(|a, b| rank_cmp(a.value, &a.subset, b.value, &b.subset));
        Ok(ExhaustiveResult {
            best: ranking[0].subset.clone(),
            best_value: ranking[0].value,
            ranking,
        })
    }

    /// Simulated annealing over nonempty subsets.
    ///
    /// The state is a membership vector over the grid; each proposal toggles
    /// one uniformly chosen point (redrawn if it would empty the set) and is
    /// accepted with probability `min{1, exp(−ΔL/T)}`. The temperature is
    /// multiplied by the cooling ratio after every `steps_per_temperature`
    /// proposals.
    pub fn anneal(&self, cfg: &AnnealConfig) -> Result<AnnealResult> {
        let g = self.grid.len();
        cfg.validate(g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut eval = Evaluator {
            selector: self,
            cache: HashMap::new(),
            visited: HashSet::new(),
            memoize: cfg.memoize,
        };

        let t0 = match cfg.initial_temperature {
            Some(t) => t,
            None => {
                let mut values = Vec::with_capacity(20);
                for _ in 0..20 {
                    let state = random_state(&mut rng, g);
                    values.push(eval.value(&state)?);
                }
                let finite: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
                let iqr = if finite.len() >= 2 {
                    quantile(&finite, 0.75) - quantile(&finite, 0.25)
                } else {
                    0.0
                };
                if iqr > 0.0 {
                    iqr
                } else {
                    1.0
                }
            }
        };

        let mut state = match &cfg.initial {
            InitialSubset::FullGrid => vec![true; g],
            InitialSubset::Random => random_state(&mut rng, g),
            InitialSubset::Explicit(idx) => {
                let mut s = vec![false; g];
                idx.iter().for_each(|&i| s[i] = true);
                s
            }
        };
        let mut current = eval.value(&state)?;
        let mut best = state.clone();
        let mut best_value = current;
        let mut trace = Vec::new();
        let mut temperature = t0;
        let mut cap_reached = false;
        let mut iteration = 0;

        'chain: loop {
            if g < 2 {
                break;
            }
            for _ in 0..cfg.steps_per_temperature {
                if eval.visited.len() >= cfg.max_evaluations {
                    cap_reached = true;
                    break 'chain;
                }
                let toggled = loop {
                    let j = rng.random_range(0..g);
                    let emptying = state[j] && state.iter().filter(|&&b| b).count() == 1;
                    if !emptying {
                        break j;
                    }
                };
                state[toggled] = !state[toggled];
                let candidate = eval.value(&state)?;
                let delta = candidate - current;
                let accepted = if delta <= 0.0 {
                    !(candidate.is_infinite() && current.is_infinite()) || delta == 0.0
                } else if candidate.is_finite() {
                    rng.random::<f64>() < (-delta / temperature).exp()
                } else {
                    false
                };
                if accepted {
                    current = candidate;
                    let idx = indices(&state);
                    if rank_cmp(current, &idx, best_value, &indices(&best)) == Ordering::Less {
                        best.clone_from(&state);
                        best_value = current;
                    }
                } else {
                    state[toggled] = !state[toggled];
                }
                iteration += 1;
                trace.push(AnnealStep {
                    iteration,
                    temperature,
                    toggled,
                    candidate_value: candidate,
                    accepted,
                    current_value: current,
                    best_value,
                });
            }
            temperature *= cfg.cooling;
            if temperature < t0 * cfg.min_temperature_ratio {
                break;
            }
        }

        if cfg.quench {
            loop {
                let mut improved: Option<(Vec<bool>, f64)> = None;
                for j in 0..g {
                    let mut cand = best.clone();
                    cand[j] = !cand[j];
                    if !cand.iter().any(|&b| b) {
                        continue;
                    }
                    let v = eval.value(&cand)?;
                    let (ref_state, ref_value) = match &improved {
                        Some((s, v)) => (s.clone(), *v),
                        None => (best.clone(), best_value),
                    };
                    if rank_cmp(v, &indices(&cand), ref_value, &indices(&ref_state)) == Ordering::Less {
                        improved = Some((cand, v));
                    }
                }
                match improved {
                    Some((s, v)) => {
                        best = s;
                        best_value = v;
                    }
                    None => break,
                }
            }
        }

        Ok(AnnealResult {
            best: indices(&best),
            best_value,
            trace,
            initial_temperature: t0,
            evaluations: eval.visited.len(),
            cap_reached,
        })
    }

    /// One more PR pass on the chosen support over the same data orderings;
    /// the weights are averaged over orderings and the trace is the first.
    pub fn refit(&self, subset: &[usize]) -> Result<Refit> {
        self.check_subset(subset)?;
        let traces = self.passes(subset)?;
        let weights = if traces.len() == 1 {
            traces[0].final_mixing.clone()
        } else {
            let finals: Vec<MixingVector> = traces.iter().map(|t| t.final_mixing.clone()).collect();
            average_mixing(&finals)?
        };
        Ok(Refit {
            support: self.grid.subset(subset)?,
            weights,
            trace: traces.into_iter().next().expect("at least one ordering"),
            kernel: self.kernel,
        })
    }
}

struct Evaluator<'a> {
    selector: &'a Selector,
    cache: HashMap<Vec<u64>, f64>,
    visited: HashSet<Vec<u64>>,
    memoize: bool,
}

impl Evaluator<'_> {
    fn value(&mut self, state: &[bool]) -> Result<f64> {
        let key = pack(state);
        if self.memoize {
            if let Some(&v) = self.cache.get(&key) {
                return Ok(v);
            }
        }
        let v = self.selector.objective_value(&indices(state))?;
        if self.memoize {
            self.cache.insert(key.clone(), v);
        }
        self.visited.insert(key);
        Ok(v)
    }
}

fn pack(state: &[bool]) -> Vec<u64> {
    let mut words = vec![0u64; state.len().div_ceil(64)];
    for (i, &b) in state.iter().enumerate() {
        if b {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn indices(state: &[bool]) -> Vec<usize> {
    state.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn random_state<R: Rng>(rng: &mut R, g: usize) -> Vec<bool> {
    loop {
        let s: Vec<bool> = (0..g).map(|_| rng.random::<bool>()).collect();
        if s.iter().any(|&b| b) {
            return s;
        }
    }
}

/// `L_n(U)` for an explicit support.
pub fn objective(
    data: &[f64],
    kernel: &Kernel,
    support: &SupportSet,
    schedule: &WeightSchedule,
) -> Result<SubsetObjective> {
    let selector = Selector::new(data, kernel, support, schedule)?;
    let all: Vec<usize> = (0..support.len()).collect();
    selector.objective(&all)
}

pub fn exhaustive_select(
    data: &[f64],
    kernel: &Kernel,
    grid: &GridSpec,
    schedule: &WeightSchedule,
) -> Result<ExhaustiveResult> {
    Selector::new(data, kernel, grid.support(), schedule)?.exhaustive()
}

pub fn anneal_select(
    data: &[f64],
    kernel: &Kernel,
    grid: &GridSpec,
    schedule: &WeightSchedule,
    cfg: &AnnealConfig,
) -> Result<AnnealResult> {
    Selector::new(data, kernel, grid.support(), schedule)?.anneal(cfg)
}

pub fn refit(data: &[f64], kernel: &Kernel, support: &SupportSet, schedule: &WeightSchedule) -> Result<Refit> {
    let selector = Selector::new(data, kernel, support, schedule)?;
    let all: Vec<usize> = (0..support.len()).collect();
    selector.refit(&all)
}

/// `|U1 △ U2|` for sorted index (or point) lists.
pub fn support_distance<T: PartialOrd>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut d) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].partial_cmp(&b[j]) {
            Some(Ordering::Less) => {
                d += 1;
                i += 1;
            }
            Some(Ordering::Greater) => {
                d += 1;
                j += 1;
            }
            _ => {
                i += 1;
                j += 1;
            }
        }
    }
    d + (a.len() - i) + (b.len() - j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_data() -> Vec<f64> {
        // a fixed mixture-like stream of small counts
        (0..400)
            .map(|i| {
                if i % 2 == 0 {
                    ((i * 7) % 3) as f64
                } else {
                    (4 + (i * 5) % 5) as f64
                }
            })
            .collect()
    }

    #[test]
    fn grid_constructors() {
        let g = GridSpec::equispaced(5.0, 40.0, 0.5).unwrap();
        assert_eq!(g.len(), 71);
        assert_eq!(g.support().points()[0], 5.0);
        assert_eq!(*g.support().points().last().unwrap(), 40.0);
        let g = GridSpec::linspace(0.0, 30.0, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert!((g.support().points()[1] - 30.0 / 99.0).abs() < 1e-15);
        let g = GridSpec::linspace(1.0, 30.0, 10)
            .unwrap()
            .with_included(&[0.0])
            .unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.lower(), 0.0);
        assert!(GridSpec::new(0.0, 1.0, vec![0.5]).is_err());
        assert!(GridSpec::new(0.0, 1.0, vec![0.5, 2.0]).is_err());
        assert!(GridSpec::equispaced(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn permutation_averaged_selector() {
        let data = poisson_data();
        let grid = SupportSet::new(vec![0.0, 2.0, 5.0]).unwrap();
        let sched = WeightSchedule::new(0.75).unwrap();
        let k = Kernel::poisson();
        let plain = Selector::new(&data, &k, &grid, &sched).unwrap();
        let one = Selector::with_permutations(&data, &k, &grid, &sched, 1, 42).unwrap();
        assert_eq!(
            plain.objective_value(&[0, 2]).unwrap(),
            one.objective_value(&[0, 2]).unwrap()
        );

        let many = Selector::with_permutations(&data, &k, &grid, &sched, 4, 42).unwrap();
        assert_eq!(many.permutations(), 4);
        let orders = data_orders(&data, 4, 42).unwrap();
        let expected = orders
            .iter()
            .map(|d| objective(d, &k, &grid.subset(&[0, 2]).unwrap(), &sched).unwrap().value)
            .sum::<f64>()
            / 4.0;
        assert!((many.objective_value(&[0, 2]).unwrap() - expected).abs() < 1e-9);

        let all = [0, 1, 2];
        let refit = many.refit(&all).unwrap();
        let averaged = crate::pr_run_averaged(&data, &k, &grid, &sched, &MixingVector::uniform(3), 4, 42).unwrap();
        assert_eq!(refit.weights, averaged);
        assert_eq!(refit.trace.final_mixing, plain.refit(&all).unwrap().weights);
        assert!(Selector::with_permutations(&data, &k, &grid, &sched, 0, 0).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(support_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(support_distance(&[1, 2], &[2, 3]), 2);
        assert_eq!(support_distance(&[1, 2, 3], &[4, 5, 6]), 6);
        assert_eq!(support_distance(&[0.5, 1.5], &[1.5]), 1);
        let empty: [usize; 0] = [];
        assert_eq!(support_distance(&empty, &[1, 2]), 2);
    }

    #[test]
    fn objective_is_deterministic_and_matches_pr_run() {
        let data = poisson_data();
        let k = Kernel::poisson();
        let grid = SupportSet::new(vec![0.5, 1.0, 2.0, 5.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &k, &grid, &WeightSchedule::default()).unwrap();
        let a = sel.objective(&[1, 3]).unwrap();
        let b = sel.objective(&[1, 3]).unwrap();
        assert_eq!(a, b);
        let support = SupportSet::new(vec![1.0, 5.0]).unwrap();
        let direct = crate::engine::pr_run(
            &data,
            &k,
            &support,
            &WeightSchedule::default(),
            &MixingVector::uniform(2),
            &SnapshotPlan::None,
        )
        .unwrap();
        assert!((a.value - direct.neg_log_predictive()).abs() < 1e-9);
    }

    #[test]
    fn infeasible_subset_scores_infinity() {
        let data = vec![0.0, 0.0, 3.0];
        let grid = SupportSet::new(vec![0.0, 2.0]).unwrap();
        let sel = Selector::new(&data, &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        let o = sel.objective(&[0]).unwrap();
        assert!(!o.is_feasible());
        assert!(o.trace.is_none());
        assert!(sel.objective(&[0, 1]).unwrap().is_feasible());
        let res = sel.exhaustive().unwrap();
        assert_eq!(res.ranking.last().unwrap().subset, vec![0]);
    }

    #[test]
    fn exhaustive_counts_and_singleton() {
        let data = poisson_data();
        let k = Kernel::poisson();
        let grid = SupportSet::new(vec![1.0, 2.0, 5.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &k, &grid, &WeightSchedule::default()).unwrap();
        let res = sel.exhaustive().unwrap();
        assert_eq!(res.ranking.len(), 15);
        assert!(res.ranking.windows(2).all(|w| w[0].value <= w[1].value));
        let single = SupportSet::new(vec![2.0]).unwrap();
        let sel = Selector::new(&data, &k, &single, &WeightSchedule::default()).unwrap();
        let res = sel.exhaustive().unwrap();
        assert_eq!(res.ranking.len(), 1);
        assert_eq!(res.best, vec![0]);
    }

    #[test]
    fn exhaustive_refuses_large_grids() {
        let grid = SupportSet::new((0..21).map(|i| i as f64).collect()).unwrap();
        let sel = Selector::new(&[1.0], &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        assert!(matches!(sel.exhaustive(), Err(PrError::Config(_))));
    }

    #[test]
    fn ties_prefer_smaller_then_lexicographic() {
        assert_eq!(rank_cmp(1.0, &[0, 1], 1.0, &[2]), Ordering::Greater);
        assert_eq!(rank_cmp(1.0, &[0, 2], 1.0, &[1, 2]), Ordering::Less);
        assert_eq!(rank_cmp(0.5, &[0, 1, 2], 1.0, &[2]), Ordering::Less);
    }

    #[test]
    fn anneal_memoization_is_transparent() {
        let data = poisson_data();
        let grid = SupportSet::new(vec![0.5, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        let cfg = AnnealConfig {
            seed: 3,
            steps_per_temperature: 10,
            ..AnnealConfig::default()
        };
        let a = sel.anneal(&cfg).unwrap();
        let b = sel
            .anneal(&AnnealConfig {
                memoize: false,
                ..cfg.clone()
            })
            .unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best, b.best);
        assert!(a.trace.windows(2).all(|w| w[1].best_value <= w[0].best_value));
        let c = sel.anneal(&cfg).unwrap();
        assert_eq!(a.trace, c.trace);
    }

    #[test]
    fn cold_anneal_is_greedy() {
        let data = poisson_data();
        let grid = SupportSet::new(vec![0.5, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        let cfg = AnnealConfig {
            initial_temperature: Some(1e-300),
            min_temperature_ratio: 0.5,
            steps_per_temperature: 200,
            quench: false,
            ..AnnealConfig::default()
        };
        let res = sel.anneal(&cfg).unwrap();
        for step in res.trace.iter().filter(|s| s.accepted) {
            assert!(step.candidate_value <= step.current_value + 0.0);
        }
        let mut prev = f64::INFINITY;
        for step in &res.trace {
            assert!(step.current_value <= prev);
            prev = step.current_value;
        }
    }

    #[test]
    fn anneal_cap_flags() {
        let data = poisson_data();
        let grid = SupportSet::new(vec![0.5, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        let cfg = AnnealConfig {
            max_evaluations: 5,
            quench: false,
            ..AnnealConfig::default()
        };
        let res = sel.anneal(&cfg).unwrap();
        assert!(res.cap_reached);
        assert!(res.evaluations <= 25);
        assert!(AnnealConfig {
            cooling: 1.0,
            ..AnnealConfig::default()
        }
        .validate(3)
        .is_err());
    }

    #[test]
    fn refit_reproduces_the_selection_trace() {
        let data = poisson_data();
        let grid = SupportSet::new(vec![0.5, 1.0, 2.0, 5.0, 7.0]).unwrap();
        let sel = Selector::new(&data, &Kernel::poisson(), &grid, &WeightSchedule::default()).unwrap();
        let res = sel.exhaustive().unwrap();
        let fit = sel.refit(&res.best).unwrap();
        assert_eq!(fit.trace.neg_log_predictive(), res.best_value);
        let obj = sel.objective(&res.best).unwrap();
        assert_eq!(obj.trace.unwrap(), fit.trace);
        assert_eq!(fit.support.len(), res.best.len());
    }
}
