//! The predictive recursion update and full passes over a data stream.
//!
//! One PR step with gain `w` maps a mixing vector `f` to
//! `f'(u) = (1 − w) f(u) + w p(y|u) f(u) / m_f(y)`, which is the same as
//! `f + w Φ(y, f)` with `Φ(y, f)(u) = f(u) {p(y|u)/m_f(y) − 1}`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PrError, Result};
use crate::kernel::Kernel;
use crate::math::{log_sum_exp, log_sum_exp_pairs};

/// Predictive log-densities below `ln(1e-300)` are treated as a vanished
/// predictive density.
pub const LOG_DENSITY_FLOOR: f64 = -690.775_527_898_213_7;

const SIMPLEX_TOL: f64 = 1e-12;

/// Strictly increasing, nonempty list of candidate component locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    points: Vec<f64>,
}

impl SupportSet {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(PrError::InvalidSupport("support set is empty".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(PrError::InvalidSupport(format!("non-finite point {p}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[0] >= w[1]) {
            return Err(PrError::InvalidSupport(format!(
                "points must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(SupportSet { points })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut points: Vec<f64>) -> Result<Self> {
        points.sort_by(f64::total_cmp);
        points.dedup();
        Self::new(points)
    }

    pub fn validate_for(&self, kernel: &Kernel) -> Result<()> {
        self.points.iter().try_for_each(|&u| kernel.check_point(u))
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, u: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == u)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<SupportSet> {
        SupportSet::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// A probability vector over the points of a [`SupportSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingVector {
    weights: Vec<f64>,
}

impl MixingVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(weights, SIMPLEX_TOL)
    }

    /// Accepts weights summing to one within `tol` and renormalizes them.
    pub fn with_tolerance(weights: Vec<f64>, tol: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(PrError::InvalidMixing("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(PrError::InvalidMixing(format!(
                "weight {w} is not a nonnegative number"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(PrError::InvalidMixing(format!("weights sum to {total}, not 1")));
        }
        Ok(MixingVector::normalized(weights))
    }

    /// Scales nonnegative weights onto the simplex.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(PrError::InvalidMixing(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Ok(MixingVector::normalized(weights))
    }

    fn normalized(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        MixingVector { weights }
    }

    pub fn uniform(len: usize) -> Self {
        MixingVector {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn point_mass(len: usize, at: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[at] = 1.0;
        MixingVector { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }

    pub fn euclidean_distance(&self, other: &MixingVector) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn l1_distance(&self, other: &MixingVector) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    fn check_matches(&self, support: &SupportSet) -> Result<()> {
        if self.len() != support.len() {
            return Err(PrError::InvalidMixing(format!(
                "mixing vector has {} weights but the support has {} points",
                self.len(),
                support.len()
            )));
        }
        Ok(())
    }
}

/// Gain sequence `w_i = (i + 1)^{-γ}` with `γ` strictly inside `(1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    gamma: f64,
}

impl WeightSchedule {
    pub const DEFAULT_GAMMA: f64 = 0.9;

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.5 && gamma < 1.0 {
            Ok(WeightSchedule { gamma })
        } else {
            Err(PrError::InvalidSchedule(gamma))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Gain for the `i`-th observation, `i ≥ 1`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        ((i + 1) as f64).powf(-self.gamma)
    }
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule {
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}

/// Which intermediate estimates a pass keeps. Index `i` is `f_i`, the
/// estimate after `i` observations; index 0 is the starting density.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum SnapshotPlan {
    #[default]
    None,
    At(Vec<usize>),
    Every,
}

impl SnapshotPlan {
    fn wants(&self, i: usize) -> bool {
        match self {
            SnapshotPlan::None => false,
            SnapshotPlan::At(v) => v.contains(&i),
            SnapshotPlan::Every => true,
        }
    }
}

/// Record of one PR pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PrTrace {
    /// `log m_{i-1}(Y_i)` for `i = 1..=n`.
    pub log_predictive: Vec<f64>,
    pub snapshots: Vec<(usize, MixingVector)>,
    pub final_mixing: MixingVector,
}

impl PrTrace {
    pub fn len(&self) -> usize {
        self.log_predictive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_predictive.is_empty()
    }

    /// `−Σ log m_{i-1}(Y_i)`, the support-selection objective.
    pub fn neg_log_predictive(&self) -> f64 {
        -self.log_predictive.iter().sum::<f64>()
    }

    pub fn snapshot(&self, index: usize) -> Option<&MixingVector> {
        self.snapshots.iter().find(|(i, _)| *i == index).map(|(_, f)| f)
    }
}

fn log_densities(kernel: &Kernel, support: &SupportSet, y: f64) -> Result<Vec<f64>> {
    kernel.check_observation(y)?;
    Ok(support
        .points()
        .iter()
        .map(|&u| kernel.log_density_unchecked(y, u))
        .collect())
}

/// `log m_f(y) = log Σ_u p(y|u) f(u)`. Returns `-inf` when every term vanishes.
pub fn mixture_log_density(f: &MixingVector, support: &SupportSet, kernel: &Kernel, y: f64) -> Result<f64> {
    f.check_matches(support)?;
    let log_p = log_densities(kernel, support, y)?;
    let log_f: Vec<f64> = f.weights().iter().map(|w| w.ln()).collect();
    Ok(log_sum_exp_pairs(&log_f, &log_p))
}

/// Ratios `p(y|u)/m_f(y)` and `log m_f(y)`, failing when the predictive
/// density vanishes.
fn ratios(f: &MixingVector, log_p: &[f64], y: f64) -> Result<(Vec<f64>, f64)> {
    let log_f: Vec<f64> = f.weights().iter().map(|w| w.ln()).collect();
    let log_m = log_sum_exp_pairs(&log_f, log_p);
    if log_m.is_nan() || log_m < LOG_DENSITY_FLOOR {
        return Err(PrError::Nondegeneracy {
            step: None,
            y,
            log_density: log_m,
        });
    }
    Ok((log_p.iter().map(|lp| (lp - log_m).exp()).collect(), log_m))
}

/// One predictive recursion update in its mixture form, renormalized.
pub fn pr_step(f: &MixingVector, support: &SupportSet, kernel: &Kernel, y: f64, w: f64) -> Result<MixingVector> {
    check_gain(w)?;
    f.check_matches(support)?;
    let log_p = log_densities(kernel, support, y)?;
    let (ratio, _) = ratios(f, &log_p, y)?;
    let next = f
        .weights()
        .iter()
        .zip(&ratio)
        .map(|(fu, r)| (1.0 - w) * fu + w * fu * r)
        .collect();
    Ok(MixingVector::normalized(next))
}

/// `Φ(y, f)(u) = f(u) {p(y|u)/m_f(y) − 1}`.
pub fn update_direction(f: &MixingVector, support: &SupportSet, kernel: &Kernel, y: f64) -> Result<Vec<f64>> {
    f.check_matches(support)?;
    let log_p = log_densities(kernel, support, y)?;
    let (ratio, _) = ratios(f, &log_p, y)?;
    Ok(f.weights().iter().zip(&ratio).map(|(fu, r)| fu * (r - 1.0)).collect())
}

/// The same update written as `f + w Φ(y, f)`, without renormalization.
pub fn pr_step_direction_form(
    f: &MixingVector,
    support: &SupportSet,
    kernel: &Kernel,
    y: f64,
    w: f64,
) -> Result<Vec<f64>> {
    check_gain(w)?;
    let phi = update_direction(f, support, kernel, y)?;
    Ok(f.weights().iter().zip(&phi).map(|(fu, d)| fu + w * d).collect())
}

fn check_gain(w: f64) -> Result<()> {
    if w > 0.0 && w < 1.0 {
        Ok(())
    } else {
        Err(PrError::Config(format!("gain {w} must lie in (0, 1)")))
    }
}

/// `log p(Y_i | u_j)` for every observation and every point of a grid,
/// together with a row-rescaled linear copy so that passes over any subset
/// of the grid avoid per-step exponentials.
#[derive(Debug, Clone)]
pub struct LogLikTable {
    data: Vec<f64>,
    cols: usize,
    log_p: Vec<f64>,
    scaled: Vec<f64>,
    row_max: Vec<f64>,
}

impl LogLikTable {
    pub fn new(data: &[f64], kernel: &Kernel, points: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(PrError::Config("no observations".into()));
        }
        for &y in data {
            kernel.check_observation(y)?;
        }
        for &u in points {
            kernel.check_point(u)?;
        }
        let cols = points.len();
        let mut log_p = Vec::with_capacity(data.len() * cols);
        let mut scaled = Vec::with_capacity(data.len() * cols);
        let mut row_max = Vec::with_capacity(data.len());
        for &y in data {
            let start = log_p.len();
            log_p.extend(points.iter().map(|&u| kernel.log_density_unchecked(y, u)));
            let row = &log_p[start..];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_finite() {
                scaled.extend(row.iter().map(|lp| (lp - max).exp()));
            } else {
                scaled.extend(std::iter::repeat_n(0.0, cols));
            }
            row_max.push(max);
        }
        Ok(LogLikTable {
            data: data.to_vec(),
            cols,
            log_p,
            scaled,
            row_max,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.data.len()
    }

    pub fn n_points(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sequential PR pass in data order using only the grid columns `cols`.
    pub fn run(
        &self,
        cols: &[usize],
        schedule: &WeightSchedule,
        f0: &MixingVector,
        plan: &SnapshotPlan,
    ) -> Result<PrTrace> {
        if cols.is_empty() {
            return Err(PrError::InvalidSupport("empty column set".into()));
        }
        if f0.len() != cols.len() {
            return Err(PrError::InvalidMixing(format!(
                "starting density has {} weights for {} support points",
                f0.len(),
                cols.len()
            )));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(PrError::InvalidSupport(format!("column {c} outside the grid")));
        }
        let n = self.data.len();
        let s = cols.len();
        let mut f = f0.weights().to_vec();
        let mut ratio = vec![0.0; s];
        let mut scratch = vec![0.0; s];
        let mut log_predictive = Vec::with_capacity(n);
        let mut snapshots = Vec::new();
        if plan.wants(0) {
            snapshots.push((0, f0.clone()));
        }
        for i in 0..n {
            let row = &self.scaled[i * self.cols..(i + 1) * self.cols];
            let mut m = 0.0;
            for (fj, &c) in f.iter().zip(cols) {
                m += fj * row[c];
            }
            let log_m = if m > 1e-250 {
                let inv = 1.0 / m;
                for (r, &c) in ratio.iter_mut().zip(cols) {
                    *r = row[c] * inv;
                }
                m.ln() + self.row_max[i]
            } else {
                let log_row = &self.log_p[i * self.cols..(i + 1) * self.cols];
                for ((sc, fj), &c) in scratch.iter_mut().zip(&f).zip(cols) {
                    *sc = fj.ln() + log_row[c];
                }
                let log_m = log_sum_exp(&scratch);
                for (r, &c) in ratio.iter_mut().zip(cols) {
                    *r = (log_row[c] - log_m).exp();
                }
                log_m
            };
            if log_m.is_nan() || log_m < LOG_DENSITY_FLOOR {
                return Err(PrError::Nondegeneracy {
                    step: Some(i + 1),
                    y: self.data[i],
                    log_density: log_m,
                });
            }
            log_predictive.push(log_m);
            let w = schedule.weight(i + 1);
            let mut total = 0.0;
            for (fj, r) in f.iter_mut().zip(&ratio) {
                *fj *= 1.0 - w + w * r;
                total += *fj;
            }
            let inv = 1.0 / total;
            f.iter_mut().for_each(|fj| *fj *= inv);
            if plan.wants(i + 1) {
                snapshots.push((i + 1, MixingVector { weights: f.clone() }));
            }
        }
        Ok(PrTrace {
            log_predictive,
            snapshots,
            final_mixing: MixingVector { weights: f },
        })
    }
}

/// One full PR pass over `data` in the given order.
pub fn pr_run(
    data: &[f64],
    kernel: &Kernel,
    support: &SupportSet,
    schedule: &WeightSchedule,
    f0: &MixingVector,
    plan: &SnapshotPlan,
) -> Result<PrTrace> {
    f0.check_matches(support)?;
    let table = LogLikTable::new(data, kernel, support.points())?;
    let cols: Vec<usize> = (0..support.len()).collect();
    table.run(&cols, schedule, f0, plan)
}

/// The data orderings used for permutation averaging: the data as given,
/// followed by `num_permutations − 1` uniformly random permutations drawn
/// from a generator seeded with `seed`.
pub fn data_orders(data: &[f64], num_permutations: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if num_permutations == 0 {
        return Err(PrError::Config("num_permutations must be at least 1".into()));
    }
    let mut orders = Vec::with_capacity(num_permutations);
    orders.push(data.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = data.to_vec();
    for _ in 1..num_permutations {
        shuffled.shuffle(&mut rng);
        orders.push(shuffled.clone());
    }
    Ok(orders)
}

/// Mean of the final PR estimates over the orderings of [`data_orders`].
/// With one permutation this is exactly [`pr_run`].
pub fn pr_run_averaged(
    data: &[f64],
    kernel: &Kernel,
    support: &SupportSet,
    schedule: &WeightSchedule,
    f0: &MixingVector,
    num_permutations: usize,
    seed: u64,
) -> Result<MixingVector> {
    let orders = data_orders(data, num_permutations, seed)?;
    let finals = orders
        .par_iter()
        .map(|d| pr_run(d, kernel, support, schedule, f0, &SnapshotPlan::None).map(|t| t.final_mixing))
        .collect::<Result<Vec<_>>>()?;
    if finals.len() == 1 {
        return Ok(finals.into_iter().next().expect("one pass"));
    }
    average_mixing(&finals)
}

pub(crate) fn average_mixing(fs: &[MixingVector]) -> Result<MixingVector> {
    let mut total = vec![0.0; fs[0].len()];
    for f in fs {
        for (t, w) in total.iter_mut().zip(f.weights()) {
            *t += w;
        }
    }
    total.iter_mut().for_each(|t| *t /= fs.len() as f64);
    MixingVector::from_unnormalized(total)
}
