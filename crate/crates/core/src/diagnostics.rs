//! Population-level quantities behind PR's stochastic-approximation analysis.
//!
//! All expectations under the true density `m` are weighted sums over a
//! [`Population`], which discretizes `m` with the deterministic rules of
//! [`crate::quadrature`]. Each node `y_k` stores the relative kernel
//! `p(y_k|u)/m(y_k)`, so that `m_f/m`, the mean map and the KL contrast are
//! computed without subtracting large logarithms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::engine::{update_direction, MixingVector, PrTrace, SupportSet, WeightSchedule};
use crate::error::{PrError, Result};
use crate::kernel::Kernel;
use crate::math::{log_sum_exp_pairs, quantile};
use crate::quadrature::Quadrature;

/// A finite mixture used as the data-generating density in synthetic studies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub kernel: Kernel,
    pub support: SupportSet,
    pub weights: MixingVector,
}

impl TrueModel {
    pub fn new(kernel: Kernel, support: SupportSet, weights: MixingVector) -> Result<Self> {
        support.validate_for(&kernel)?;
        if support.len() != weights.len() {
            return Err(PrError::InvalidMixing(format!(
                "{} weights for {} support points",
                weights.len(),
                support.len()
            )));
        }
        Ok(TrueModel {
            kernel,
            support,
            weights,
        })
    }

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

/// The true density discretized against a fitted kernel and support.
#[derive(Debug, Clone)]
pub struct Population {
    kernel: Kernel,
    support: SupportSet,
    /// normalized m-weights of the retained nodes
    mass: Vec<f64>,
    /// `p(y_k|u)/m(y_k)`, row-major over retained nodes
    rel: Vec<f64>,
    /// Lebesgue/counting rule over all nodes, with `p(y_k|u)` row-major
    base_weights: Vec<f64>,
    density: Vec<f64>,
}

const MASS_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;
const FD_FORWARD_STEP: f64 = 1e-5;
const FD_HESSIAN_STEP: f64 = 1e-3;
const FD_STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

impl Population {
    pub fn new(model: &TrueModel, kernel: &Kernel, support: &SupportSet) -> Result<Self> {
        support.validate_for(kernel)?;
        if model.kernel.observation_space() != kernel.observation_space() {
            return Err(PrError::Config(
                "true model and fitted kernel live on different observation spaces".into(),
            ));
        }
        let mut points: Vec<f64> = model.support.points().to_vec();
        points.extend_from_slice(support.points());
        // the wider of the two kernels decides the Gaussian range
        let rule_kernel = if model.kernel.scale() >= kernel.scale() {
            model.kernel
        } else {
            *kernel
        };
        let quad = Quadrature::for_kernel(&rule_kernel, &points);
        let s = support.len();
        let mut mass = Vec::new();
        let mut rel = Vec::new();
        let mut density = Vec::with_capacity(quad.len() * s);
        let mut raw_total = 0.0;
        for (&y, &w) in quad.nodes().iter().zip(quad.weights()) {
            let log_m = model.log_density(y);
            let log_p: Vec<f64> = support
                .points()
                .iter()
                .map(|&u| kernel.log_density_unchecked(y, u))
                .collect();
            density.extend(log_p.iter().map(|lp| lp.exp()));
            let node_mass = w * log_m.exp();
            raw_total += node_mass;
            if node_mass < 1e-300 {
                continue;
            }
            let row: Vec<f64> = log_p.iter().map(|lp| (lp - log_m).exp()).collect();
            if row.iter().any(|r| !r.is_finite()) {
                return Err(PrError::Numerical(format!(
                    "kernel-to-truth ratio overflows at y = {y}"
                )));
            }
            mass.push(node_mass);
            rel.extend(row);
        }
        if (raw_total - 1.0).abs() > MASS_TOL {
            return Err(PrError::Numerical(format!(
                "quadrature of the true density has total mass {raw_total}"
            )));
        }
        mass.iter_mut().for_each(|m| *m /= raw_total);
        Ok(Population {
            kernel: *kernel,
            support: support.clone(),
            mass,
            rel,
            base_weights: quad.weights().to_vec(),
            density,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }

    fn check_len(&self, f: &[f64]) {
        assert_eq!(f.len(), self.dim(), "vector length does not match the support");
    }

    /// `m_f(y_k)/m(y_k)` at every retained node; `f` may be any nonnegative vector.
    fn relative_mixture(&self, f: &[f64]) -> Vec<f64> {
        let s = self.dim();
        self.rel
            .chunks_exact(s)
            .map(|row| row.iter().zip(f).map(|(r, w)| r * w).sum())
            .collect()
    }

    /// `∫ p(y|u)/m_f(y) m(y) dy` for every `u`.
    pub fn ratio_integrals(&self, f: &[f64]) -> Vec<f64> {
        self.check_len(f);
        let s = self.dim();
        let rho = self.relative_mixture(f);
        let mut out = vec![0.0; s];
        for ((row, &q), &r) in self.rel.chunks_exact(s).zip(&self.mass).zip(&rho) {
            let scale = q / r;
            for (o, e) in out.iter_mut().zip(row) {
                *o += scale * e;
            }
        }
        out
    }

    /// Mean-field map `φ(f)(u) = f(u){∫ p(y|u)/m_f(y) m(y) dy − 1}`.
    pub fn phi(&self, f: &[f64]) -> Vec<f64> {
        self.ratio_integrals(f)
            .iter()
            .zip(f)
            .map(|(r, w)| w * (r - 1.0))
            .collect()
    }

    /// `K(m, m_f)`; `f` is not renormalized.
    pub fn kl(&self, f: &[f64]) -> f64 {
        self.check_len(f);
        -self
            .relative_mixture(f)
            .iter()
            .zip(&self.mass)
            .map(|(r, q)| q * r.ln())
            .sum::<f64>()
    }

    /// `ℓ(f) = K(m, m_f) − K* + Σ_u f(u) − 1`, defined on the positive orthant.
    pub fn lyapunov(&self, f: &[f64], kstar: f64) -> f64 {
        self.kl(f) - kstar + f.iter().sum::<f64>() - 1.0
    }

    /// Analytic gradient of ℓ: `1 − ∫ p(y|u)/m_f m dy`.
    pub fn lyapunov_gradient(&self, f: &[f64]) -> Vec<f64> {
        self.ratio_integrals(f).iter().map(|r| 1.0 - r).collect()
    }

    /// Central finite-difference gradient of ℓ with step `min(1e-6, f(u)/2)`;
    /// zero coordinates use a second-order forward stencil.
    pub fn lyapunov_gradient_fd(&self, f: &[f64], kstar: f64) -> Vec<f64> {
        let mut x = f.to_vec();
        (0..f.len())
            .map(|u| {
                let orig = x[u];
                let d = if orig > 0.0 {
                    let h = FD_STEP.min(orig / 2.0);
                    x[u] = orig + h;
                    let up = self.lyapunov(&x, kstar);
                    x[u] = orig - h;
                    let down = self.lyapunov(&x, kstar);
                    (up - down) / (2.0 * h)
                } else {
                    let h = FD_FORWARD_STEP;
                    let base = self.lyapunov(&x, kstar);
                    x[u] = orig + h;
                    let one = self.lyapunov(&x, kstar);
                    x[u] = orig + 2.0 * h;
                    let two = self.lyapunov(&x, kstar);
                    (-3.0 * base + 4.0 * one - two) / (2.0 * h)
                };
                x[u] = orig;
                d
            })
            .collect()
    }

    /// `∇²ℓ(f)(u, v) = ∫ p(y|u)p(y|v)/m_f(y)² m(y) dy`.
    pub fn hessian(&self, f: &[f64]) -> DMatrix<f64> {
        self.check_len(f);
        let s = self.dim();
        let rho = self.relative_mixture(f);
        let mut h = DMatrix::zeros(s, s);
        for ((row, &q), &r) in self.rel.chunks_exact(s).zip(&self.mass).zip(&rho) {
            let scale = q / (r * r);
            for u in 0..s {
                for v in u..s {
                    h[(u, v)] += scale * row[u] * row[v];
                }
            }
        }
        for u in 0..s {
            for v in 0..u {
                h[(u, v)] = h[(v, u)];
            }
        }
        h
    }

    /// Fourth-order central differences of ℓ applied in both coordinates,
    /// with step `min(1e-3, min_u f(u)/5)`; `f` must be interior.
    pub fn hessian_fd(&self, f: &[f64]) -> DMatrix<f64> {
        let fmin = f.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(fmin > 0.0, "finite-difference Hessian needs an interior point");
        let h = FD_HESSIAN_STEP.min(fmin / 5.0);
        let s = f.len();
        let mut out = DMatrix::zeros(s, s);
        let mut x = f.to_vec();
        for u in 0..s {
            for v in u..s {
                let mut acc = 0.0;
                for (ku, cu) in FD_STENCIL {
                    for (kv, cv) in FD_STENCIL {
                        x[u] += ku * h;
                        x[v] += kv * h;
                        acc += cu * cv * self.lyapunov(&x, 0.0);
                        x[u] = f[u];
                        x[v] = f[v];
                    }
                }
                let d = acc / (144.0 * h * h);
                out[(u, v)] = d;
                out[(v, u)] = d;
            }
        }
        out
    }

    /// `ℓ̇(f) = ⟨∇ℓ(f), φ(f)⟩` with the gradient taken by finite differences.
    pub fn lyapunov_derivative(&self, f: &[f64], kstar: f64) -> f64 {
        let grad = self.lyapunov_gradient_fd(f, kstar);
        grad.iter().zip(self.phi(f)).map(|(g, p)| g * p).sum()
    }

    /// `∫ |m_f − m_g| dy` over the Lebesgue (or counting) rule.
    pub fn l1_mixture_distance(&self, f: &[f64], g: &[f64]) -> f64 {
        let s = self.dim();
        self.density
            .chunks_exact(s)
            .zip(&self.base_weights)
            .map(|(row, w)| {
                let d: f64 = row.iter().zip(f.iter().zip(g)).map(|(p, (a, b))| p * (a - b)).sum();
                w * d.abs()
            })
            .sum()
    }

    /// `1 − Σ_k mass_k`: zero up to rounding because the node masses are normalized.
    pub fn mass_defect(&self) -> f64 {
        1.0 - self.mass.iter().sum::<f64>()
    }
}

pub fn phi_mean_map(f: &MixingVector, model: &TrueModel, support: &SupportSet, kernel: &Kernel) -> Result<Vec<f64>> {
    let pop = Population::new(model, kernel, support)?;
    Ok(pop.phi(f.weights()))
}

pub fn lyapunov(f: &MixingVector, model: &TrueModel, support: &SupportSet, kernel: &Kernel, kstar: f64) -> Result<f64> {
    let pop = Population::new(model, kernel, support)?;
    let value = pop.lyapunov(f.weights(), kstar);
    if !value.is_finite() {
        return Err(PrError::Numerical("Kullback-Leibler integral diverges".into()));
    }
    Ok(value)
}

/// `max_u |φ(f)(u) + f(u){∇ℓ(f)}(u)|` with a finite-difference gradient.
pub fn lyapunov_gradient_identity_check(pop: &Population, f: &[f64], kstar: f64) -> Result<f64> {
    if f.iter().any(|&w| w <= 0.0) {
        return Err(PrError::InvalidMixing("identity check needs an interior point".into()));
    }
    let grad = pop.lyapunov_gradient_fd(f, kstar);
    Ok(pop
        .phi(f)
        .iter()
        .zip(&grad)
        .zip(f)
        .map(|((p, g), w)| (p + w * g).abs())
        .fold(0.0, f64::max))
}

/// Jacobian of the mean-field map at an interior equilibrium.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub fstar: MixingVector,
}

impl JacobianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues of the (nonsymmetric) matrix as `(re, im)` pairs.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        self.matrix
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    }

    /// Spectrum of the symmetric similar matrix `D^{-1/2} J D^{1/2}`, with
    /// `D = diag(f*)`, which equals `−D^{1/2} ∇²ℓ D^{1/2}`.
    pub fn symmetric_spectrum(&self) -> Vec<f64> {
        let s = self.symmetric_form();
        let sym = (&s + s.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Largest entry of the antisymmetric part of the similar form.
    pub fn symmetric_form_asymmetry(&self) -> f64 {
        let s = self.symmetric_form();
        (&s - s.transpose()).abs().max() * 0.5
    }

    fn symmetric_form(&self) -> DMatrix<f64> {
        let f = self.fstar.weights();
        DMatrix::from_fn(self.dim(), self.dim(), |u, v| {
            self.matrix[(u, v)] * (f[v] / f[u]).sqrt()
        })
    }
}

/// `J(u, v) = −f*(u) ∫ p(y|u)p(y|v)/m_{f*}(y)² m(y) dy`.
pub fn jacobian(pop: &Population, fstar: &MixingVector) -> Result<JacobianMatrix> {
    if !fstar.is_interior() {
        return Err(PrError::InvalidMixing(
            "the Jacobian is only formed at an interior equilibrium".into(),
        ));
    }
    let h = pop.hessian(fstar.weights());
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(fstar.weights()));
    Ok(JacobianMatrix {
        matrix: -(d * h),
        fstar: fstar.clone(),
    })
}

/// `max |J + diag(f*)·H|` with `H` the finite-difference Hessian of ℓ at f*.
pub fn jacobian_factorization_residual(pop: &Population, jac: &JacobianMatrix) -> f64 {
    let h = pop.hessian_fd(jac.fstar.weights());
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(jac.fstar.weights()));
    (&jac.matrix + d * h).abs().max()
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovChainReport {
    pub min_entry: f64,
    pub row_sum_error: f64,
    pub stationarity_error: f64,
    pub detailed_balance_error: f64,
    pub nonnegative: bool,
    pub row_stochastic: bool,
    pub stationary: bool,
    pub reversible: bool,
}

impl MarkovChainReport {
    pub fn passed(&self) -> bool {
        self.nonnegative && self.row_stochastic && self.stationary && self.reversible
    }
}

const CHAIN_TOL: f64 = 1e-8;

/// `P = −Jᵀ` together with the checks that make it a reversible chain with
/// stationary distribution f*.
pub fn markov_chain_from_jacobian(jac: &JacobianMatrix) -> (DMatrix<f64>, MarkovChainReport) {
    let p = -jac.matrix.transpose();
    let f = jac.fstar.weights();
    let s = p.nrows();
    let min_entry = p.min();
    let row_sum_error = (0..s).map(|u| (p.row(u).sum() - 1.0).abs()).fold(0.0, f64::max);
    let stationarity_error = (0..s)
        .map(|v| ((0..s).map(|u| f[u] * p[(u, v)]).sum::<f64>() - f[v]).abs())
        .fold(0.0, f64::max);
    let mut detailed_balance_error: f64 = 0.0;
    for u in 0..s {
        for v in 0..s {
            detailed_balance_error = detailed_balance_error.max((f[u] * p[(u, v)] - f[v] * p[(v, u)]).abs());
        }
    }
    let report = MarkovChainReport {
        min_entry,
        row_sum_error,
        stationarity_error,
        detailed_balance_error,
        nonnegative: min_entry >= -CHAIN_TOL,
        row_stochastic: row_sum_error <= CHAIN_TOL,
        stationary: stationarity_error <= CHAIN_TOL,
        reversible: detailed_balance_error <= CHAIN_TOL,
    };
    (p, report)
}

/// Result of the KL-projection oracle.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub fstar: MixingVector,
    pub kstar: f64,
    pub interior: bool,
    /// `max |f·r − f|` at the returned point, i.e. the size of one more
    /// multiplicative update.
    pub update_norm: f64,
    /// Largest sup-norm distance between restart solutions.
    pub restart_spread: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            restarts: 20,
            seed: 0,
            tolerance: 1e-12,
        }
    }
}

/// Minimizes `K(m, m_f)` over the simplex with the population multiplicative
/// update `f(u) ← f(u)·∫ p(y|u)/m_f(y) m(y) dy`, finished by active-set
/// Newton steps on the KKT system, from several random starts.
pub fn kl_oracle_fstar(pop: &Population, opts: &OracleOptions) -> Result<OracleResult> {
    let s = pop.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut solutions = Vec::with_capacity(opts.restarts.max(1));
    for r in 0..opts.restarts.max(1) {
        let start = if r == 0 {
            vec![1.0 / s as f64; s]
        } else {
            sample_simplex(&mut rng, s)
        };
        solutions.push(solve_projection(pop, start, opts.tolerance)?);
    }
    let best = solutions
        .iter()
        .min_by(|a, b| pop.kl(a).total_cmp(&pop.kl(b)))
        .cloned()
        .expect("at least one restart");
    let restart_spread = solutions
        .iter()
        .map(|f| f.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let update_norm = pop.phi(&best).iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let kstar = pop.kl(&best);
    let interior = best.iter().all(|&w| w > 0.0);
    Ok(OracleResult {
        fstar: MixingVector::from_unnormalized(best)?,
        kstar,
        interior,
        update_norm,
        restart_spread,
        restarts: opts.restarts.max(1),
    })
}

const EM_ITERATIONS: usize = 5000;
const EM_SWITCH: f64 = 1e-7;
const DROP_BELOW: f64 = 1e-12;
const SNAP_BELOW: f64 = 1e-9;

fn solve_projection(pop: &Population, mut f: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let s = f.len();
    em_iterate(pop, &mut f, EM_ITERATIONS, EM_SWITCH);
    let mut active: Vec<bool> = f.iter().map(|&w| w > DROP_BELOW).collect();
    for _outer in 0..(2 * s + 4) {
        newton_polish(pop, &mut f, &mut active, tol);
        // KKT: an inactive coordinate must not want to grow
        let r = pop.ratio_integrals(&f);
        let violator = (0..s)
            .filter(|&u| !active[u] && r[u] > 1.0 + 1e-10)
            .max_by(|&a, &b| r[a].total_cmp(&r[b]));
        match violator {
            None => {
                // snap vanishing coordinates that the KKT conditions allow to be zero
                if f.iter()
                    .zip(&r)
                    .any(|(&w, &ru)| w > 0.0 && w < SNAP_BELOW && ru <= 1.0 + 1e-9)
                {
                    for u in 0..s {
                        if f[u] < SNAP_BELOW && r[u] <= 1.0 + 1e-9 {
                            f[u] = 0.0;
                            active[u] = false;
                        }
                    }
                    let total: f64 = f.iter().sum();
                    f.iter_mut().for_each(|w| *w /= total);
                    continue;
                }
                let residual = pop.phi(&f).iter().fold(0.0f64, |m, p| m.max(p.abs()));
                if residual < tol.max(1e-14) * 10.0 {
                    return Ok(f);
                }
                // Newton stalled; more multiplicative steps before retrying
                em_iterate(pop, &mut f, EM_ITERATIONS, tol);
                let residual = pop.phi(&f).iter().fold(0.0f64, |m, p| m.max(p.abs()));
                if residual < tol.max(1e-14) * 10.0 {
                    return Ok(f);
                }
            }
            Some(u) => {
                f[u] = 1e-3;
                active[u] = true;
                let total: f64 = f.iter().sum();
                f.iter_mut().for_each(|w| *w /= total);
                em_iterate(pop, &mut f, 200, EM_SWITCH);
            }
        }
    }
    let residual = pop.phi(&f).iter().fold(0.0f64, |m, p| m.max(p.abs()));
    Err(PrError::Numerical(format!(
        "KL projection did not converge (|phi| = {residual:e})"
    )))
}

fn em_iterate(pop: &Population, f: &mut [f64], max_iter: usize, tol: f64) {
    for _ in 0..max_iter {
        let r = pop.ratio_integrals(f);
        let mut delta: f64 = 0.0;
        let mut total = 0.0;
        for (w, ru) in f.iter_mut().zip(&r) {
            let next = *w * ru;
            delta = delta.max((next - *w).abs());
            *w = next;
            total += next;
        }
        f.iter_mut().for_each(|w| *w /= total);
        if delta < tol {
            break;
        }
    }
}

/// Newton steps for `min K(m, m_f)` subject to `Σ f = 1` on the active
/// coordinates, with a fraction-to-boundary rule and Armijo backtracking.
fn newton_polish(pop: &Population, f: &mut [f64], active: &mut [bool], tol: f64) {
    let s = f.len();
    for u in 0..s {
        if !active[u] {
            f[u] = 0.0;
        }
    }
    let total: f64 = f.iter().sum();
    f.iter_mut().for_each(|w| *w /= total);
    for _ in 0..200 {
        let idx: Vec<usize> = (0..s).filter(|&u| active[u]).collect();
        let a = idx.len();
        let r = pop.ratio_integrals(f);
        let h = pop.hessian(f);
        let mut kkt = DMatrix::zeros(a + 1, a + 1);
        let mut rhs = DVector::zeros(a + 1);
        for (i, &u) in idx.iter().enumerate() {
            for (j, &v) in idx.iter().enumerate() {
                kkt[(i, j)] = h[(u, v)];
            }
            kkt[(i, a)] = 1.0;
            kkt[(a, i)] = 1.0;
            rhs[i] = r[u];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return;
        };
        let dir: Vec<f64> = (0..a).map(|i| sol[i]).collect();
        let mut t: f64 = 1.0;
        for (i, &u) in idx.iter().enumerate() {
            if dir[i] < 0.0 {
                t = t.min(-0.99 * f[u] / dir[i]);
            }
        }
        let current = pop.kl(f);
        let slope: f64 = -idx.iter().zip(&dir).map(|(&u, d)| r[u] * d).sum::<f64>();
        let mut trial = f.to_vec();
        for _ in 0..60 {
            for (i, &u) in idx.iter().enumerate() {
                trial[u] = f[u] + t * dir[i];
            }
            let value = pop.kl(&trial);
            if value <= current + 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let step = idx.iter().map(|&u| (trial[u] - f[u]).abs()).fold(0.0, f64::max);
        f.copy_from_slice(&trial);
        for &u in &idx {
            if f[u] < DROP_BELOW && idx.len() > 1 {
                f[u] = 0.0;
                active[u] = false;
            }
        }
        let total: f64 = f.iter().sum();
        f.iter_mut().for_each(|w| *w /= total);
        if step < tol * 1e-2 {
            return;
        }
    }
}

/// Uniform draw from the probability simplex.
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, s: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..s).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl ConditionCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        ConditionCheck {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Outcome of checking the stochastic-approximation conditions A1–A4 on one
/// completed run.
#[derive(Debug, Clone, Serialize)]
pub struct ChenReport {
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub checks: Vec<ConditionCheck>,
    pub max_martingale_norm: f64,
}

impl ChenReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn condition(&self, prefix: &str) -> Vec<&ConditionCheck> {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
    }
}

/// Checks conditions A1–A4 for a completed synthetic run.
///
/// `trace` must hold a snapshot at every index `0..=n` ([`crate::SnapshotPlan::Every`])
/// so the realized martingale differences `Z_n = Φ(Y_n, f_{n−1}) − φ(f_{n−1})`
/// can be reconstructed.
pub fn chen_assumption_suite(
    schedule: &WeightSchedule,
    jac: &JacobianMatrix,
    data: &[f64],
    trace: &PrTrace,
    pop: &Population,
    kstar: f64,
    seed: u64,
) -> Result<ChenReport> {
    let gamma = schedule.gamma();
    let epsilon = 1.0 / gamma - 1.0 + 0.01;
    let delta = (1.0 - epsilon) / 2.0;
    let mut checks = Vec::new();

    // A1: gains
    let n = data.len();
    let positive_decreasing = (1..=n.max(2)).all(|i| {
        let w = schedule.weight(i);
        w > 0.0 && schedule.weight(i + 1) < w
    });
    checks.push(ConditionCheck::new(
        "A1.positive",
        positive_decreasing,
        format!("w_n > 0 and decreasing for n <= {}", n.max(2)),
    ));
    let far = schedule.weight(1_000_000_000_000);
    checks.push(ConditionCheck::new(
        "A1.vanishing",
        far < 1e-3,
        format!("w at n = 1e12 is {far:e}"),
    ));
    let blocks = dyadic_block_sums(schedule, 1.0, 22);
    let divergent = blocks[12..].windows(2).all(|b| b[1] >= b[0]);
    checks.push(ConditionCheck::new(
        "A1.divergent_sum",
        divergent,
        format!(
            "dyadic block sums of w_n nondecreasing: last = {:.4}",
            blocks[blocks.len() - 1]
        ),
    ));
    let increments: Vec<f64> = (1..=12)
        .map(|k| {
            let i = 10usize.pow(k);
            1.0 / schedule.weight(i + 1) - 1.0 / schedule.weight(i)
        })
        .collect();
    let logs: Vec<f64> = (1..=12).map(|k| k as f64 * std::f64::consts::LN_10).collect();
    let ln_inc: Vec<f64> = increments.iter().map(|d| d.ln()).collect();
    let (inc_slope, _, _) = crate::math::linear_fit(&logs, &ln_inc);
    let to_zero = increments.windows(2).all(|d| d[1] < d[0]) && inc_slope < -0.05;
    let alpha = 0.0;
    checks.push(ConditionCheck::new(
        "A1.alpha_zero",
        to_zero,
        format!(
            "w_(n+1)^-1 - w_n^-1 decays like n^{inc_slope:.3}; value at n = 1e12 is {:.4}",
            increments[11]
        ),
    ));
    let summable = dyadic_block_sums(schedule, 1.0 + epsilon, 22);
    let eps_ok = epsilon > 0.0 && epsilon <= 1.0 && summable[12..].windows(2).all(|b| b[1] < b[0]);
    checks.push(ConditionCheck::new(
        "A1.square_summable",
        eps_ok,
        format!("epsilon = {epsilon:.4}; dyadic blocks of w_n^(1+epsilon) decreasing"),
    ));

    // A2: Lyapunov function on sampled points
    let fstar = jac.fstar.weights();
    let s = fstar.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..1000).map(|_| sample_simplex(&mut rng, s)).collect();
    let mut min_ell = f64::INFINITY;
    let mut max_deriv = f64::NEG_INFINITY;
    for f in &samples {
        min_ell = min_ell.min(pop.lyapunov(f, kstar));
        max_deriv = max_deriv.max(pop.lyapunov_derivative(f, kstar));
    }
    let at_star = pop.lyapunov(fstar, kstar);
    let mut grad_gap: f64 = 0.0;
    for _ in 0..50 {
        let mut g: Vec<f64> = fstar
            .iter()
            .map(|&w| w * (1.0 + 0.05 * (rng.random::<f64>() - 0.5)))
            .collect();
        let t: f64 = g.iter().sum();
        g.iter_mut().for_each(|w| *w /= t);
        let fd = pop.lyapunov_gradient_fd(&g, kstar);
        let an = pop.lyapunov_gradient(&g);
        grad_gap = grad_gap.max(fd.iter().zip(&an).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    checks.push(ConditionCheck::new(
        "A2.differentiable",
        grad_gap < 1e-6,
        format!("finite-difference vs analytic gradient near f*: {grad_gap:e}"),
    ));
    checks.push(ConditionCheck::new(
        "A2.nonnegative",
        min_ell >= -1e-12 && at_star.abs() < 1e-10,
        format!("min ell over samples {min_ell:e}; ell(f*) = {at_star:e}"),
    ));
    checks.push(ConditionCheck::new(
        "A2.descent",
        max_deriv <= 1e-10,
        format!("max ell-dot over samples {max_deriv:e}"),
    ));

    // A3: weighted martingale sums
    if trace.snapshots.len() != n + 1 {
        return Err(PrError::Config(
            "the assumption suite needs a trace with a snapshot at every step".into(),
        ));
    }
    let mut z = Vec::with_capacity(n);
    for (i, &y) in data.iter().enumerate() {
        let (idx, prev) = &trace.snapshots[i];
        debug_assert_eq!(*idx, i);
        let big_phi = update_direction(prev, pop.support(), pop.kernel(), y)?;
        let small_phi = pop.phi(prev.weights());
        z.push(big_phi.iter().zip(&small_phi).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let max_martingale_norm = z
        .iter()
        .map(|zn| zn.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let exponent = 2.0 * gamma * (1.0 - delta);
    checks.push(ConditionCheck::new(
        "A3.delta_range",
        delta > 0.0 && delta < 0.5 && exponent > 1.0,
        format!("delta = {delta:.4}; sum of w_n^(2(1-delta)) converges with exponent {exponent:.4}"),
    ));
    // every coordinate of Φ and φ lies in [-1, 1]
    let bound = 2.0 * (s as f64).sqrt();
    checks.push(ConditionCheck::new(
        "A3.bounded_differences",
        max_martingale_norm <= bound,
        format!("max |Z_n| = {max_martingale_norm:.4} (bound {bound:.4})"),
    ));
    let mut partial = vec![0.0; s];
    let mut qv = 0.0;
    let mut max_norm: f64 = 0.0;
    let half = n / 2;
    let mut at_half = vec![0.0; s];
    let mut qv_half = 0.0;
    let mut tail_osc: f64 = 0.0;
    for (i, zn) in z.iter().enumerate() {
        let coef = schedule.weight(i + 1).powf(1.0 - delta);
        for (p, zu) in partial.iter_mut().zip(zn) {
            *p += coef * zu;
        }
        qv += coef * coef * zn.iter().map(|x| x * x).sum::<f64>();
        max_norm = max_norm.max(norm(&partial));
        if i + 1 == half {
            at_half.copy_from_slice(&partial);
            qv_half = qv;
        }
        if i + 1 > half {
            let d: Vec<f64> = partial.iter().zip(&at_half).map(|(a, b)| a - b).collect();
            tail_osc = tail_osc.max(norm(&d));
        }
    }
    checks.push(ConditionCheck::new(
        "A3.bounded_partial_sums",
        max_norm <= 5.0 * qv.sqrt(),
        format!(
            "max |X_N| = {max_norm:.4}; 5 sqrt(quadratic variation) = {:.4}",
            5.0 * qv.sqrt()
        ),
    ));
    let tail_scale = 5.0 * (qv - qv_half).max(0.0).sqrt();
    checks.push(ConditionCheck::new(
        "A3.cauchy_tail",
        tail_osc <= tail_scale,
        format!("max |X_N - X_(n/2)| over the second half = {tail_osc:e}; bound {tail_scale:e}"),
    ));
    let block = (n / 20).max(1);
    let mut worst_ratio: f64 = 0.0;
    for chunk in z.chunks(block).filter(|c| c.len() == block) {
        for u in 0..s {
            let mean = chunk.iter().map(|zn| zn[u]).sum::<f64>() / block as f64;
            let second = chunk.iter().map(|zn| zn[u] * zn[u]).sum::<f64>() / block as f64;
            let se = (second / block as f64).sqrt();
            if se > 0.0 {
                worst_ratio = worst_ratio.max(mean.abs() / se);
            }
        }
    }
    checks.push(ConditionCheck::new(
        "A3.block_means",
        worst_ratio <= 5.0,
        format!("largest block mean of Z in standard errors: {worst_ratio:.3}"),
    ));

    // A4: spectrum of J + alpha·delta·I
    let shifted = JacobianMatrix {
        matrix: &jac.matrix + DMatrix::identity(s, s) * (alpha * delta),
        fstar: jac.fstar.clone(),
    };
    let max_re = shifted
        .eigenvalues()
        .iter()
        .map(|(re, _)| *re)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(ConditionCheck::new(
        "A4.stable_spectrum",
        max_re < -1e-9,
        format!("largest real part of eig(J + alpha delta I) = {max_re:e}"),
    ));

    Ok(ChenReport {
        gamma,
        epsilon,
        delta,
        alpha,
        checks,
        max_martingale_norm,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Σ_{n=2^k}^{2^{k+1}-1} w_n^power` for `k = 0..blocks`.
fn dyadic_block_sums(schedule: &WeightSchedule, power: f64, blocks: u32) -> Vec<f64> {
    (0..blocks)
        .map(|k| {
            let lo = 1usize << k;
            let hi = 1usize << (k + 1);
            (lo..hi).map(|i| schedule.weight(i).powf(power)).sum()
        })
        .collect()
}

/// Summary of ℓ over a random sample of the simplex.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovSample {
    pub points: usize,
    pub min_value: f64,
    pub max_derivative: f64,
    /// Largest distance to f* among points whose ℓ is below `1e-6`.
    pub near_zero_max_distance: f64,
    pub median_value: f64,
}

pub fn lyapunov_sample(pop: &Population, fstar: &MixingVector, kstar: f64, points: usize, seed: u64) -> LyapunovSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = pop.dim();
    let mut values = Vec::with_capacity(points);
    let mut max_derivative = f64::NEG_INFINITY;
    let mut near: f64 = 0.0;
    for _ in 0..points {
        let f = sample_simplex(&mut rng, s);
        let v = pop.lyapunov(&f, kstar);
        max_derivative = max_derivative.max(pop.lyapunov_derivative(&f, kstar));
        if v < 1e-6 {
            let d = f
                .iter()
                .zip(fstar.weights())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            near = near.max(d);
        }
        values.push(v);
    }
    LyapunovSample {
        points,
        min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
        max_derivative,
        near_zero_max_distance: near,
        median_value: quantile(&values, 0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_model(points: &[f64], weights: &[f64]) -> TrueModel {
        TrueModel::new(
            Kernel::poisson(),
            SupportSet::new(points.to_vec()).unwrap(),
            MixingVector::new(weights.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn gaussian3() -> (TrueModel, Population) {
        let k = Kernel::gaussian(1.0).unwrap();
        let u = SupportSet::new(vec![0.0, 2.0, 4.0]).unwrap();
        let model = TrueModel::new(k, u.clone(), MixingVector::new(vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
        let pop = Population::new(&model, &k, &u).unwrap();
        (model, pop)
    }

    /// Truncated-sum oracle for K(m, m_f) with Poisson components.
    fn poisson_kl_oracle(true_u: &[f64], true_w: &[f64], u: &[f64], f: &[f64]) -> f64 {
        let k = Kernel::poisson();
        let mut total = 0.0;
        for y in 0..400 {
            let y = y as f64;
            let m: f64 = true_u
                .iter()
                .zip(true_w)
                .map(|(&a, w)| w * k.density(y, a).unwrap())
                .sum();
            let mf: f64 = u.iter().zip(f).map(|(&a, w)| w * k.density(y, a).unwrap()).sum();
            if m > 0.0 {
                total += m * (m / mf).ln();
            }
        }
        total
    }

    #[test]
    fn phi_vanishes_when_well_specified() {
        let (model, pop) = gaussian3();
        let phi = pop.phi(model.weights.weights());
        assert!(phi.iter().all(|p| p.abs() < 1e-13), "{phi:?}");
        assert!(pop.mass_defect().abs() < 1e-14);
    }

    #[test]
    fn phi_sums_to_zero_everywhere() {
        let (_, pop) = gaussian3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let f = sample_simplex(&mut rng, 3);
            let total: f64 = pop.phi(&f).iter().sum();
            assert!(total.abs() < 1e-10, "{total}");
        }
    }

    #[test]
    fn vertices_are_equilibria() {
        let (_, pop) = gaussian3();
        for at in 0..3 {
            let f = MixingVector::point_mass(3, at);
            let phi = pop.phi(f.weights());
            assert!(phi.iter().all(|p| p.abs() < 1e-12), "{phi:?}");
        }
    }

    #[test]
    fn lyapunov_matches_truncated_sum_oracle() {
        let model = poisson_model(&[1.0, 5.0], &[0.5, 0.5]);
        let u = SupportSet::new(vec![1.0, 5.0]).unwrap();
        let f = MixingVector::new(vec![0.9, 0.1]).unwrap();
        let value = lyapunov(&f, &model, &u, &Kernel::poisson(), 0.0).unwrap();
        let oracle = poisson_kl_oracle(&[1.0, 5.0], &[0.5, 0.5], &[1.0, 5.0], &[0.9, 0.1]);
        assert!(value > 0.0);
        assert!((value - oracle).abs() < 1e-12, "{value} vs {oracle}");
        // frozen from a 30-digit truncated-sum evaluation
        assert!((value - 0.339_031_353_545_127_3).abs() < 1e-12, "{value}");
        let at_truth = lyapunov(&model.weights, &model, &u, &Kernel::poisson(), 0.0).unwrap();
        assert!(at_truth.abs() < 1e-14);
    }

    #[test]
    fn gradient_identity_holds() {
        let (_, pop) = gaussian3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let f = sample_simplex(&mut rng, 3);
            let gap = lyapunov_gradient_identity_check(&pop, &f, 0.0).unwrap();
            assert!(gap < 1e-6, "{gap}");
        }
        assert!(lyapunov_gradient_identity_check(&pop, &[0.0, 0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn descent_along_the_mean_field() {
        let (_, pop) = gaussian3();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = sample_simplex(&mut rng, 3);
            let fd = pop.lyapunov_derivative(&f, 0.0);
            let grad = pop.lyapunov_gradient(&f);
            let exact: f64 = -f.iter().zip(&grad).map(|(w, g)| w * g * g).sum::<f64>();
            assert!(fd <= 1e-10);
            assert!((fd - exact).abs() < 1e-5 * exact.abs().max(1e-3), "{fd} vs {exact}");
        }
    }

    #[test]
    fn singleton_jacobian_is_minus_one() {
        let k = Kernel::poisson();
        let u = SupportSet::new(vec![3.0]).unwrap();
        let model = poisson_model(&[3.0], &[1.0]);
        let pop = Population::new(&model, &k, &u).unwrap();
        let jac = jacobian(&pop, &MixingVector::uniform(1)).unwrap();
        assert!((jac.matrix[(0, 0)] + 1.0).abs() < 1e-14);
        let (p, report) = markov_chain_from_jacobian(&jac);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(report.passed());
    }

    #[test]
    fn two_point_poisson_chain() {
        let k = Kernel::poisson();
        let u = SupportSet::new(vec![1.0, 5.0]).unwrap();
        let model = poisson_model(&[1.0, 5.0], &[0.5, 0.5]);
        let pop = Population::new(&model, &k, &u).unwrap();
        let jac = jacobian(&pop, &model.weights).unwrap();
        for (re, im) in jac.eigenvalues() {
            assert!(re < 0.0 && im.abs() < 1e-12);
        }
        assert!(jacobian_factorization_residual(&pop, &jac) < 1e-7);
        let (p, report) = markov_chain_from_jacobian(&jac);
        assert!(report.passed(), "{report:?}");
        let pi = [0.5 * p[(0, 0)] + 0.5 * p[(1, 0)], 0.5 * p[(0, 1)] + 0.5 * p[(1, 1)]];
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_jacobian_refused() {
        let (_, pop) = gaussian3();
        assert!(jacobian(&pop, &MixingVector::new(vec![0.0, 0.5, 0.5]).unwrap()).is_err());
    }

    #[test]
    fn oracle_recovers_truth_when_well_specified() {
        let (model, pop) = gaussian3();
        let res = kl_oracle_fstar(&pop, &OracleOptions::default()).unwrap();
        assert!(res.kstar.abs() < 1e-8);
        assert!(res.fstar.euclidean_distance(&model.weights) < 1e-8);
        assert!(res.restart_spread < 1e-8);
        assert!(res.update_norm < 1e-12);
        assert!(res.interior);
    }

    #[test]
    fn oracle_misspecified_poisson() {
        let model = poisson_model(&[1.0, 5.0], &[0.5, 0.5]);
        let u = SupportSet::new(vec![1.0, 4.0, 6.0]).unwrap();
        let pop = Population::new(&model, &Kernel::poisson(), &u).unwrap();
        let res = kl_oracle_fstar(&pop, &OracleOptions::default()).unwrap();
        assert!(res.kstar > 0.0);
        assert!(res.restart_spread < 1e-8);
        let phi = pop.phi(res.fstar.weights());
        assert!(phi.iter().all(|p| p.abs() < 1e-8));
        let oracle = poisson_kl_oracle(&[1.0, 5.0], &[0.5, 0.5], u.points(), res.fstar.weights());
        assert!((res.kstar - oracle).abs() < 1e-12);
    }

    #[test]
    fn oracle_detects_boundary() {
        let model = poisson_model(&[1.0, 5.0], &[0.5, 0.5]);
        let u = SupportSet::new(vec![1.0, 3.0, 5.0]).unwrap();
        let pop = Population::new(&model, &Kernel::poisson(), &u).unwrap();
        let res = kl_oracle_fstar(&pop, &OracleOptions::default()).unwrap();
        assert!(!res.interior);
        assert!(res.kstar.abs() < 1e-10);
        assert_eq!(res.fstar.weights()[1], 0.0);
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let model = poisson_model(&[1.0], &[1.0]);
        let k = Kernel::gaussian(1.0).unwrap();
        assert!(Population::new(&model, &k, &SupportSet::new(vec![1.0]).unwrap()).is_err());
    }
}
