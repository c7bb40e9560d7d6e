//! Deterministic integration rules over the observation space.
//!
//! Gaussian kernels use composite Gauss–Legendre panels over
//! `[min − 12σ, max + 12σ]`; Poisson kernels use the counting measure on
//! `0..=y_max`, with `y_max` chosen so the largest component's upper tail is
//! below `1e-16`.

use crate::kernel::{Kernel, KernelFamily};
use crate::math::gauss_legendre;

const GAUSS_POINTS: usize = 16;
const PANELS_PER_SIGMA: f64 = 2.0;
const RANGE_SIGMAS: f64 = 12.0;
const POISSON_TAIL: f64 = 1e-16;

/// Nodes and Lebesgue (or counting) weights.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    /// A rule that resolves every component `p(·|u)` for `u` in `points`.
    pub fn for_kernel(kernel: &Kernel, points: &[f64]) -> Self {
        let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match kernel.family() {
            KernelFamily::GaussianLocation => {
                let sigma = kernel.scale();
                Self::gauss_legendre_panels(
                    lo - RANGE_SIGMAS * sigma,
                    hi + RANGE_SIGMAS * sigma,
                    sigma / PANELS_PER_SIGMA,
                )
            }
            KernelFamily::Poisson => Self::counting(poisson_upper_limit(hi.max(0.0))),
        }
    }

    fn gauss_legendre_panels(lo: f64, hi: f64, max_width: f64) -> Self {
        let (x, w) = gauss_legendre(GAUSS_POINTS);
        let panels = ((hi - lo) / max_width).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * GAUSS_POINTS);
        let mut weights = Vec::with_capacity(panels * GAUSS_POINTS);
        for k in 0..panels {
            let a = lo + k as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(a + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Quadrature { nodes, weights }
    }

    fn counting(y_max: u64) -> Self {
        let nodes: Vec<f64> = (0..=y_max).map(|y| y as f64).collect();
        let weights = vec![1.0; nodes.len()];
        Quadrature { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&y, w)| w * f(y)).sum()
    }
}

/// Smallest `y ≥ λ + 1` whose Poisson(λ) upper tail beyond `y` is below
/// [`POISSON_TAIL`], using the geometric bound on the ratio of successive masses.
fn poisson_upper_limit(lambda: f64) -> u64 {
    if lambda == 0.0 {
        return 1;
    }
    let mut y = (lambda.ceil() + 1.0) as u64;
    let mut log_mass = y as f64 * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(y as f64 + 1.0);
    loop {
        let ratio = lambda / (y as f64 + 1.0);
        let tail = (log_mass + ratio.ln()).exp() / (1.0 - ratio);
        if tail < POISSON_TAIL {
            return y;
        }
        log_mass += ratio.ln();
        y += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_rule_normalizes_components() {
        let k = Kernel::gaussian(1.0).unwrap();
        let q = Quadrature::for_kernel(&k, &[0.0, 3.0, 6.0]);
        for &u in &[0.0, 3.0, 6.0] {
            let total = q.integrate(|y| k.density(y, u).unwrap());
            assert!((total - 1.0).abs() < 1e-13, "{total}");
        }
        let mean = q.integrate(|y| y * k.density(y, 3.0).unwrap());
        assert!((mean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_rule_covers_tail() {
        let k = Kernel::poisson();
        let q = Quadrature::for_kernel(&k, &[0.0, 1.0, 27.27]);
        for &u in &[0.0, 1.0, 27.27] {
            let total = q.integrate(|y| k.density(y, u).unwrap());
            assert!((total - 1.0).abs() < 1e-14, "u {u}: {total}");
        }
        assert!(q.nodes().last().copied().unwrap() < 120.0);
    }
}
