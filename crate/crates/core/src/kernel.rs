//! Component density families `p(y | u)`.
//!
//! Everything is evaluated in log space. Poisson masses at large means
//! underflow long before the mixtures built from them do.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{PrError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    GaussianLocation,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationSpace {
    RealLine,
    NonnegativeIntegers,
}

/// A parametric component family indexed by a location `u`.
///
/// For the Gaussian family `scale` is the fixed standard deviation; the
/// Poisson family ignores it. A Poisson component at `u = 0` is the point
/// mass at `y = 0`, which is how zero-inflation enters a fitted grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    scale: f64,
}

impl Kernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PrError::Domain(format!(
                "Gaussian scale must be positive and finite, got {sigma}"
            )));
        }
        Ok(Kernel {
            family: KernelFamily::GaussianLocation,
            scale: sigma,
        })
    }

    pub fn poisson() -> Self {
        Kernel {
            family: KernelFamily::Poisson,
            scale: 1.0,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn observation_space(&self) -> ObservationSpace {
        match self.family {
            KernelFamily::GaussianLocation => ObservationSpace::RealLine,
            KernelFamily::Poisson => ObservationSpace::NonnegativeIntegers,
        }
    }

    pub fn check_observation(&self, y: f64) -> Result<()> {
        let ok = match self.family {
            KernelFamily::GaussianLocation => y.is_finite(),
            KernelFamily::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PrError::Domain(format!(
                "observation {y} is not in the observation space of the {self} kernel"
            )))
        }
    }

    pub fn check_point(&self, u: f64) -> Result<()> {
        let ok = match self.family {
            KernelFamily::GaussianLocation => u.is_finite(),
            KernelFamily::Poisson => u.is_finite() && u >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PrError::Domain(format!(
                "support point {u} is not valid for the {self} kernel"
            )))
        }
    }

    /// `log p(y | u)` with domain checks.
    pub fn log_density(&self, y: f64, u: f64) -> Result<f64> {
        self.check_observation(y)?;
        self.check_point(u)?;
        Ok(self.log_density_unchecked(y, u))
    }

    /// `log p(y | u)` for inputs already known to be valid.
    #[inline]
    pub fn log_density_unchecked(&self, y: f64, u: f64) -> f64 {
        match self.family {
            KernelFamily::GaussianLocation => {
                let z = (y - u) / self.scale;
                -0.5 * z * z - LN_SQRT_2PI - self.scale.ln()
            }
            KernelFamily::Poisson => poisson_log_mass(y, u),
        }
    }

    pub fn density(&self, y: f64, u: f64) -> Result<f64> {
        self.log_density(y, u).map(f64::exp)
    }

    /// Maximum over triples of grid points of
    /// `∫ {p(y|u1)/p(y|u2)}² p(y|u3) dy`.
    ///
    /// Both families have closed forms:
    /// Gaussian `exp(a(2u3 − u1 − u2) + 2a²σ²)` with `a = (u1 − u2)/σ²`, and
    /// Poisson `exp(2(u2 − u1) − u3 + u3·u1²/u2²)`. Poisson triples with
    /// `u2 = 0` are skipped because the ratio is undefined for `y > 0`.
    /// The value can exceed the `f64` range for widely spread Poisson grids,
    /// in which case this returns `+inf`; [`Kernel::log_lr_bound`] stays finite.
    pub fn check_lr_bound(&self, grid: &[f64]) -> Result<f64> {
        self.log_lr_bound(grid).map(f64::exp)
    }

    /// Natural logarithm of [`Kernel::check_lr_bound`].
    pub fn log_lr_bound(&self, grid: &[f64]) -> Result<f64> {
        if grid.is_empty() {
            return Err(PrError::InvalidSupport("empty grid".into()));
        }
        for &u in grid {
            self.check_point(u)?;
        }
        let mut worst = f64::NEG_INFINITY;
        for &u1 in grid {
            for &u2 in grid {
                if self.family == KernelFamily::Poisson && u2 == 0.0 {
                    continue;
                }
                for &u3 in grid {
                    let log_value = match self.family {
                        KernelFamily::GaussianLocation => {
                            let s2 = self.scale * self.scale;
                            let a = (u1 - u2) / s2;
                            a * (2.0 * u3 - u1 - u2) + 2.0 * a * a * s2
                        }
                        KernelFamily::Poisson => 2.0 * (u2 - u1) - u3 + u3 * (u1 / u2).powi(2),
                    };
                    worst = worst.max(log_value);
                }
            }
        }
        if worst == f64::NEG_INFINITY {
            // only reachable for a Poisson grid of {0}
            return Ok(0.0);
        }
        Ok(worst)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::GaussianLocation => write!(f, "gaussian(sigma={})", self.scale),
            KernelFamily::Poisson => write!(f, "poisson"),
        }
    }
}

#[inline]
fn poisson_log_mass(y: f64, u: f64) -> f64 {
    if u == 0.0 {
        return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let log_factorial = if y < 2.0 { 0.0 } else { ln_gamma(y + 1.0) };
    y * u.ln() - u - log_factorial
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_examples() {
        let g = Kernel::gaussian(1.0).unwrap();
        assert!((g.log_density(0.0, 0.0).unwrap() - (-0.918_938_533_204_672_8)).abs() < 1e-15);
        let p = Kernel::poisson();
        assert_eq!(p.log_density(0.0, 1.0).unwrap(), -1.0);
        // e^{-2} 2^3 / 3!
        let expected = -2.0 + 3.0 * 2f64.ln() - 6f64.ln();
        assert!((p.log_density(3.0, 2.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (-1.712_317_9)).abs() < 1e-7);
    }

    #[test]
    fn poisson_zero_atom() {
        let p = Kernel::poisson();
        assert_eq!(p.log_density(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(p.log_density(4.0, 0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn domain_errors() {
        let p = Kernel::poisson();
        assert!(p.log_density(-1.0, 1.0).is_err());
        assert!(p.log_density(1.5, 1.0).is_err());
        assert!(p.log_density(1.0, -0.1).is_err());
        let g = Kernel::gaussian(1.0).unwrap();
        assert!(g.log_density(f64::NAN, 0.0).is_err());
        assert!(g.log_density(0.0, f64::INFINITY).is_err());
        assert!(Kernel::gaussian(0.0).is_err());
        assert!(Kernel::gaussian(-1.0).is_err());
    }

    #[test]
    fn poisson_normalizes() {
        let p = Kernel::poisson();
        for &u in &[0.0, 0.3, 1.0, 4.2, 27.27, 60.0] {
            let total: f64 = (0..400).map(|y| p.density(y as f64, u).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10, "u = {u}: {total}");
        }
    }

    #[test]
    fn gaussian_normalizes() {
        let (x, w) = crate::math::gauss_legendre(20);
        for &sigma in &[0.5, 1.0, 2.5] {
            let g = Kernel::gaussian(sigma).unwrap();
            for &u in &[-3.0, 0.0, 12.5] {
                let (lo, hi) = (u - 14.0 * sigma, u + 14.0 * sigma);
                let panels = 112;
                let h = (hi - lo) / panels as f64;
                let mut total = 0.0;
                for k in 0..panels {
                    let a = lo + k as f64 * h;
                    for (xi, wi) in x.iter().zip(&w) {
                        let y = a + 0.5 * h * (xi + 1.0);
                        total += 0.5 * h * wi * g.density(y, u).unwrap();
                    }
                }
                assert!((total - 1.0).abs() < 1e-10, "sigma {sigma} u {u}: {total}");
            }
        }
    }

    #[test]
    fn log_space_consistency() {
        let g = Kernel::gaussian(1.3).unwrap();
        let p = Kernel::poisson();
        for i in 0..50 {
            let y = i as f64 * 0.7 - 10.0;
            let d = (-0.5 * ((y - 1.0) / 1.3f64).powi(2)).exp() / (1.3 * (2.0 * std::f64::consts::PI).sqrt());
            if d > 1e-300 {
                let rel = (g.density(y, 1.0).unwrap() - d).abs() / d;
                assert!(rel < 1e-12);
            }
            let k = i as f64;
            let mut direct = (-3.5f64).exp();
            for j in 1..=i {
                direct *= 3.5 / j as f64;
            }
            if direct > 1e-300 {
                let rel = (p.density(k, 3.5).unwrap() - direct).abs() / direct;
                assert!(rel < 1e-12, "k = {k}: rel {rel}");
            }
        }
    }

    #[test]
    fn continuity_in_location() {
        let g = Kernel::gaussian(1.0).unwrap();
        let p = Kernel::poisson();
        for &y in &[0.0, 1.0, 5.0] {
            for &u in &[0.5, 1.0, 3.0] {
                let mut last = f64::INFINITY;
                for k in 1..8 {
                    let h = 10f64.powi(-k);
                    let dg = (g.density(y, u + h).unwrap() - g.density(y, u).unwrap()).abs();
                    let dp = (p.density(y, u + h).unwrap() - p.density(y, u).unwrap()).abs();
                    let d = dg.max(dp);
                    assert!(d <= last + 1e-15);
                    last = d;
                }
                assert!(last < 1e-6);
            }
        }
        // Poisson at the zero atom is continuous from the right
        for &y in &[0.0, 1.0, 3.0] {
            let at0 = p.density(y, 0.0).unwrap();
            assert!((p.density(y, 1e-9).unwrap() - at0).abs() < 1e-8);
        }
    }

    #[test]
    fn lr_bound_singleton_is_one() {
        let g = Kernel::gaussian(1.0).unwrap();
        assert_eq!(g.check_lr_bound(&[2.0]).unwrap(), 1.0);
        assert_eq!(Kernel::poisson().check_lr_bound(&[3.0]).unwrap(), 1.0);
        assert_eq!(Kernel::poisson().check_lr_bound(&[0.0]).unwrap(), 1.0);
    }

    /// Truncated-sum oracle for the Poisson bound.
    fn poisson_lr_oracle(grid: &[f64]) -> f64 {
        let p = Kernel::poisson();
        let mut worst: f64 = 0.0;
        for &u1 in grid {
            for &u2 in grid {
                if u2 == 0.0 {
                    continue;
                }
                for &u3 in grid {
                    let mut total = 0.0;
                    for y in 0..=200 {
                        let y = y as f64;
                        let lr = p.log_density(y, u1).unwrap() - p.log_density(y, u2).unwrap();
                        total += (2.0 * lr + p.log_density(y, u3).unwrap()).exp();
                    }
                    worst = worst.max(total);
                }
            }
        }
        worst
    }

    /// Composite Simpson oracle for the Gaussian bound on [min − 12σ, max + 12σ + 1].
    fn gaussian_lr_oracle(grid: &[f64], sigma: f64) -> f64 {
        let g = Kernel::gaussian(sigma).unwrap();
        let lo = grid.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * sigma;
        let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sigma + 1.0;
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let mut worst: f64 = 0.0;
        for &u1 in grid {
            for &u2 in grid {
                for &u3 in grid {
                    let f = |y: f64| {
                        let lr = g.log_density(y, u1).unwrap() - g.log_density(y, u2).unwrap();
                        (2.0 * lr + g.log_density(y, u3).unwrap()).exp()
                    };
                    let mut s = f(lo) + f(hi);
                    for k in 1..steps {
                        let c = if k % 2 == 1 { 4.0 } else { 2.0 };
                        s += c * f(lo + k as f64 * h);
                    }
                    worst = worst.max(s * h / 3.0);
                }
            }
        }
        worst
    }

    #[test]
    fn lr_bound_poisson_matches_truncated_sum() {
        let grid = [1.0, 2.0];
        let oracle = poisson_lr_oracle(&grid);
        let value = Kernel::poisson().check_lr_bound(&grid).unwrap();
        assert!(value.is_finite());
        assert!((value - oracle).abs() / oracle < 1e-10, "{value} vs {oracle}");
        assert!((value - 4f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn lr_bound_gaussian_matches_quadrature() {
        let grid = [0.0, 1.0];
        let oracle = gaussian_lr_oracle(&grid, 1.0);
        let value = Kernel::gaussian(1.0).unwrap().check_lr_bound(&grid).unwrap();
        assert!(value.is_finite());
        assert!((value - oracle).abs() / oracle < 1e-8, "{value} vs {oracle}");
        assert!((value - 3f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn lr_bound_finite_for_grids_away_from_zero() {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 * 0.5).collect();
        assert!(Kernel::poisson().check_lr_bound(&grid).unwrap().is_finite());
        let g = Kernel::gaussian(1.0).unwrap();
        let grid: Vec<f64> = (0..8).map(|k| k as f64).collect();
        assert!(g.check_lr_bound(&grid).unwrap().is_finite());
        // zero in the grid only enters as u1 or u3
        let with_zero = [0.0, 1.0, 3.0];
        let v = Kernel::poisson().check_lr_bound(&with_zero).unwrap();
        assert!((v - poisson_lr_oracle(&with_zero)).abs() / v < 1e-10);
    }
}
