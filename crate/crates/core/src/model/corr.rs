//! Cholesky factor of a correlation matrix from unconstrained reals via
//! canonical partial correlations (`tanh`, then row-wise stick breaking).
//!
//! Free element `(i, k)`, `k < i`, lives at index `i(i-1)/2 + k`. With
//! `z = tanh(y)` and `P(i,k) = Π_{m<k} sqrt(1 - z(i,m)²)`:
//! `L(i,k) = z(i,k) P(i,k)` and `L(i,i) = P(i,i)`, so every row has unit norm.

use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Number of free elements for a `k × k` factor.
pub const fn n_free(k: usize) -> usize {
    k * (k - 1) / 2
}

#[inline]
fn free_index(i: usize, k: usize) -> usize {
    i * (i - 1) / 2 + k
}

/// `ln(1 - tanh(y)²) = -2 ln cosh(y)`, stable for large `|y|`.
#[inline]
fn log1m_tanh_sq(y: f64) -> f64 {
    let a = y.abs();
    -2.0 * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
}

#[derive(Debug, Clone)]
pub struct CorrCholesky {
    pub dim: usize,
    /// Row-major `dim × dim` lower-triangular factor.
    pub l: Vec<f64>,
    z: Vec<f64>,
    /// Log-Jacobian of `y ↦ L` plus the LKJ(η) kernel `Σ c_i ln L(i,i)`.
    pub log_density: f64,
}

impl CorrCholesky {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.l[i * self.dim + k]
    }
}

/// Coefficient of `ln(1 - z(i,k)²)` in the combined Jacobian and LKJ term.
#[inline]
fn log_coefficient(dim: usize, i: usize, k: usize, eta: f64) -> f64 {
    let lkj = dim as f64 - i as f64 - 1.0 + 2.0 * eta - 2.0;
    1.0 + 0.5 * (i as f64 - 1.0 - k as f64) + 0.5 * lkj
}

pub fn constrain(y: &[f64], dim: usize, eta: f64) -> CorrCholesky {
    debug_assert_eq!(y.len(), n_free(dim));
    let z: Vec<f64> = y.iter().map(|v| v.tanh()).collect();
    let mut l = vec![0.0; dim * dim];
    let mut log_density = 0.0;
    l[0] = 1.0;
    for i in 1..dim {
        let mut log_p = 0.0f64;
        for k in 0..i {
            let idx = free_index(i, k);
            l[i * dim + k] = z[idx] * (0.5 * log_p).exp();
            let lz = log1m_tanh_sq(y[idx]);
            log_p += lz;
            log_density += log_coefficient(dim, i, k, eta) * lz;
        }
        l[i * dim + i] = (0.5 * log_p).exp();
    }
    CorrCholesky {
        dim,
        l,
        z,
        log_density,
    }
}

/// Gradient in `y` of `Σ dl(i,k) L(i,k)`, plus that of `log_density` when
/// `with_density` is set. `dl` is the row-major gradient of some objective
/// with respect to `L`.
pub fn backprop(chol: &CorrCholesky, dl: &[f64], eta: f64, with_density: bool) -> Vec<f64> {
    let dim = chol.dim;
    let mut dy = vec![0.0; n_free(dim)];
    for i in 1..dim {
        let mut p = 1.0;
        for k in 0..i {
            let idx = free_index(i, k);
            let zk = chol.z[idx];
            let one_m = 1.0 - zk * zk;
            let mut g = dl[i * dim + k] * one_m * p;
            for j in (k + 1)..i {
                g -= dl[i * dim + j] * chol.at(i, j) * zk;
            }
            g -= dl[i * dim + i] * chol.at(i, i) * zk;
            if with_density {
                g -= 2.0 * log_coefficient(dim, i, k, eta) * zk;
            }
            dy[idx] = g;
            p *= one_m.sqrt();
        }
    }
    dy
}

/// Inverse of [`constrain`] for a valid correlation Cholesky factor.
pub fn unconstrain(l: &[f64], dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; n_free(dim)];
    for i in 1..dim {
        let mut remaining = 1.0f64;
        for k in 0..i {
            let x = l[i * dim + k];
            let z = (x / remaining.sqrt()).clamp(-1.0 + 1e-16, 1.0 - 1e-16);
            y[free_index(i, k)] = z.atanh();
            remaining -= x * x;
        }
    }
    y
}

/// Draw from LKJ(η) on the Cholesky factor via independent Beta-distributed
/// canonical partial correlations.
pub fn sample_lkj<R: Rng + ?Sized>(rng: &mut R, dim: usize, eta: f64) -> Vec<f64> {
    let mut y = vec![0.0; n_free(dim)];
    for i in 1..dim {
        for k in 0..i {
            let a = eta + (dim as f64 - 2.0 - k as f64) / 2.0;
            let b: f64 = Beta::new(a, a).expect("valid beta").sample(rng);
            let z = (2.0 * b - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            y[free_index(i, k)] = z.atanh();
        }
    }
    constrain(&y, dim, eta).l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::stream_rng;
    use rand::Rng;

    #[test]
    fn zero_gives_identity() {
        let c = constrain(&[0.0; 10], 5, 2.0);
        for i in 0..5 {
            for k in 0..5 {
                assert_eq!(c.at(i, k), if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rows_have_unit_norm_and_round_trip() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..50 {
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c = constrain(&y, 5, 2.0);
            for i in 0..5 {
                let norm: f64 = (0..5).map(|k| c.at(i, k).powi(2)).sum();
                assert!((norm - 1.0).abs() < 1e-12);
                assert!(c.at(i, i) > 0.0);
            }
            let back = unconstrain(&c.l, 5);
            for (a, b) in y.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{a} {b}");
            }
        }
    }

    #[test]
    fn backprop_matches_finite_difference() {
        let mut rng = stream_rng(2, 0);
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |y: &[f64]| {
            let c = constrain(y, 5, 2.0);
            c.l.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + c.log_density
        };
        let c = constrain(&y, 5, 2.0);
        let g = backprop(&c, &w, 2.0, true);
        for j in 0..10 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += 1e-6;
            ym[j] -= 1e-6;
            let fd = (f(&yp) - f(&ym)) / 2e-6;
            assert!(
                (g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "{j}: {} vs {fd}",
                g[j]
            );
        }
    }

    #[test]
    fn lkj_two_by_two_correlation_moments() {
        // For K = 2 the correlation r has density ∝ (1 - r²)^(η-1), i.e.
        // (r + 1)/2 ~ Beta(η, η): variance of r is 1/(2η + 1).
        let mut rng = stream_rng(4, 0);
        let eta = 2.0;
        let rs: Vec<f64> = (0..40_000)
            .map(|_| sample_lkj(&mut rng, 2, eta)[2])
            .collect();
        let var = crate::stats::variance(&rs);
        assert!((var - 1.0 / (2.0 * eta + 1.0)).abs() < 0.01, "{var}");
    }
}
