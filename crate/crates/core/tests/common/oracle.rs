//! Independent reference computations used by tests only.
//!
//! Nothing here calls into the library's closed forms: mode overlaps come from
//! Gauss-Hermite quadrature of the mode functions, derivatives from finite
//! differences, variances from streaming accumulators.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss-Hermite nodes and weights for the weight function `exp(-t^2)`,
/// from the eigen-decomposition of the Jacobi matrix (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Physicists' Hermite polynomial by three-term recurrence.
pub fn hermite(n: usize, t: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * t;
    for k in 1..n {
        let h2 = 2.0 * t * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Normalization of `u_n(x) = N_n H_n(sqrt(2) x) exp(-x^2)` with unit waist.
pub fn mode_norm(n: usize) -> f64 {
    (2.0 / PI).powf(0.25) / (2f64.powi(n as i32) * factorial(n)).sqrt()
}

fn rule200() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(200))
}

/// Overlap amplitude `<u_n | u_0(. - shift)>` by 200-node quadrature.
pub fn overlap_amplitude(n: usize, shift: f64) -> f64 {
    let (t, w) = rule200();
    let mut acc = 0.0;
    for k in 0..t.len() {
        acc += w[k] * hermite(n, t[k]) * (2f64.sqrt() * t[k] * shift - shift * shift).exp();
    }
    acc * mode_norm(n) * mode_norm(0) / 2f64.sqrt()
}

/// Intensity fraction of a displaced fundamental beam in `HG_{n0}`.
pub fn quadrature_fraction(n: usize, shift: f64) -> f64 {
    let a = overlap_amplitude(n, shift);
    a * a
}

/// Norm of `u_n` by the same quadrature (should be 1).
pub fn quadrature_norm(n: usize) -> f64 {
    let (t, w) = rule200();
    let mut acc = 0.0;
    for k in 0..t.len() {
        let h = hermite(n, t[k]);
        acc += w[k] * h * h;
    }
    acc * mode_norm(n).powi(2) / 2f64.sqrt()
}

/// Per-mode fractions for the default dual layout, demux 1 orders 0..3 then
/// demux 2 order 1, split evenly, computed from quadrature only.
pub fn dual_response(x: f64, shift2: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..4).map(|n| 0.5 * quadrature_fraction(n, x)).collect();
    v.push(0.5 * quadrature_fraction(1, x - shift2));
    v
}

pub fn single_response(x: f64) -> Vec<f64> {
    (0..4).map(|n| quadrature_fraction(n, x)).collect()
}

/// Central finite difference.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Welford accumulator, used to cross-check two-pass statistics.
#[derive(Default, Clone, Copy)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_std(&self) -> f64 {
        (self.m2 / (self.n as f64 - 1.0)).sqrt()
    }
}

/// Brute-force Poisson Fisher matrix from explicit loops over modes with
/// numerically differentiated mean fractions.
pub fn brute_force_shot_fim(mu: impl Fn([f64; 3]) -> Vec<f64>, theta: [f64; 3], n: f64) -> [[f64; 3]; 3] {
    let jac = numeric_jacobian(&mu, theta);
    let m0 = mu(theta);
    let mut f = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for i in 0..m0.len() {
                s += jac[i][a] * jac[i][b] / m0[i];
            }
            f[a][b] = n * s;
        }
    }
    f
}

/// Brute-force Gaussian Fisher matrix `J^T W J` with an explicit inverse
/// covariance `w`.
pub fn brute_force_gaussian_fim(
    mu: impl Fn([f64; 3]) -> Vec<f64>,
    theta: [f64; 3],
    w: &[Vec<f64>],
) -> [[f64; 3]; 3] {
    let jac = numeric_jacobian(&mu, theta);
    let m = jac.len();
    let mut f = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += jac[i][a] * w[i][j] * jac[j][b];
                }
            }
            f[a][b] = s;
        }
    }
    f
}

/// Five-point stencil Jacobian, rows over modes.
pub fn numeric_jacobian(mu: &impl Fn([f64; 3]) -> Vec<f64>, theta: [f64; 3]) -> Vec<[f64; 3]> {
    let m = mu(theta).len();
    let mut jac = vec![[0.0; 3]; m];
    let h = 1e-4;
    for a in 0..3 {
        let at = |k: f64| {
            let mut t = theta;
            t[a] += k * h;
            mu(t)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for i in 0..m {
            jac[i][a] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac
}

/// Inverse of a 3x3 matrix by cofactors.
pub fn inverse3(f: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1])
        - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
        + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = f[r0][c0] * f[r1][c1] - f[r0][c1] * f[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[i][j] = sign * minor / det;
        }
    }
    inv
}
