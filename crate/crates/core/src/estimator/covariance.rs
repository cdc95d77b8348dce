//! Observation noise covariance: fixed per scene or interpolated over `(d, c)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ObservationSeries, Scene};

/// Relative size of the diagonal regularizer, times `trace / M`.
pub const RIDGE_SCALE: f64 = 1e-12;

/// Covariance of the observation vector.
#[derive(Debug, Clone)]
pub enum NoiseCovariance {
    Fixed(FixedCovariance),
    ParameterDependent(CovarianceSurface),
}

/// A symmetric positive-definite covariance with its inverse and log-det.
#[derive(Debug, Clone)]
pub struct FixedCovariance {
    gamma: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    ridge: f64,
}

fn default_ridge(gamma: &DMatrix<f64>) -> f64 {
    let m = gamma.nrows().max(1) as f64;
    let scale = gamma.trace() / m;
    if scale > 0.0 {
        RIDGE_SCALE * scale
    } else {
        RIDGE_SCALE
    }
}

impl FixedCovariance {
    /// Symmetrizes, adds the default ridge and factors.
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        let ridge = default_ridge(&gamma);
        Self::with_ridge(gamma, ridge)
    }

    pub fn with_ridge(gamma: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() {
            return Err(Error::Dimension {
                expected: gamma.nrows(),
                found: gamma.ncols(),
            });
        }
        let m = gamma.nrows();
        let sym = (&gamma + gamma.transpose()) * 0.5 + DMatrix::identity(m, m) * ridge;
        let chol = sym.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let inverse = chol.inverse();
        Ok(Self {
            gamma: sym,
            inverse,
            log_det,
            ridge,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self::with_ridge(DMatrix::identity(m, m), 0.0).expect("identity is SPD")
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_ridge(&self.gamma * factor, 0.0)
    }
}

impl NoiseCovariance {
    pub fn fixed(gamma: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Fixed(FixedCovariance::new(gamma)?))
    }

    pub fn identity(m: usize) -> Self {
        Self::Fixed(FixedCovariance::identity(m))
    }

    pub fn n_modes(&self) -> usize {
        match self {
            Self::Fixed(f) => f.gamma.nrows(),
            Self::ParameterDependent(s) => s.m,
        }
    }

    pub fn is_parameter_dependent(&self) -> bool {
        matches!(self, Self::ParameterDependent(_))
    }

    /// Covariance at a scene, with derivatives in `(d, c, p)` when it varies.
    pub fn at(&self, scene: &Scene) -> Result<CovarianceAt> {
        match self {
            Self::Fixed(f) => Ok(CovarianceAt {
                inverse: f.inverse.clone(),
                log_det: f.log_det,
                derivatives: None,
            }),
            Self::ParameterDependent(s) => s.at(scene),
        }
    }
}

/// A covariance evaluated at one scene.
#[derive(Debug, Clone)]
pub struct CovarianceAt {
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
    /// `dGamma/dd` and `dGamma/dc`; zero in `p` by construction.
    pub derivatives: Option<[DMatrix<f64>; 2]>,
}

/// Sample covariance of the bins, ridge-regularized.
pub fn estimate_covariance(series: &ObservationSeries) -> Result<NoiseCovariance> {
    Ok(NoiseCovariance::Fixed(FixedCovariance::new(
        sample_covariance(series)?,
    )?))
}

/// Unbiased sample covariance without regularization.
pub fn sample_covariance(series: &ObservationSeries) -> Result<DMatrix<f64>> {
    let m = series.n_modes();
    let n = series.n_bins();
    if n < m + 2 {
        return Err(Error::TooFewBins { bins: n, modes: m });
    }
    // Shifted by the first bin so identical bins give an exact zero.
    let b0 = &series.bins()[0];
    let mut shift = DVector::zeros(m);
    for b in series.bins() {
        shift += b - b0;
    }
    let mean = b0 + shift / n as f64;
    let mut acc = DMatrix::zeros(m, m);
    for b in series.bins() {
        let r = b - &mean;
        acc += &r * r.transpose();
    }
    Ok(acc / (n as f64 - 1.0))
}

/// Per-entry bivariate polynomial `Gamma_ij(d, c)` at fixed `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceSurface {
    m: usize,
    degree: u32,
    p: f64,
    d_range: (f64, f64),
    c_range: (f64, f64),
    exponents: Vec<(u32, u32)>,
    /// One coefficient vector per upper-triangular entry, row-major.
    coefficients: Vec<Vec<f64>>,
}

pub const DEFAULT_SURFACE_DEGREE: u32 = 4;

fn exponents(degree: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in 0..=total {
            out.push((a, total - a));
        }
    }
    out
}

fn unit(v: f64, range: (f64, f64)) -> (f64, bool) {
    let mid = 0.5 * (range.0 + range.1);
    let half = (0.5 * (range.1 - range.0)).max(f64::MIN_POSITIVE);
    let clamped = v.clamp(range.0, range.1);
    ((clamped - mid) / half, clamped != v)
}

impl CovarianceSurface {
    /// Least-squares fit of every covariance entry over sampled scenes. All
    /// samples should share one `p`; the first sample's value is recorded.
    pub fn fit(samples: &[(Scene, DMatrix<f64>)], degree: u32) -> Result<Self> {
        let exps = exponents(degree);
        let first = samples.first().ok_or(Error::InsufficientPoints {
            points: 0,
            degree: degree as usize,
            needed: exps.len(),
        })?;
        if samples.len() < exps.len() {
            return Err(Error::InsufficientPoints {
                points: samples.len(),
                degree: degree as usize,
                needed: exps.len(),
            });
        }
        let m = first.1.nrows();
        let mut d_range = (f64::INFINITY, f64::NEG_INFINITY);
        let mut c_range = (f64::INFINITY, f64::NEG_INFINITY);
        for (s, g) in samples {
            if g.nrows() != m || g.ncols() != m {
                return Err(Error::Dimension {
                    expected: m,
                    found: g.nrows(),
                });
            }
            d_range = (d_range.0.min(s.d()), d_range.1.max(s.d()));
            c_range = (c_range.0.min(s.c()), c_range.1.max(s.c()));
        }
        let design = DMatrix::from_fn(samples.len(), exps.len(), |r, k| {
            let (u, _) = unit(samples[r].0.d(), d_range);
            let (v, _) = unit(samples[r].0.c(), c_range);
            u.powi(exps[k].0 as i32) * v.powi(exps[k].1 as i32)
        });
        let svd = design.svd(true, true);
        let mut coefficients = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in i..m {
                let y = DVector::from_iterator(samples.len(), samples.iter().map(|(_, g)| g[(i, j)]));
                let coef = svd
                    .solve(&y, 1e-14)
                    .map_err(|_| Error::IllConditioned(f64::INFINITY))?;
                coefficients.push(coef.as_slice().to_vec());
            }
        }
        Ok(Self {
            m,
            degree,
            p: first.0.p(),
            d_range,
            c_range,
            exponents: exps,
            coefficients,
        })
    }

    /// A surface that is the same matrix everywhere.
    pub fn constant(gamma: &DMatrix<f64>, p: f64) -> Self {
        let m = gamma.nrows();
        let mut coefficients = Vec::new();
        for i in 0..m {
            for j in i..m {
                coefficients.push(vec![0.5 * (gamma[(i, j)] + gamma[(j, i)])]);
            }
        }
        Self {
            m,
            degree: 0,
            p,
            d_range: (-1.0, 1.0),
            c_range: (-1.0, 1.0),
            exponents: vec![(0, 0)],
            coefficients,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn validity(&self) -> ((f64, f64), (f64, f64)) {
        (self.d_range, self.c_range)
    }

    /// `Gamma(d, c)` and its partial derivatives, clamped to the validity
    /// ranges (derivatives vanish where clamped).
    pub fn evaluate(&self, d: f64, c: f64) -> [DMatrix<f64>; 3] {
        let (u, du_clamped) = unit(d, self.d_range);
        let (v, dv_clamped) = unit(c, self.c_range);
        let du_dd = if du_clamped {
            0.0
        } else {
            2.0 / (self.d_range.1 - self.d_range.0).max(f64::MIN_POSITIVE)
        };
        let dv_dc = if dv_clamped {
            0.0
        } else {
            2.0 / (self.c_range.1 - self.c_range.0).max(f64::MIN_POSITIVE)
        };
        let pw = |base: f64, e: u32| if e == 0 { 1.0 } else { base.powi(e as i32) };
        let dpw = |base: f64, e: u32| {
            if e == 0 {
                0.0
            } else {
                e as f64 * pw(base, e - 1)
            }
        };
        let mut g = DMatrix::zeros(self.m, self.m);
        let mut gd = DMatrix::zeros(self.m, self.m);
        let mut gc = DMatrix::zeros(self.m, self.m);
        let mut k = 0;
        for i in 0..self.m {
            for j in i..self.m {
                let (mut val, mut vd, mut vc) = (0.0, 0.0, 0.0);
                for (coef, &(a, b)) in self.coefficients[k].iter().zip(&self.exponents) {
                    val += coef * pw(u, a) * pw(v, b);
                    vd += coef * dpw(u, a) * pw(v, b) * du_dd;
                    vc += coef * pw(u, a) * dpw(v, b) * dv_dc;
                }
                for (mat, x) in [(&mut g, val), (&mut gd, vd), (&mut gc, vc)] {
                    mat[(i, j)] = x;
                    mat[(j, i)] = x;
                }
                k += 1;
            }
        }
        [g, gd, gc]
    }

    fn at(&self, scene: &Scene) -> Result<CovarianceAt> {
        let [g, gd, gc] = self.evaluate(scene.d(), scene.c());
        let fixed = FixedCovariance::new(g)?;
        Ok(CovarianceAt {
            inverse: fixed.inverse,
            log_det: fixed.log_det,
            derivatives: Some([gd, gc]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::PhotonBudget;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn series(bins: Vec<DVector<f64>>) -> ObservationSeries {
        ObservationSeries::new(bins, 1e-4, PhotonBudget::default()).unwrap()
    }

    #[test]
    fn identical_bins_give_pure_ridge() {
        let bin = DVector::from_vec(vec![0.4, 0.05, 0.01, 0.001, 0.02]);
        let s = series(vec![bin; 100]);
        let NoiseCovariance::Fixed(f) = estimate_covariance(&s).unwrap() else {
            unreachable!()
        };
        assert_eq!(*f.matrix(), DMatrix::identity(5, 5) * f.ridge());
        assert!(f.ridge() > 0.0);
    }

    #[test]
    fn recovers_diagonal_variances() {
        let vars: [f64; 5] = [4e-6, 1e-6, 2.5e-7, 1e-8, 9e-7];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bins: Vec<_> = (0..100)
            .map(|_| {
                DVector::from_iterator(
                    5,
                    vars.iter()
                        .map(|v| 0.1 + Normal::new(0.0, v.sqrt()).unwrap().sample(&mut rng)),
                )
            })
            .collect();
        let g = sample_covariance(&series(bins)).unwrap();
        for i in 0..5 {
            let ratio = g[(i, i)] / vars[i];
            assert!((ratio - 1.0).abs() < 0.3, "mode {i}: ratio {ratio}");
        }
    }

    #[test]
    fn too_few_bins() {
        let bin = DVector::from_vec(vec![0.4, 0.05, 0.01, 0.001, 0.02]);
        assert!(matches!(
            estimate_covariance(&series(vec![bin; 3])),
            Err(Error::TooFewBins { bins: 3, modes: 5 })
        ));
    }

    #[test]
    fn non_spd_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            FixedCovariance::new(g),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn surface_reproduces_quadratic_entries() {
        let mut samples = Vec::new();
        for i in 0..6 {
            for j in 0..5 {
                let d = 0.05 + 0.05 * i as f64;
                let c = -0.06 + 0.03 * j as f64;
                let a = 1e-6 * (1.0 + d * d + 0.5 * c);
                let b = 2e-7 * (1.0 - d * c);
                let g = DMatrix::from_row_slice(2, 2, &[a, 0.1 * b, 0.1 * b, b]);
                samples.push((Scene::new(d, c, 0.3).unwrap(), g));
            }
        }
        let surf = CovarianceSurface::fit(&samples, 4).unwrap();
        let [g, gd, gc] = surf.evaluate(0.12, 0.01);
        assert!((g[(0, 0)] - 1e-6 * (1.0 + 0.0144 + 0.005)).abs() < 1e-17);
        assert!((gd[(0, 0)] - 1e-6 * 0.24).abs() < 1e-15);
        assert!((gc[(1, 1)] + 2e-7 * 0.12).abs() < 1e-15);
        // Clamped outside the sampled range.
        let [_, gd_out, _] = surf.evaluate(0.9, 0.01);
        assert_eq!(gd_out[(0, 0)], 0.0);
        assert_eq!(surf.p(), 0.3);
    }

    #[test]
    fn surface_needs_enough_samples() {
        let g = DMatrix::identity(2, 2);
        let samples = vec![(Scene::new(0.1, 0.0, 0.5).unwrap(), g); 5];
        assert!(matches!(
            CovarianceSurface::fit(&samples, 4),
            Err(Error::InsufficientPoints { .. })
        ));
    }
}
