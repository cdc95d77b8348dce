//! Classical Fisher information, Cramer-Rao bounds and scene sweeps.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::NoiseCovariance;
use crate::forward::ForwardModel;
use crate::scene::{PhotonBudget, Scene};

/// Above this condition number the FIM is treated as singular.
pub const MAX_FIM_CONDITION: f64 = 1e12;

/// Modes with smaller expected fraction are excluded from the shot-noise sum.
pub const MU_FLOOR: f64 = 1e-15;

/// `sigma_QCRB(N) * sqrt(N)`, fixed by `2.3e-6 w0` at `N = 1e11`.
pub fn qcrb_constant() -> f64 {
    2.3e-6 * 1e11_f64.sqrt()
}

/// Benchmark quantum bound on `d` for `N` photons: `k_q / sqrt(N)`.
pub fn qcrb_benchmark(n: PhotonBudget) -> f64 {
    qcrb_constant() / n.get().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    ShotNoise,
    Gaussian,
}

impl NoiseModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ShotNoise => "shot_noise",
            Self::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub scene: Scene,
    pub fim: [[f64; 3]; 3],
    /// `sqrt((F^-1)_aa)` for `(d, c, p)`; infinite for unidentifiable parameters.
    pub crb: [f64; 3],
    pub noise_model: NoiseModel,
    pub photon_budget: Option<f64>,
    pub condition_number: f64,
    pub flags: Vec<String>,
}

impl FisherResult {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.fim[i][j])
    }

    pub fn is_singular(&self) -> bool {
        self.condition_number > MAX_FIM_CONDITION
    }
}

/// Per-parameter bounds and condition number from a symmetric FIM.
///
/// When the condition number exceeds [`MAX_FIM_CONDITION`] the eigenvectors
/// with eigenvalues below `lambda_max / MAX_FIM_CONDITION` span the
/// unidentifiable directions. Parameters with weight there get `+inf`; the
/// rest are bounded on the remaining subspace.
pub fn crb_from_fim(fim: &Matrix3<f64>) -> ([f64; 3], f64) {
    let eig = SymmetricEigen::new(*fim);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let cond = if lmax <= 0.0 || lmin <= 0.0 {
        f64::INFINITY
    } else {
        lmax / lmin
    };
    let cut = if cond > MAX_FIM_CONDITION {
        lmax.max(0.0) / MAX_FIM_CONDITION
    } else {
        0.0
    };
    let mut crb = [0.0; 3];
    for (a, out) in crb.iter_mut().enumerate() {
        let mut var = 0.0;
        let mut null_weight = 0.0;
        for k in 0..3 {
            let v2 = eig.eigenvectors[(a, k)].powi(2);
            let lam = eig.eigenvalues[k];
            if lam <= cut || lam <= 0.0 {
                null_weight += v2;
            } else {
                var += v2 / lam;
            }
        }
        *out = if null_weight > 1e-6 || lmax <= 0.0 {
            f64::INFINITY
        } else {
            var.sqrt()
        };
    }
    (crb, cond)
}

fn finish(
    scene: &Scene,
    fim: Matrix3<f64>,
    noise_model: NoiseModel,
    photon_budget: Option<f64>,
    mut flags: Vec<String>,
) -> FisherResult {
    let sym = (fim + fim.transpose()) * 0.5;
    let (crb, condition_number) = crb_from_fim(&sym);
    if condition_number > MAX_FIM_CONDITION {
        flags.push("singular".into());
    }
    FisherResult {
        scene: *scene,
        fim: [0, 1, 2].map(|i| [0, 1, 2].map(|j| sym[(i, j)])),
        crb,
        noise_model,
        photon_budget,
        condition_number,
        flags,
    }
}

/// Poisson FIM `N sum_i (dmu_i)(dmu_i)^T / mu_i` over the measured modes.
///
/// The `mu_i` are fractions of the total light and already carry the power
/// split between sorters, so each demux sees `N * split` photons.
pub fn fim_shot_noise(model: &ForwardModel, scene: &Scene, n: PhotonBudget) -> Result<FisherResult> {
    let (mu, jac) = model.mu_and_jacobian(scene)?;
    if jac.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateScene);
    }
    if let Some(v) = mu.iter().find(|v| **v < 0.0) {
        return Err(Error::OutOfRange {
            field: "mu",
            value: *v,
        });
    }
    let modes = model.response().modes();
    let mut flags = Vec::new();
    let mut fim = Matrix3::zeros();
    for i in 0..mu.len() {
        let row = jac.row(i);
        if mu[i] < MU_FLOOR {
            if row.iter().all(|v| *v == 0.0) {
                flags.push(format!("limit_mode:{}", modes[i].label()));
            } else {
                flags.push(format!("mode_excluded:{}", modes[i].label()));
            }
            continue;
        }
        for a in 0..3 {
            for b in 0..3 {
                fim[(a, b)] += row[a] * row[b] / mu[i];
            }
        }
    }
    Ok(finish(scene, fim * n.get(), NoiseModel::ShotNoise, Some(n.get()), flags))
}

/// Gaussian FIM `J^T Gamma^-1 J`, with `Gamma` evaluated at the scene and its
/// derivative term dropped.
pub fn fim_gaussian(model: &ForwardModel, scene: &Scene, cov: &NoiseCovariance) -> Result<FisherResult> {
    let jac = model.jacobian(scene)?;
    if cov.n_modes() != jac.nrows() {
        return Err(Error::Dimension {
            expected: jac.nrows(),
            found: cov.n_modes(),
        });
    }
    let at = cov.at(scene)?;
    let f = jac.transpose() * &at.inverse * &jac;
    let fim = Matrix3::from_fn(|i, j| f[(i, j)]);
    Ok(finish(scene, fim, NoiseModel::Gaussian, None, Vec::new()))
}

/// Noise description for a sweep.
#[derive(Debug, Clone)]
pub enum NoiseConfig {
    ShotNoise(PhotonBudget),
    Gaussian(NoiseCovariance),
}

impl NoiseConfig {
    pub fn model(&self) -> NoiseModel {
        match self {
            Self::ShotNoise(_) => NoiseModel::ShotNoise,
            Self::Gaussian(_) => NoiseModel::Gaussian,
        }
    }

    pub fn fim(&self, model: &ForwardModel, scene: &Scene) -> Result<FisherResult> {
        match self {
            Self::ShotNoise(n) => fim_shot_noise(model, scene, *n),
            Self::Gaussian(c) => fim_gaussian(model, scene, c),
        }
    }
}

/// Cartesian grid of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl SceneGrid {
    /// Separations 0.01..0.3 at 30 points, centroids over [-0.15, 0.15] at 10
    /// points, balanced brightness.
    pub fn fig1() -> Self {
        Self {
            d: linspace(0.01, 0.3, 30),
            c: linspace(-0.15, 0.15, 10),
            p: vec![0.5],
        }
    }

    pub fn scenes(&self) -> Result<Vec<Scene>> {
        let mut out = Vec::with_capacity(self.d.len() * self.c.len() * self.p.len());
        for &d in &self.d {
            for &c in &self.c {
                for &p in &self.p {
                    out.push(Scene::new(d, c, p)?);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub scene: Scene,
    pub result: Option<FisherResult>,
    pub error: Option<String>,
}

impl SweepEntry {
    pub fn crb(&self) -> [f64; 3] {
        self.result.as_ref().map(|r| r.crb).unwrap_or([f64::INFINITY; 3])
    }
}

/// Mean and central-90% band of finite CRBs at one separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub d: f64,
    pub n_scenes: usize,
    pub n_finite: [usize; 3],
    pub mean: [f64; 3],
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSweep {
    pub noise_model: NoiseModel,
    pub entries: Vec<SweepEntry>,
    pub summary: Vec<BandSummary>,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn summarize(d: f64, entries: &[&SweepEntry]) -> BandSummary {
    let mut out = BandSummary {
        d,
        n_scenes: entries.len(),
        n_finite: [0; 3],
        mean: [f64::NAN; 3],
        lo: [f64::NAN; 3],
        hi: [f64::NAN; 3],
    };
    for a in 0..3 {
        let mut v: Vec<f64> = entries
            .iter()
            .map(|e| e.crb()[a])
            .filter(|x| x.is_finite())
            .collect();
        v.sort_by(f64::total_cmp);
        out.n_finite[a] = v.len();
        if v.is_empty() {
            continue;
        }
        out.mean[a] = v.iter().sum::<f64>() / v.len() as f64;
        out.lo[a] = percentile(&v, 5.0);
        out.hi[a] = percentile(&v, 95.0);
    }
    out
}

/// FIM and CRB for every scene, grouped by separation. Scene failures are
/// recorded on their entry.
pub fn crb_sweep(model: &ForwardModel, grid: &[Scene], noise: &NoiseConfig) -> Result<EnsembleSweep> {
    if grid.is_empty() {
        return Err(Error::InvalidObservation("empty scene grid".into()));
    }
    let entries: Vec<SweepEntry> = grid
        .par_iter()
        .map(|s| match noise.fim(model, s) {
            Ok(r) => SweepEntry {
                scene: *s,
                result: Some(r),
                error: None,
            },
            Err(e) => SweepEntry {
                scene: *s,
                result: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut ds: Vec<f64> = entries.iter().map(|e| e.scene.d()).collect();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let summary = ds
        .iter()
        .map(|&d| {
            let group: Vec<&SweepEntry> = entries.iter().filter(|e| e.scene.d() == d).collect();
            summarize(d, &group)
        })
        .collect();
    Ok(EnsembleSweep {
        noise_model: noise.model(),
        entries,
        summary,
    })
}

/// Sweep CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_ref: f64,
    pub c_ref: f64,
    pub p_ref: f64,
    pub noise_model: NoiseModel,
    pub config: String,
    pub sigma_d_crb: f64,
    pub sigma_c_crb: f64,
    pub sigma_p_crb: f64,
    pub fim_cond: f64,
    pub flags: String,
}

impl EnsembleSweep {
    pub fn rows(&self, config: &str) -> Vec<SweepRow> {
        self.entries
            .iter()
            .map(|e| {
                let crb = e.crb();
                let mut flags: Vec<String> = e.result.as_ref().map(|r| r.flags.clone()).unwrap_or_default();
                if let Some(err) = &e.error {
                    flags.push(format!("error:{err}"));
                }
                SweepRow {
                    d_ref: e.scene.d(),
                    c_ref: e.scene.c(),
                    p_ref: e.scene.p(),
                    noise_model: self.noise_model,
                    config: config.to_string(),
                    sigma_d_crb: crb[0],
                    sigma_c_crb: crb[1],
                    sigma_p_crb: crb[2],
                    fim_cond: e.result.as_ref().map(|r| r.condition_number).unwrap_or(f64::INFINITY),
                    flags: flags.join(";"),
                }
            })
            .collect()
    }
}
