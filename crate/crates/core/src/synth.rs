//! Synthetic observations and emulation of indistinguishable-source scenes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationScan;
use crate::error::{Error, Result};
use crate::fisher::linspace;
use crate::forward::ForwardModel;
use crate::response::SourceResponse;
use crate::scene::{ModeId, ObservationSeries, PhotonBudget, Scene, Source, DEFAULT_BIN_DURATION};

/// Poisson means at or above this use the normal approximation.
pub const EXACT_POISSON_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    ShotNoise,
    AdditiveGaussian,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Per-mode standard deviation in fraction units; empty means zero.
    #[serde(default)]
    pub sigma: Vec<f64>,
    pub seed: u64,
    pub bins: usize,
    pub budget: PhotonBudget,
    #[serde(default = "default_bin_duration")]
    pub bin_duration: f64,
}

fn default_bin_duration() -> f64 {
    DEFAULT_BIN_DURATION
}

impl NoiseSpec {
    pub fn shot_noise(budget: PhotonBudget, bins: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::ShotNoise,
            sigma: Vec::new(),
            seed,
            bins,
            budget,
            bin_duration: DEFAULT_BIN_DURATION,
        }
    }

    pub fn gaussian(sigma: Vec<f64>, bins: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            sigma,
            seed,
            bins,
            budget: PhotonBudget::default(),
            bin_duration: DEFAULT_BIN_DURATION,
        }
    }

    pub fn combined(budget: PhotonBudget, sigma: Vec<f64>, bins: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Combined,
            sigma,
            seed,
            bins,
            budget,
            bin_duration: DEFAULT_BIN_DURATION,
        }
    }

    fn shot(&self) -> bool {
        matches!(self.kind, NoiseKind::ShotNoise | NoiseKind::Combined)
    }

    fn additive(&self) -> bool {
        matches!(self.kind, NoiseKind::AdditiveGaussian | NoiseKind::Combined)
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.additive() && !self.sigma.is_empty() && self.sigma.len() != m {
            return Err(Error::Dimension {
                expected: m,
                found: self.sigma.len(),
            });
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::OutOfRange {
                field: "sigma",
                value: *s,
            });
        }
        Ok(())
    }
}

/// Seeded generator for substream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Poisson draw: inversion for small means, rounded normal above.
pub fn poisson(lambda: f64, rng: &mut impl Rng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda < EXACT_POISSON_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf && p > 0.0 {
            k += 1.0;
            p *= lambda / k;
            cdf += p;
        }
        return k;
    }
    let z: f64 = rng.sample(StandardNormal);
    (lambda + lambda.sqrt() * z).round().max(0.0)
}

fn noisy(mean: &DVector<f64>, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = spec.budget.get();
    let mut y = mean.clone();
    if spec.shot() {
        for v in y.iter_mut() {
            *v = poisson(n * *v, rng) / n;
        }
    }
    if spec.additive() {
        for (i, v) in y.iter_mut().enumerate() {
            let s = spec.sigma.get(i).copied().unwrap_or(0.0);
            if s > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *v += s * z;
            }
        }
    }
    y
}

fn series_from_mean(mean: &DVector<f64>, spec: &NoiseSpec, stream: u64) -> Vec<DVector<f64>> {
    let mut rng = stream_rng(spec.seed, stream);
    (0..spec.bins).map(|_| noisy(mean, spec, &mut rng)).collect()
}

/// Binned observations of `scene` on substream 0.
pub fn simulate_bins(model: &ForwardModel, scene: &Scene, spec: &NoiseSpec) -> Result<ObservationSeries> {
    simulate_bins_stream(model, scene, spec, 0)
}

/// Binned observations of `scene` on an explicit substream.
pub fn simulate_bins_stream(
    model: &ForwardModel,
    scene: &Scene,
    spec: &NoiseSpec,
    stream: u64,
) -> Result<ObservationSeries> {
    spec.check(model.n_modes())?;
    let mu = model.mu(scene)?;
    ObservationSeries::new(series_from_mean(&mu, spec, stream), spec.bin_duration, spec.budget)
}

/// Simulates every scene on its own substream (its index), in parallel.
pub fn simulate_ensemble(
    model: &ForwardModel,
    scenes: &[Scene],
    spec: &NoiseSpec,
) -> Vec<Result<ObservationSeries>> {
    scenes
        .par_iter()
        .enumerate()
        .map(|(k, s)| simulate_bins_stream(model, s, spec, k as u64))
        .collect()
}

/// Time series of one source held at a fixed position.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSourceTimeSeries {
    position: f64,
    series: Vec<DVector<f64>>,
    mean: DVector<f64>,
}

impl SingleSourceTimeSeries {
    pub fn new(position: f64, series: Vec<DVector<f64>>) -> Result<Self> {
        let first = series.first().ok_or(Error::TooFewBins { bins: 0, modes: 0 })?;
        let m = first.len();
        if let Some(b) = series.iter().find(|b| b.len() != m) {
            return Err(Error::Dimension {
                expected: m,
                found: b.len(),
            });
        }
        let mut mean = DVector::zeros(m);
        for b in &series {
            mean += b;
        }
        mean /= series.len() as f64;
        Ok(Self {
            position,
            series,
            mean,
        })
    }

    /// Series built from a known mean and residuals.
    pub fn from_parts(position: f64, mean: DVector<f64>, residuals: &[DVector<f64>]) -> Result<Self> {
        let mut s = Self::new(position, residuals.iter().map(|r| &mean + r).collect())?;
        s.mean = mean;
        Ok(s)
    }

    /// Simulated calibration series of `source` parked at `x`.
    pub fn simulate(
        response: &dyn SourceResponse,
        source: Source,
        x: f64,
        spec: &NoiseSpec,
        stream: u64,
    ) -> Result<Self> {
        spec.check(response.n_modes())?;
        let mean = response.response(source, x)?;
        Self::new(x, series_from_mean(&mean, spec, stream))
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len()
    }

    pub fn series(&self) -> &[DVector<f64>] {
        &self.series
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn residual(&self, k: usize) -> DVector<f64> {
        &self.series[k] - &self.mean
    }

    pub fn residuals(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|k| self.residual(k)).collect()
    }
}

/// Emulated two-source observations with the scene they represent.
#[derive(Debug, Clone, PartialEq)]
pub struct Emulated {
    pub series: ObservationSeries,
    pub scene: Scene,
}

/// Two-source bins from one source's series at two positions:
/// `p mean_1 + (1 - p) mean_2 + r_1 + r_2`. The lower position becomes
/// source one; if `ts2` is the lower one the weights swap.
pub fn emulate_indistinguishable(
    ts1: &SingleSourceTimeSeries,
    ts2: &SingleSourceTimeSeries,
    p: f64,
) -> Result<Emulated> {
    emulate_with_means(ts1, ts2, ts1.mean(), ts2.mean(), p, PhotonBudget::default())
}

fn emulate_with_means(
    ts1: &SingleSourceTimeSeries,
    ts2: &SingleSourceTimeSeries,
    mean1: &DVector<f64>,
    mean2: &DVector<f64>,
    p: f64,
    budget: PhotonBudget,
) -> Result<Emulated> {
    if ts1.len() != ts2.len() {
        return Err(Error::LengthMismatch(ts1.len(), ts2.len()));
    }
    if ts1.n_modes() != ts2.n_modes() {
        return Err(Error::Dimension {
            expected: ts1.n_modes(),
            found: ts2.n_modes(),
        });
    }
    let (x1, x2) = (ts1.position(), ts2.position());
    if x1 == x2 {
        return Err(Error::SamePosition(x1));
    }
    let (lo, hi, mlo, mhi, w) = if x1 < x2 {
        (ts1, ts2, mean1, mean2, p)
    } else {
        (ts2, ts1, mean2, mean1, 1.0 - p)
    };
    let scene = Scene::new(hi.position() - lo.position(), 0.5 * (lo.position() + hi.position()), w)?;
    let base = mlo * w + mhi * (1.0 - w);
    let bins = (0..lo.len())
        .map(|k| &base + lo.residual(k) + hi.residual(k))
        .collect();
    Ok(Emulated {
        series: ObservationSeries::new(bins, DEFAULT_BIN_DURATION, budget)?,
        scene,
    })
}

/// Calibration series recorded on a grid of positions for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSeries {
    points: Vec<SingleSourceTimeSeries>,
}

/// Grid-snapped emulation and the snap distance of each position.
#[derive(Debug, Clone, PartialEq)]
pub struct SnappedEmulation {
    pub emulated: Emulated,
    pub snap: [f64; 2],
}

impl CalibrationSeries {
    pub fn new(mut points: Vec<SingleSourceTimeSeries>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientSupport("no calibration series".into()));
        }
        points.sort_by(|a, b| a.position().total_cmp(&b.position()));
        Ok(Self { points })
    }

    /// Simulated calibration run of `source` over `positions`.
    pub fn simulate(
        response: &dyn SourceResponse,
        source: Source,
        positions: &[f64],
        spec: &NoiseSpec,
    ) -> Result<Self> {
        let points = positions
            .par_iter()
            .enumerate()
            .map(|(k, &x)| SingleSourceTimeSeries::simulate(response, source, x, spec, k as u64))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn points(&self) -> &[SingleSourceTimeSeries] {
        &self.points
    }

    /// Per-position means as a calibration scan of `source`. Means are
    /// clipped to [0, 1], which noise can push them past.
    pub fn mean_scan(&self, source: Source, modes: Vec<ModeId>) -> Result<CalibrationScan> {
        let m = modes.len();
        let mut fractions = DMatrix::zeros(self.points.len(), m);
        for (r, ts) in self.points.iter().enumerate() {
            if ts.n_modes() != m {
                return Err(Error::Dimension {
                    expected: m,
                    found: ts.n_modes(),
                });
            }
            fractions.set_row(r, &ts.mean().map(|v| v.clamp(0.0, 1.0)).transpose());
        }
        let positions = self.points.iter().map(|t| t.position()).collect();
        CalibrationScan::new(source, modes, positions, fractions)
    }

    /// Nearest recorded series to `x` and its distance.
    pub fn nearest(&self, x: f64) -> (&SingleSourceTimeSeries, f64) {
        let best = self
            .points
            .iter()
            .min_by(|a, b| (a.position() - x).abs().total_cmp(&(b.position() - x).abs()))
            .expect("non-empty");
        (best, (best.position() - x).abs())
    }

    /// Emulates sources at `x1` and `x2`: means from `model`, residuals from
    /// the nearest grid series. The implied scene uses the requested positions.
    pub fn emulate(
        &self,
        model: &dyn SourceResponse,
        x1: f64,
        x2: f64,
        p: f64,
        budget: PhotonBudget,
    ) -> Result<SnappedEmulation> {
        let (t1, s1) = self.nearest(x1);
        let (t2, s2) = self.nearest(x2);
        if t1.position() == t2.position() {
            return Err(Error::SamePosition(t1.position()));
        }
        let m1 = model.response(Source::One, x1)?;
        let m2 = model.response(Source::One, x2)?;
        let a = SingleSourceTimeSeries {
            position: x1,
            series: t1.series.clone(),
            mean: t1.mean.clone(),
        };
        let b = SingleSourceTimeSeries {
            position: x2,
            series: t2.series.clone(),
            mean: t2.mean.clone(),
        };
        Ok(SnappedEmulation {
            emulated: emulate_with_means(&a, &b, &m1, &m2, p, budget)?,
            snap: [s1, s2],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Distinguishable,
    Indistinguishable,
}

/// Scene ranges of the measurement campaigns.
pub fn generate_table1_ensemble(which: Ensemble) -> Vec<Scene> {
    let (ds, cs) = match which {
        Ensemble::Distinguishable => (linspace(-0.15, 0.15, 10), linspace(-0.07, 0.07, 5)),
        Ensemble::Indistinguishable => (linspace(0.05, 0.3, 5), linspace(-0.07, 0.07, 5)),
    };
    let mut out = Vec::with_capacity(ds.len() * cs.len() * 3);
    for &d in &ds {
        for &c in &cs {
            for p in [0.1, 0.3, 0.5] {
                out.push(Scene::new(d, c, p).expect("ensemble scenes are valid"));
            }
        }
    }
    out
}
