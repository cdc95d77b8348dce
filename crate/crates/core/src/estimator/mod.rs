//! Maximum-likelihood estimation of `(d, c, p)` from binned observations.

mod covariance;
mod optimizer;

pub use covariance::{
    estimate_covariance, sample_covariance, CovarianceAt, CovarianceSurface, FixedCovariance,
    NoiseCovariance, DEFAULT_SURFACE_DEGREE, RIDGE_SCALE,
};

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::scene::{ObservationSeries, Scene, Window};
use optimizer::{Limits, Local};

/// Scale of the out-of-window loss.
pub const PENALTY: f64 = 1e6;

/// Relative margin kept between optimizer iterates and the window edges.
const WINDOW_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub p_min: f64,
    /// Start-grid sizes along `d`, `c` and `p`.
    pub grid: [usize; 3],
    /// Gradient test, applied to the Newton-scaled gradient `H^-1 g` so it
    /// does not depend on the overall scale of the loss.
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
    pub alternate_loss_gap: f64,
    pub alternate_min_distance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            p_min: 0.01,
            grid: [5, 3, 3],
            grad_tol: 1e-9,
            step_tol: 1e-12,
            max_iterations: 500,
            alternate_loss_gap: 1.0,
            alternate_min_distance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternate {
    pub scene: Scene,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Scene,
    pub loss_value: f64,
    pub converged: bool,
    pub n_restarts_used: usize,
    /// Other converged minima within the loss gap of the best, best first.
    pub alternates: Vec<Alternate>,
}

fn check_len(model: &ForwardModel, y: &DVector<f64>, cov: &NoiseCovariance) -> Result<()> {
    let m = model.n_modes();
    if y.len() != m {
        return Err(Error::Dimension {
            expected: m,
            found: y.len(),
        });
    }
    if cov.n_modes() != m {
        return Err(Error::Dimension {
            expected: m,
            found: cov.n_modes(),
        });
    }
    Ok(())
}

/// Weighted residual, plus `log det Gamma(theta)` for a parameter-dependent
/// covariance. Outside the window returns `PENALTY * (1 + v^2)` with `v` the
/// distance of the source positions from the window.
pub fn loss(model: &ForwardModel, y: &DVector<f64>, cov: &NoiseCovariance, scene: &Scene) -> Result<f64> {
    check_len(model, y, cov)?;
    if !model.in_window(scene) {
        let w = model.window();
        let (x1, x2) = scene.positions();
        let v2 = w.excess(x1).powi(2) + w.excess(x2).powi(2);
        return Ok(PENALTY * (1.0 + v2));
    }
    let r = y - model.mu(scene)?;
    let at = cov.at(scene)?;
    let quad = r.dot(&(&at.inverse * &r));
    Ok(match at.derivatives {
        Some(_) => quad + at.log_det,
        None => quad,
    })
}

struct Problem<'a> {
    model: &'a ForwardModel,
    y: &'a DVector<f64>,
    cov: &'a NoiseCovariance,
    interior: Window,
    limits: Limits,
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a ForwardModel,
        y: &'a DVector<f64>,
        cov: &'a NoiseCovariance,
        config: &OptimizerConfig,
    ) -> Self {
        let w = model.window();
        let bounds = model.layout().bounds();
        let (d_lo, d_hi) = bounds.d_range();
        let limits = Limits {
            lo: [d_lo, -bounds.c_max, config.p_min],
            hi: [d_hi, bounds.c_max, 1.0 - config.p_min],
            grad_tol: config.grad_tol,
            step_tol: config.step_tol,
            max_iterations: config.max_iterations,
        };
        Self {
            model,
            y,
            cov,
            interior: w.shrink(WINDOW_MARGIN * w.width()),
            limits,
        }
    }

    fn feasible(&self, t: &[f64; 3]) -> bool {
        let (x1, x2) = (t[1] - 0.5 * t[0], t[1] + 0.5 * t[0]);
        self.interior.contains(x1) && self.interior.contains(x2)
    }

    /// Moves a start point into the box and the shrunken window.
    fn project(&self, t: [f64; 3]) -> [f64; 3] {
        let l = &self.limits;
        let w = self.interior;
        let d = t[0].clamp(l.lo[0], l.hi[0]).clamp(-w.width(), w.width());
        let c_lo = (w.lo + 0.5 * d.abs()).max(l.lo[1]);
        let c_hi = (w.hi - 0.5 * d.abs()).min(l.hi[1]);
        let c = if c_lo <= c_hi { t[1].clamp(c_lo, c_hi) } else { 0.5 * (c_lo + c_hi) };
        [d, c, t[2].clamp(l.lo[2], l.hi[2])]
    }

    fn scene(t: &[f64; 3]) -> Option<Scene> {
        Scene::new(t[0], t[1], t[2]).ok()
    }

    fn local(&self, t: &[f64; 3]) -> Option<Local> {
        if !self.feasible(t) {
            return None;
        }
        let scene = Self::scene(t)?;
        let (mu, jac) = self.model.mu_and_jacobian(&scene).ok()?;
        let at = self.cov.at(&scene).ok()?;
        let r = self.y - mu;
        let wr = &at.inverse * &r;
        let wj = &at.inverse * &jac;
        let mut value = r.dot(&wr);
        let g = -2.0 * jac.transpose() * &wr;
        let h = 2.0 * jac.transpose() * wj;
        let mut grad = Vector3::new(g[0], g[1], g[2]);
        let hess = Matrix3::from_fn(|i, j| h[(i, j)]);
        if let Some([gd, gc]) = &at.derivatives {
            value += at.log_det;
            for (k, dg) in [(0, gd), (1, gc)] {
                let trace = (&at.inverse * dg).trace();
                grad[k] += trace - wr.dot(&(dg * &wr));
            }
        }
        value.is_finite().then_some(Local { value, grad, hess })
    }

    fn grid_loss(&self, t: &[f64; 3]) -> f64 {
        Self::scene(t)
            .and_then(|s| loss(self.model, self.y, self.cov, &s).ok())
            .unwrap_or(f64::INFINITY)
    }
}

fn midpoints(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (k as f64 + 0.5) * (hi - lo) / n as f64)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Multi-start bounded minimization of [`loss`].
pub fn estimate(
    model: &ForwardModel,
    y: &DVector<f64>,
    cov: &NoiseCovariance,
    config: &OptimizerConfig,
) -> Result<EstimationResult> {
    check_len(model, y, cov)?;
    let problem = Problem::new(model, y, cov, config);
    let l = problem.limits;
    let mut starts = Vec::new();
    for d in midpoints(l.lo[0], l.hi[0], config.grid[0]) {
        for c in midpoints(l.lo[1], l.hi[1], config.grid[1]) {
            for p in midpoints(l.lo[2], l.hi[2], config.grid[2]) {
                starts.push(problem.project([d, c, p]));
            }
        }
    }
    let best_grid = starts
        .iter()
        .map(|t| (problem.grid_loss(t), *t))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, t)| t);
    if let Some(t) = best_grid {
        starts.push(problem.project([-t[0], t[1], t[2]]));
    }

    let mut runs = Vec::with_capacity(starts.len());
    for s in &starts {
        if let Some(r) = optimizer::refine(*s, &l, |t| problem.local(t)) {
            runs.push(r);
        }
    }
    if runs.is_empty() {
        return Err(Error::NoConvergence);
    }
    runs.sort_by(|a, b| b.converged.cmp(&a.converged).then(a.value.total_cmp(&b.value)));
    let best = runs[0];
    let mut alternates: Vec<Alternate> = Vec::new();
    let mut kept = vec![best.theta];
    if best.converged {
        for r in runs.iter().skip(1).filter(|r| r.converged) {
            if r.value - best.value > config.alternate_loss_gap {
                break;
            }
            if kept.iter().all(|k| distance(k, &r.theta) > config.alternate_min_distance) {
                kept.push(r.theta);
                if let Some(scene) = Problem::scene(&r.theta) {
                    alternates.push(Alternate {
                        scene,
                        loss: r.value,
                    });
                }
            }
        }
    }
    Ok(EstimationResult {
        theta_hat: Problem::scene(&best.theta).ok_or(Error::NoConvergence)?,
        loss_value: best.value,
        converged: best.converged,
        n_restarts_used: starts.len(),
        alternates,
    })
}

/// Estimates every bin independently, in parallel. Output order follows the
/// bins.
pub fn estimate_series(
    model: &ForwardModel,
    series: &ObservationSeries,
    cov: &NoiseCovariance,
    config: &OptimizerConfig,
) -> Vec<Result<EstimationResult>> {
    series
        .bins()
        .par_iter()
        .map(|y| estimate(model, y, cov, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterStatistics {
    pub mean: f64,
    pub bias: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneStatistics {
    pub reference: Scene,
    pub d: ParameterStatistics,
    pub c: ParameterStatistics,
    pub p: ParameterStatistics,
    /// Converged bins used.
    pub n_bins: usize,
    pub n_excluded: usize,
}

impl SceneStatistics {
    pub fn get(&self, k: usize) -> &ParameterStatistics {
        match k {
            0 => &self.d,
            1 => &self.c,
            _ => &self.p,
        }
    }
}

/// Bias and sample standard deviation over converged results.
pub fn scene_statistics(results: &[EstimationResult], reference: &Scene) -> Result<SceneStatistics> {
    let good: Vec<[f64; 3]> = results
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.theta_hat.as_array())
        .collect();
    let n = good.len();
    if n < 2 {
        return Err(Error::TooFewConverged(n));
    }
    let truth = reference.as_array();
    let stats = |k: usize| {
        let mean = good.iter().map(|t| t[k]).sum::<f64>() / n as f64;
        let ss = good.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>();
        ParameterStatistics {
            mean,
            bias: mean - truth[k],
            sigma: (ss / (n as f64 - 1.0)).sqrt(),
        }
    };
    Ok(SceneStatistics {
        reference: *reference,
        d: stats(0),
        c: stats(1),
        p: stats(2),
        n_bins: n,
        n_excluded: results.len() - n,
    })
}

/// Batch CSV row for one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub d_ref: f64,
    pub c_ref: f64,
    pub p_ref: f64,
    pub d_hat_mean: f64,
    pub c_hat_mean: f64,
    pub p_hat_mean: f64,
    pub d_bias: f64,
    pub c_bias: f64,
    pub p_bias: f64,
    pub d_sigma: f64,
    pub c_sigma: f64,
    pub p_sigma: f64,
    pub n_converged: usize,
}

impl From<&SceneStatistics> for BatchRow {
    fn from(s: &SceneStatistics) -> Self {
        Self {
            d_ref: s.reference.d(),
            c_ref: s.reference.c(),
            p_ref: s.reference.p(),
            d_hat_mean: s.d.mean,
            c_hat_mean: s.c.mean,
            p_hat_mean: s.p.mean,
            d_bias: s.d.bias,
            c_bias: s.c.bias,
            p_bias: s.p.bias,
            d_sigma: s.d.sigma,
            c_sigma: s.c.sigma,
            p_sigma: s.p.sigma,
            n_converged: s.n_bins,
        }
    }
}
