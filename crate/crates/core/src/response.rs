//! Per-mode, per-source intensity-fraction curves `I_{i,j}(x)`.

use nalgebra::DVector;

use crate::error::Result;
use crate::optics::IdealResponse;
use crate::scene::{ModeId, Source, Window};

/// Response of every active mode to a single source at position `x`.
///
/// Implemented by the analytic ideal sorter, its perturbed twin and by fitted
/// calibration models.
pub trait SourceResponse: Send + Sync {
    fn modes(&self) -> &[ModeId];

    /// Positions where both sources' curves are defined.
    fn window(&self) -> Window;

    fn response(&self, source: Source, x: f64) -> Result<DVector<f64>>;

    fn response_derivative(&self, source: Source, x: f64) -> Result<DVector<f64>>;

    fn n_modes(&self) -> usize {
        self.modes().len()
    }
}

/// Ideal response for source one and a slightly different copy for source
/// two: displaced by `offset` and attenuated per mode by up to
/// `perturbation`. Stands in for two sources with imperfect overlap.
#[derive(Debug, Clone)]
pub struct TwinResponse {
    base: IdealResponse,
    offset: f64,
    gains: Vec<f64>,
}

impl TwinResponse {
    pub fn new(base: IdealResponse, offset: f64, perturbation: f64) -> Self {
        let m = base.n_modes() as f64;
        let gains = (0..base.n_modes())
            .map(|i| 1.0 - perturbation * (i as f64 + 1.0) / m)
            .collect();
        Self {
            base,
            offset,
            gains,
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn base(&self) -> &IdealResponse {
        &self.base
    }
}

impl SourceResponse for TwinResponse {
    fn modes(&self) -> &[ModeId] {
        self.base.modes()
    }

    fn window(&self) -> Window {
        let w = self.base.window();
        Window::new(w.lo + self.offset.max(0.0), w.hi + self.offset.min(0.0))
    }

    fn response(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        match source {
            Source::One => self.base.source_response(x),
            Source::Two => {
                let mut v = self.base.source_response(x - self.offset)?;
                v.component_mul_assign(&DVector::from_column_slice(&self.gains));
                Ok(v)
            }
        }
    }

    fn response_derivative(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        match source {
            Source::One => self.base.source_response_derivative(x),
            Source::Two => {
                let mut v = self.base.source_response_derivative(x - self.offset)?;
                v.component_mul_assign(&DVector::from_column_slice(&self.gains));
                Ok(v)
            }
        }
    }
}

impl<T: SourceResponse + ?Sized> SourceResponse for Box<T> {
    fn modes(&self) -> &[ModeId] {
        (**self).modes()
    }
    fn window(&self) -> Window {
        (**self).window()
    }
    fn response(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        (**self).response(source, x)
    }
    fn response_derivative(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        (**self).response_derivative(source, x)
    }
}

impl<T: SourceResponse + ?Sized> SourceResponse for std::sync::Arc<T> {
    fn modes(&self) -> &[ModeId] {
        (**self).modes()
    }
    fn window(&self) -> Window {
        (**self).window()
    }
    fn response(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        (**self).response(source, x)
    }
    fn response_derivative(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        (**self).response_derivative(source, x)
    }
}
