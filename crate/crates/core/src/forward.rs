//! Incoherent two-source mixing model and its Jacobian.
//!
//! `mu_i(d, c, p) = p I_{i,1}(c - d/2) + (1 - p) I_{i,2}(c + d/2)`

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::response::SourceResponse;
use crate::scene::{DemuxLayout, Scene, Source, Window};

/// Expected mode fractions of a two-source scene over a response model.
#[derive(Clone)]
pub struct ForwardModel {
    response: Arc<dyn SourceResponse>,
    layout: DemuxLayout,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("modes", &self.response.modes())
            .field("window", &self.response.window())
            .field("layout", &self.layout)
            .finish()
    }
}

impl ForwardModel {
    pub fn new(response: Arc<dyn SourceResponse>, layout: DemuxLayout) -> Result<Self> {
        if response.modes() != layout.active_modes() {
            return Err(Error::InvalidLayout(
                "response modes differ from the layout's active modes".into(),
            ));
        }
        Ok(Self { response, layout })
    }

    pub fn from_response<R: SourceResponse + 'static>(response: R, layout: DemuxLayout) -> Result<Self> {
        Self::new(Arc::new(response), layout)
    }

    pub fn response(&self) -> &dyn SourceResponse {
        self.response.as_ref()
    }

    pub fn layout(&self) -> &DemuxLayout {
        &self.layout
    }

    pub fn window(&self) -> Window {
        self.response.window()
    }

    pub fn n_modes(&self) -> usize {
        self.response.n_modes()
    }

    /// Same model with different scene bounds on the layout.
    pub fn with_bounds(&self, bounds: crate::scene::SceneBounds) -> Self {
        Self {
            response: self.response.clone(),
            layout: self.layout.clone().with_bounds(bounds),
        }
    }

    /// True when both source positions lie inside the closed window.
    pub fn in_window(&self, scene: &Scene) -> bool {
        let (x1, x2) = scene.positions();
        let w = self.window();
        w.contains(x1) && w.contains(x2)
    }

    pub fn mu(&self, scene: &Scene) -> Result<DVector<f64>> {
        let (x1, x2) = scene.positions();
        let p = scene.p();
        let i1 = self.response.response(Source::One, x1)?;
        let i2 = self.response.response(Source::Two, x2)?;
        Ok(i1 * p + i2 * (1.0 - p))
    }

    /// `M x 3` matrix of derivatives with columns `(d, c, p)`.
    pub fn jacobian(&self, scene: &Scene) -> Result<DMatrix<f64>> {
        Ok(self.mu_and_jacobian(scene)?.1)
    }

    pub fn mu_and_jacobian(&self, scene: &Scene) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (x1, x2) = scene.positions();
        let p = scene.p();
        let q = 1.0 - p;
        let r = &self.response;
        let i1 = r.response(Source::One, x1)?;
        let i2 = r.response(Source::Two, x2)?;
        let g1 = r.response_derivative(Source::One, x1)?;
        let g2 = r.response_derivative(Source::Two, x2)?;
        let m = i1.len();
        let mut jac = DMatrix::zeros(m, 3);
        for i in 0..m {
            jac[(i, 0)] = -0.5 * p * g1[i] + 0.5 * q * g2[i];
            jac[(i, 1)] = p * g1[i] + q * g2[i];
            jac[(i, 2)] = i1[i] - i2[i];
        }
        Ok((&i1 * p + &i2 * q, jac))
    }
}
