//! Ideal analytic response of a displaced Gaussian beam in a Hermite-Gauss
//! mode basis.
//!
//! With mode functions `u_n(x) ~ H_n(sqrt(2) x / w0) exp(-x^2 / w0^2)` (waist
//! `w0` is the 1/e^2 intensity radius), a fundamental beam displaced by `x`
//! couples to `HG_{n0}` with the Poisson weight `exp(-Q) Q^n / n!`, where
//! `Q = DISPLACEMENT_RATE * (x / w0)^2`. The rate is checked against direct
//! quadrature of the overlap integral in the tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::response::SourceResponse;
use crate::scene::{DemuxLayout, ModeId, Source, Window};

/// Proportionality constant between `Q` and `(x / w0)^2`.
pub const DISPLACEMENT_RATE: f64 = 1.0;

/// Default half-width of the position window, in the demux-1 frame.
pub const IDEAL_HALF_WINDOW: f64 = 0.5;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn poisson_weight(n: u32, q: f64) -> f64 {
    if n == 0 {
        return (-q).exp();
    }
    (-q).exp() * q.powi(n as i32) / factorial(n)
}

/// Intensity fraction `|<HG_{n0} | g(. - x)>|^2` of a fundamental beam
/// displaced by `x` (units of `w0`).
pub fn hg_intensity_fraction(order: i64, position: f64) -> Result<f64> {
    let n = u32::try_from(order).map_err(|_| Error::NegativeOrder(order))?;
    Ok(fraction(n, position))
}

/// d/dx of [`hg_intensity_fraction`].
pub fn hg_intensity_fraction_derivative(order: i64, position: f64) -> Result<f64> {
    let n = u32::try_from(order).map_err(|_| Error::NegativeOrder(order))?;
    Ok(fraction_derivative(n, position))
}

pub(crate) fn fraction(n: u32, x: f64) -> f64 {
    poisson_weight(n, DISPLACEMENT_RATE * x * x)
}

// dP_n/dx = 2 k x (P_{n-1} - P_n), with P_{-1} = 0 and k the rate.
pub(crate) fn fraction_derivative(n: u32, x: f64) -> f64 {
    let q = DISPLACEMENT_RATE * x * x;
    let lower = if n == 0 { 0.0 } else { poisson_weight(n - 1, q) };
    2.0 * DISPLACEMENT_RATE * x * (lower - poisson_weight(n, q))
}

/// Analytic per-mode response of one or two ideal sorters.
#[derive(Debug, Clone)]
pub struct IdealResponse {
    layout: DemuxLayout,
    max_order: u32,
    crosstalk: Option<DMatrix<f64>>,
    window: Window,
}

impl IdealResponse {
    pub fn new(layout: DemuxLayout) -> Self {
        let max_order = layout
            .active_modes()
            .iter()
            .map(|m| m.order)
            .max()
            .unwrap_or(0)
            .max(3);
        Self {
            layout,
            max_order,
            crosstalk: None,
            window: Window::symmetric(IDEAL_HALF_WINDOW),
        }
    }

    /// Adds a position-independent leakage matrix. Rows must sum to one.
    pub fn with_crosstalk(mut self, crosstalk: DMatrix<f64>) -> Result<Self> {
        let m = self.layout.n_modes();
        if crosstalk.nrows() != m || crosstalk.ncols() != m {
            return Err(Error::Dimension {
                expected: m,
                found: crosstalk.nrows(),
            });
        }
        for (i, row) in crosstalk.row_iter().enumerate() {
            if row.iter().any(|v| *v < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidLayout(format!(
                    "crosstalk row {i} is not stochastic"
                )));
            }
        }
        self.crosstalk = Some(crosstalk);
        Ok(self)
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn layout(&self) -> &DemuxLayout {
        &self.layout
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    fn per_mode(&self, x: f64, f: impl Fn(u32, f64) -> f64) -> Result<DVector<f64>> {
        self.window.check(x)?;
        let raw = DVector::from_iterator(
            self.layout.n_modes(),
            self.layout.active_modes().iter().map(|m| {
                self.layout.split(m.demux) * f(m.order, x - self.layout.shift(m.demux))
            }),
        );
        Ok(match &self.crosstalk {
            Some(c) => c * raw,
            None => raw,
        })
    }

    /// Fractions over the active modes for a source at `x`; entry `(k, n)` is
    /// `split_k * P_n(x - shift_k)`, mixed by the crosstalk matrix if set.
    pub fn source_response(&self, x: f64) -> Result<DVector<f64>> {
        self.per_mode(x, fraction)
    }

    pub fn source_response_derivative(&self, x: f64) -> Result<DVector<f64>> {
        self.per_mode(x, fraction_derivative)
    }
}

impl SourceResponse for IdealResponse {
    fn modes(&self) -> &[ModeId] {
        self.layout.active_modes()
    }

    fn window(&self) -> Window {
        self.window
    }

    fn response(&self, _source: Source, x: f64) -> Result<DVector<f64>> {
        self.source_response(x)
    }

    fn response_derivative(&self, _source: Source, x: f64) -> Result<DVector<f64>> {
        self.source_response_derivative(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::test_oracle as oracle;

    #[test]
    fn centered_beam() {
        assert_eq!(hg_intensity_fraction(0, 0.0).unwrap(), 1.0);
        assert_eq!(hg_intensity_fraction(1, 0.0).unwrap(), 0.0);
        assert!(matches!(
            hg_intensity_fraction(-1, 0.0),
            Err(Error::NegativeOrder(-1))
        ));
    }

    #[test]
    fn quadrature_mode_functions_are_normalized() {
        for n in 0..6 {
            assert!((oracle::quadrature_norm(n) - 1.0).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn displacement_rate_matches_quadrature() {
        // P_1 / P_0 = Q, so the rate follows from two overlaps at one shift.
        for &x in &[0.1, 0.3, 0.45] {
            let q = oracle::quadrature_fraction(1, x) / oracle::quadrature_fraction(0, x);
            assert!((q / (x * x) - DISPLACEMENT_RATE).abs() < 1e-12);
        }
    }

    #[test]
    fn hg10_at_0_3_matches_quadrature() {
        let expected = oracle::quadrature_fraction(1, 0.3);
        let got = hg_intensity_fraction(1, 0.3).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        // 0.09 * exp(-0.09)
        assert!((got - 0.082253_f64).abs() < 1e-6);
    }

    #[test]
    fn closed_form_matches_quadrature_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: f64 = rng.random_range(-0.5..0.5);
            for n in 0..=5 {
                let q = oracle::quadrature_fraction(n, x);
                let c = fraction(n as u32, x);
                assert!((q - c).abs() < 1e-10, "n={n} x={x}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn normalization_over_twenty_orders() {
        for k in -50..=50 {
            let x = k as f64 * 0.01;
            let s: f64 = (0..=20).map(|n| fraction(n, x)).sum();
            assert!((1.0 - 1e-10..=1.0 + 1e-15).contains(&s), "x={x} sum={s}");
        }
    }

    #[test]
    fn single_layout_centered_response() {
        let r = IdealResponse::new(DemuxLayout::single_default());
        let v = r.source_response(0.0).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dual_response_at_shift_origin() {
        let r = IdealResponse::new(DemuxLayout::dual_default());
        let v = r.source_response(0.3).unwrap();
        assert_eq!(v[4], 0.0);
        for n in 0..4 {
            assert_eq!(v[n], 0.5 * fraction(n as u32, 0.3));
        }
    }

    #[test]
    fn dual_response_matches_quadrature() {
        let r = IdealResponse::new(DemuxLayout::dual_default());
        let v = r.source_response(0.1).unwrap();
        let q = oracle::dual_response(0.1, 0.3);
        for i in 0..5 {
            assert!((v[i] - q[i]).abs() < 1e-12, "mode {i}");
        }
    }

    #[test]
    fn out_of_window_is_rejected() {
        let r = IdealResponse::new(DemuxLayout::dual_default());
        assert!(matches!(
            r.source_response(0.51),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn derivative_zero_at_origin() {
        assert_eq!(fraction_derivative(0, 0.0), 0.0);
        assert_eq!(fraction_derivative(1, 0.0), 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let r = IdealResponse::new(DemuxLayout::dual_default());
        for &x in &[0.15, -0.27, 0.0, 0.42] {
            let d = r.source_response_derivative(x).unwrap();
            for i in 0..5 {
                let fd = oracle::central_diff(|t| r.source_response(t).unwrap()[i], x, 1e-6);
                let tol = (1e-6 * d[i].abs()).max(1e-9);
                assert!((d[i] - fd).abs() <= tol, "x={x} mode {i}: {} vs {fd}", d[i]);
            }
        }
    }

    #[test]
    fn crosstalk_rows_must_be_stochastic() {
        let r = IdealResponse::new(DemuxLayout::single_default());
        let bad = DMatrix::from_element(4, 4, 0.3);
        assert!(r.clone().with_crosstalk(bad).is_err());
        let mut mix = DMatrix::identity(4, 4) * 0.97;
        for i in 0..4 {
            mix[(i, (i + 1) % 4)] = 0.03;
        }
        let mixed = r.with_crosstalk(mix).unwrap();
        let v = mixed.source_response(0.0).unwrap();
        assert!((v[3] - 0.03).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn parity(n in 0u32..8, x in 0.0f64..0.8) {
            prop_assert_eq!(fraction(n, x), fraction(n, -x));
        }

        #[test]
        fn shift_covariance(x in -0.2f64..0.5) {
            let dual = IdealResponse::new(DemuxLayout::dual_default());
            let single = IdealResponse::new(DemuxLayout::single_default());
            let v = dual.source_response(x).unwrap();
            let w = single.source_response(x - 0.3).unwrap();
            prop_assert_eq!(v[4], 0.5 * w[1]);
        }

        #[test]
        fn fractions_in_unit_interval(n in 0u32..20, x in -0.5f64..0.5) {
            let f = fraction(n, x);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
