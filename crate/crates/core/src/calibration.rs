//! Polynomial response curves fitted to single-source calibration scans.
//!
//! Each curve is a polynomial in the rescaled abscissa `t = (x - mid) / half`
//! so that the scan window maps onto `[-1, 1]`. Coefficients are stored lowest
//! degree first (highest degree last).

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::SourceResponse;
use crate::scene::{ModeId, Source, Window, NORM_EPS};

pub const DEFAULT_DEGREE: usize = 12;
pub const DEFAULT_RMS_GATE: f64 = 5e-4;
/// Largest accepted condition estimate of the normal system.
pub const MAX_CONDITION: f64 = 1e12;
/// Minimal symmetric support a scan must cover.
pub const REQUIRED_SUPPORT: f64 = 0.3;

/// Intensity fractions of every active mode recorded while one source is
/// scanned across the field.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScan {
    source: Source,
    modes: Vec<ModeId>,
    positions: Vec<f64>,
    fractions: DMatrix<f64>,
}

impl CalibrationScan {
    /// `fractions` has one row per position and one column per mode.
    pub fn new(
        source: Source,
        modes: Vec<ModeId>,
        positions: Vec<f64>,
        fractions: DMatrix<f64>,
    ) -> Result<Self> {
        if fractions.nrows() != positions.len() {
            return Err(Error::Dimension {
                expected: positions.len(),
                found: fractions.nrows(),
            });
        }
        if fractions.ncols() != modes.len() {
            return Err(Error::Dimension {
                expected: modes.len(),
                found: fractions.ncols(),
            });
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InsufficientSupport(
                "positions must be strictly increasing".into(),
            ));
        }
        let (lo, hi) = match (positions.first(), positions.last()) {
            (Some(lo), Some(hi)) => (*lo, *hi),
            _ => return Err(Error::InsufficientSupport("empty scan".into())),
        };
        if lo > -REQUIRED_SUPPORT || hi < REQUIRED_SUPPORT {
            return Err(Error::InsufficientSupport(format!(
                "scan covers [{lo}, {hi}], needs [-{REQUIRED_SUPPORT}, {REQUIRED_SUPPORT}]"
            )));
        }
        if let Some(v) = fractions
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0 + NORM_EPS)
        {
            return Err(Error::InvalidObservation(format!(
                "calibration fraction {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            source,
            modes,
            positions,
            fractions,
        })
    }

    /// Samples a response of source `source` at the given positions.
    pub fn sample(
        response: &dyn SourceResponse,
        source: Source,
        positions: Vec<f64>,
    ) -> Result<Self> {
        let m = response.n_modes();
        let mut fractions = DMatrix::zeros(positions.len(), m);
        for (r, &x) in positions.iter().enumerate() {
            let v = response.response(source, x)?;
            fractions.set_row(r, &v.transpose());
        }
        Self::new(source, response.modes().to_vec(), positions, fractions)
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn fractions(&self) -> &DMatrix<f64> {
        &self.fractions
    }

    pub fn window(&self) -> Window {
        Window::new(self.positions[0], *self.positions.last().unwrap())
    }
}

/// `n` evenly spaced positions over `[-half, half]`.
pub fn even_positions(n: usize, half: f64) -> Vec<f64> {
    (0..n)
        .map(|k| half * (2.0 * k as f64 - (n - 1) as f64) / (n - 1) as f64)
        .collect()
}

/// One fitted polynomial curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCurve {
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    /// Set when the residual exceeds the model's gate.
    #[serde(default)]
    pub flagged: bool,
}

impl PolyCurve {
    fn value(&self, t: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, a| acc * t + a)
    }

    fn slope(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, a)| acc * t + k as f64 * a)
    }
}

/// Curves of every mode for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFit {
    pub window: Window,
    pub curves: Vec<PolyCurve>,
}

impl SourceFit {
    fn rescale(&self, x: f64) -> f64 {
        let mid = 0.5 * (self.window.lo + self.window.hi);
        let half = 0.5 * self.window.width();
        (x - mid) / half
    }

    fn half_width(&self) -> f64 {
        0.5 * self.window.width()
    }
}

/// What backs the second source's curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondSource {
    Fitted(SourceFit),
    /// Indistinguishable sources: source two reuses source one's curves.
    Aliased,
    Missing,
}

/// A clipped polynomial evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub clipped: bool,
}

/// Fitted response curves `I_{i,j}(x)` for both sources.
#[derive(Debug, Serialize, Deserialize)]
pub struct SourceResponseModel {
    modes: Vec<ModeId>,
    degree: usize,
    rms_gate: f64,
    source1: Option<SourceFit>,
    source2: SecondSource,
    #[serde(skip)]
    clip_events: AtomicU64,
}

impl Clone for SourceResponseModel {
    fn clone(&self) -> Self {
        Self {
            modes: self.modes.clone(),
            degree: self.degree,
            rms_gate: self.rms_gate,
            source1: self.source1.clone(),
            source2: self.source2.clone(),
            clip_events: AtomicU64::new(self.clip_events()),
        }
    }
}

impl PartialEq for SourceResponseModel {
    fn eq(&self, other: &Self) -> bool {
        self.modes == other.modes
            && self.degree == other.degree
            && self.rms_gate == other.rms_gate
            && self.source1 == other.source1
            && self.source2 == other.source2
    }
}

/// Least-squares polynomial fit of every mode in the scan.
pub fn fit_scan(scan: &CalibrationScan, degree: usize) -> Result<SourceResponseModel> {
    fit_scan_gated(scan, degree, DEFAULT_RMS_GATE)
}

pub fn fit_scan_gated(
    scan: &CalibrationScan,
    degree: usize,
    rms_gate: f64,
) -> Result<SourceResponseModel> {
    let fit = fit_source(scan, degree, rms_gate)?;
    let (source1, source2) = match scan.source {
        Source::One => (Some(fit), SecondSource::Missing),
        Source::Two => (None, SecondSource::Fitted(fit)),
    };
    Ok(SourceResponseModel {
        modes: scan.modes.clone(),
        degree,
        rms_gate,
        source1,
        source2,
        clip_events: AtomicU64::new(0),
    })
}

fn fit_source(scan: &CalibrationScan, degree: usize, rms_gate: f64) -> Result<SourceFit> {
    let n = scan.positions.len();
    let needed = degree + 5;
    if n < needed {
        return Err(Error::InsufficientPoints {
            points: n,
            degree,
            needed,
        });
    }
    let window = scan.window();
    let mid = 0.5 * (window.lo + window.hi);
    let half = 0.5 * window.width();
    let vander = DMatrix::from_fn(n, degree + 1, |r, k| {
        ((scan.positions[r] - mid) / half).powi(k as i32)
    });

    let sv = vander.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned(condition));
    }

    let qr = vander.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let mut curves = Vec::with_capacity(scan.modes.len());
    for col in 0..scan.modes.len() {
        let y = scan.fractions.column(col).into_owned();
        let rhs = q.transpose() * &y;
        let coef = r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::IllConditioned(f64::INFINITY))?;
        let resid = &vander * &coef - &y;
        let rms = (resid.norm_squared() / n as f64).sqrt();
        curves.push(PolyCurve {
            coefficients: coef.as_slice().to_vec(),
            residual_rms: rms,
            flagged: rms > rms_gate,
        });
    }
    Ok(SourceFit { window, curves })
}

impl SourceResponseModel {
    /// Combines a source-one fit with a source-two fit.
    pub fn merge(mut self, other: SourceResponseModel) -> Result<Self> {
        if self.modes != other.modes {
            return Err(Error::InvalidLayout("calibrations use different modes".into()));
        }
        if self.source1.is_none() {
            self.source1 = other.source1;
        }
        if let SecondSource::Fitted(fit) = other.source2 {
            self.source2 = SecondSource::Fitted(fit);
        }
        Ok(self)
    }

    /// Uses source one's curves for source two as well.
    pub fn aliased(mut self) -> Result<Self> {
        if self.source1.is_none() {
            return Err(Error::MissingSource(1));
        }
        self.source2 = SecondSource::Aliased;
        Ok(self)
    }

    pub fn is_aliased(&self) -> bool {
        matches!(self.source2, SecondSource::Aliased)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn source_fit(&self, source: Source) -> Result<&SourceFit> {
        match source {
            Source::One => self.source1.as_ref().ok_or(Error::MissingSource(1)),
            Source::Two => match &self.source2 {
                SecondSource::Fitted(f) => Ok(f),
                SecondSource::Aliased => self.source1.as_ref().ok_or(Error::MissingSource(1)),
                SecondSource::Missing => Err(Error::MissingSource(2)),
            },
        }
    }

    /// Number of evaluations whose raw polynomial left `[0, 1]`.
    pub fn clip_events(&self) -> u64 {
        self.clip_events.load(Ordering::Relaxed)
    }

    /// Any curve whose fit residual exceeded the gate.
    pub fn flagged_curves(&self) -> Vec<(Source, ModeId)> {
        let mut out = Vec::new();
        for source in [Source::One, Source::Two] {
            if source == Source::Two && self.is_aliased() {
                continue;
            }
            if let Ok(fit) = self.source_fit(source) {
                for (curve, mode) in fit.curves.iter().zip(&self.modes) {
                    if curve.flagged {
                        out.push((source, *mode));
                    }
                }
            }
        }
        out
    }

    fn mode_index(&self, mode: ModeId) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| *m == mode)
            .ok_or_else(|| Error::InvalidLayout(format!("mode {mode} is not calibrated")))
    }

    /// Clipped curve value at `x`, inside the closed window.
    pub fn eval_response(&self, source: Source, mode: ModeId, x: f64) -> Result<Evaluation> {
        let fit = self.source_fit(source)?;
        fit.window.check(x)?;
        let i = self.mode_index(mode)?;
        Ok(self.clip(fit.curves[i].value(fit.rescale(x))))
    }

    /// d/dx of the curve, reported as zero where the value is clipped.
    pub fn eval_response_derivative(
        &self,
        source: Source,
        mode: ModeId,
        x: f64,
    ) -> Result<Evaluation> {
        let fit = self.source_fit(source)?;
        fit.window.check_strict(x)?;
        let i = self.mode_index(mode)?;
        Ok(derivative(fit, i, x))
    }

    fn clip(&self, raw: f64) -> Evaluation {
        if !(0.0..=1.0).contains(&raw) {
            self.clip_events.fetch_add(1, Ordering::Relaxed);
            Evaluation {
                value: raw.clamp(0.0, 1.0),
                clipped: true,
            }
        } else {
            Evaluation {
                value: raw,
                clipped: false,
            }
        }
    }

    /// Overlap between the two sources' curves: one minus the largest
    /// normalized L2 distance `|I1 - I2| / (|I1| + |I2|)` over modes, on the
    /// common window.
    pub fn visibility(&self) -> Result<f64> {
        let f1 = self.source_fit(Source::One)?;
        if self.is_aliased() {
            return Ok(1.0);
        }
        let f2 = self.source_fit(Source::Two)?;
        let w = f1.window.intersect(&f2.window);
        let mut worst: f64 = 0.0;
        for i in 0..self.modes.len() {
            let c1 = |x: f64| f1.curves[i].value(f1.rescale(x)).clamp(0.0, 1.0);
            let c2 = |x: f64| f2.curves[i].value(f2.rescale(x)).clamp(0.0, 1.0);
            let diff = simpson(|x| (c1(x) - c2(x)).powi(2), w, 2000).sqrt();
            let n1 = simpson(|x| c1(x).powi(2), w, 2000).sqrt();
            let n2 = simpson(|x| c2(x).powi(2), w, 2000).sqrt();
            if n1 + n2 > 0.0 {
                worst = worst.max(diff / (n1 + n2));
            }
        }
        Ok(1.0 - worst)
    }
}

fn derivative(fit: &SourceFit, i: usize, x: f64) -> Evaluation {
    let curve = &fit.curves[i];
    let t = fit.rescale(x);
    let raw = curve.value(t);
    if !(0.0..=1.0).contains(&raw) {
        Evaluation {
            value: 0.0,
            clipped: true,
        }
    } else {
        Evaluation {
            value: curve.slope(t) / fit.half_width(),
            clipped: false,
        }
    }
}

// Composite Simpson rule with an even number of panels.
fn simpson(f: impl Fn(f64) -> f64, w: Window, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = w.width() / n as f64;
    let mut acc = f(w.lo) + f(w.hi);
    for k in 1..n {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(w.lo + k as f64 * h);
    }
    acc * h / 3.0
}

impl SourceResponse for SourceResponseModel {
    fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    fn window(&self) -> Window {
        let w1 = self.source1.as_ref().map(|f| f.window);
        let w2 = match &self.source2 {
            SecondSource::Fitted(f) => Some(f.window),
            _ => None,
        };
        match (w1, w2) {
            (Some(a), Some(b)) => a.intersect(&b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => Window::symmetric(0.0),
        }
    }

    fn response(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        let fit = self.source_fit(source)?;
        fit.window.check(x)?;
        let t = fit.rescale(x);
        Ok(DVector::from_iterator(
            self.modes.len(),
            fit.curves.iter().map(|c| self.clip(c.value(t)).value),
        ))
    }

    fn response_derivative(&self, source: Source, x: f64) -> Result<DVector<f64>> {
        let fit = self.source_fit(source)?;
        fit.window.check_strict(x)?;
        Ok(DVector::from_iterator(
            self.modes.len(),
            (0..self.modes.len()).map(|i| derivative(fit, i, x).value),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{self, IdealResponse};
    use crate::response::TwinResponse;
    use crate::scene::DemuxLayout;
    use proptest::prelude::*;

    fn ideal_scan(layout: DemuxLayout, n: usize, half: f64) -> CalibrationScan {
        let ideal = IdealResponse::new(layout);
        CalibrationScan::sample(&ideal, Source::One, even_positions(n, half)).unwrap()
    }

    #[test]
    fn ideal_round_trip_rms() {
        let ideal = IdealResponse::new(DemuxLayout::dual_default());
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.3);
        let model = fit_scan(&scan, 12).unwrap();
        let grid = even_positions(601, 0.3);
        for (i, mode) in ideal.modes().iter().enumerate() {
            let mut sq = 0.0;
            for &x in &grid {
                let e = model.eval_response(Source::One, *mode, x).unwrap().value;
                sq += (e - ideal.source_response(x).unwrap()[i]).powi(2);
            }
            let rms = (sq / grid.len() as f64).sqrt();
            assert!(rms < 1e-6, "mode {mode}: rms {rms}");
        }
        assert!(model.flagged_curves().is_empty());
    }

    #[test]
    fn too_few_points() {
        let scan = ideal_scan(DemuxLayout::single_default(), 10, 0.35);
        assert!(matches!(
            fit_scan(&scan, 12),
            Err(Error::InsufficientPoints { points: 10, .. })
        ));
    }

    #[test]
    fn constant_scan_reproduced() {
        let modes = crate::scene::default_single_modes();
        let pos = even_positions(61, 0.35);
        let fr = DMatrix::from_element(61, 4, 0.25);
        let scan = CalibrationScan::new(Source::One, modes.clone(), pos, fr).unwrap();
        let model = fit_scan(&scan, 12).unwrap();
        for k in 0..=70 {
            let x = (k as f64 - 35.0) / 100.0;
            for m in &modes {
                let v = model.eval_response(Source::One, *m, x).unwrap().value;
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scan_must_cover_support() {
        let modes = crate::scene::default_single_modes();
        let pos = even_positions(61, 0.2);
        let fr = DMatrix::from_element(61, 4, 0.25);
        assert!(matches!(
            CalibrationScan::new(Source::One, modes, pos, fr),
            Err(Error::InsufficientSupport(_))
        ));
    }

    #[test]
    fn window_bounds() {
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
        let model = fit_scan(&scan, 12).unwrap();
        let m = ModeId::new(1, 0);
        let v = model.eval_response(Source::One, m, 0.0).unwrap().value;
        assert!((v - 0.5).abs() < 1e-5);
        assert!(model.eval_response(Source::One, m, 0.35).is_ok());
        assert!(matches!(
            model.eval_response(Source::One, m, 0.36),
            Err(Error::OutOfWindow { .. })
        ));
        assert!(model.eval_response_derivative(Source::One, m, 0.35).is_err());
        assert!(matches!(
            model.eval_response(Source::Two, m, 0.0),
            Err(Error::MissingSource(2))
        ));
    }

    #[test]
    fn derivatives_match_ideal() {
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
        let model = fit_scan(&scan, 12).unwrap();
        let d0 = model
            .eval_response_derivative(Source::One, ModeId::new(1, 0), 0.0)
            .unwrap();
        assert!(d0.value.abs() < 1e-4);
        let d1 = model
            .eval_response_derivative(Source::One, ModeId::new(1, 1), 0.15)
            .unwrap();
        let exact = 0.5 * optics::hg_intensity_fraction_derivative(1, 0.15).unwrap();
        assert!((d1.value - exact).abs() < 1e-4);
    }

    #[test]
    fn clipping_zeroes_derivative() {
        // A scan dipping slightly below zero in the middle forces clipping.
        let modes = vec![ModeId::new(1, 1)];
        let pos = even_positions(41, 0.35);
        let fr = DMatrix::from_iterator(41, 1, pos.iter().map(|x| (x * x - 0.001).max(0.0)));
        let scan = CalibrationScan::new(Source::One, modes.clone(), pos, fr).unwrap();
        let model = fit_scan(&scan, 4).unwrap();
        let d = model.eval_response_derivative(Source::One, modes[0], 0.0).unwrap();
        assert!(d.clipped);
        assert_eq!(d.value, 0.0);
        assert_eq!(model.eval_response(Source::One, modes[0], 0.0).unwrap().value, 0.0);
        assert!(model.clip_events() >= 1);
    }

    #[test]
    fn fitting_is_deterministic() {
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
        let a = fit_scan(&scan, 12).unwrap();
        let b = fit_scan(&scan, 12).unwrap();
        let (fa, fb) = (a.source_fit(Source::One).unwrap(), b.source_fit(Source::One).unwrap());
        for (ca, cb) in fa.curves.iter().zip(&fb.curves) {
            for (x, y) in ca.coefficients.iter().zip(&cb.coefficients) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn visibility_identical_curves() {
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
        let model = fit_scan(&scan, 12).unwrap().aliased().unwrap();
        assert_eq!(model.visibility().unwrap(), 1.0);
        let only_one = fit_scan(&scan, 12).unwrap();
        assert!(matches!(only_one.visibility(), Err(Error::MissingSource(2))));
    }

    #[test]
    fn visibility_of_displaced_curves_matches_direct_integration() {
        let layout = DemuxLayout::dual_default();
        let ideal = IdealResponse::new(layout.clone());
        let twin = TwinResponse::new(ideal.clone(), 0.05, 0.0);
        let pos = even_positions(71, 0.35);
        let s1 = CalibrationScan::sample(&ideal, Source::One, pos.clone()).unwrap();
        // The twin is defined on [-0.45, 0.5], which covers the scan.
        let s2 = CalibrationScan::sample(&twin, Source::Two, pos).unwrap();
        let model = fit_scan(&s1, 12).unwrap().merge(fit_scan(&s2, 12).unwrap()).unwrap();
        let vis = model.visibility().unwrap();

        // Direct trapezoid integration on the analytic curves.
        let n = 20000;
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            let (mut dd, mut a2, mut b2) = (0.0, 0.0, 0.0);
            for k in 0..=n {
                let x = -0.35 + 0.7 * k as f64 / n as f64;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                let a = ideal.source_response(x).unwrap()[i];
                let b = ideal.source_response(x - 0.05).unwrap()[i];
                dd += w * (a - b).powi(2);
                a2 += w * a * a;
                b2 += w * b * b;
            }
            worst = worst.max(dd.sqrt() / (a2.sqrt() + b2.sqrt()));
        }
        let expected = 1.0 - worst;
        assert!((vis - expected).abs() < 1e-5, "{vis} vs {expected}");
        assert!(vis < 1.0 && vis > 0.0);
    }

    #[test]
    fn json_round_trip_preserves_curves() {
        let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
        let model = fit_scan(&scan, 12).unwrap().aliased().unwrap();
        let s = serde_json::to_string(&model).unwrap();
        let back: SourceResponseModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn polynomial_scans_reproduced(coefs in proptest::collection::vec(-0.05f64..0.05, 1..=12)) {
            let pos = even_positions(61, 0.35);
            let vals: Vec<f64> = pos
                .iter()
                .map(|x| 0.5 + coefs.iter().rev().fold(0.0, |acc, a| acc * x + a))
                .collect();
            let fr = DMatrix::from_column_slice(61, 1, &vals);
            let scan = CalibrationScan::new(Source::One, vec![ModeId::new(1, 0)], pos.clone(), fr).unwrap();
            let model = fit_scan(&scan, 12).unwrap();
            for (x, v) in pos.iter().zip(&vals) {
                let e = model.eval_response(Source::One, ModeId::new(1, 0), *x).unwrap().value;
                prop_assert!((e - v).abs() < 1e-10);
            }
        }

        #[test]
        fn derivative_is_finite_difference_of_value(x in -0.33f64..0.33) {
            let scan = ideal_scan(DemuxLayout::dual_default(), 61, 0.35);
            let model = fit_scan(&scan, 12).unwrap();
            for mode in crate::scene::default_dual_modes() {
                let d = model.eval_response_derivative(Source::One, mode, x).unwrap();
                let h = 1e-6;
                let up = model.eval_response(Source::One, mode, x + h).unwrap();
                let dn = model.eval_response(Source::One, mode, x - h).unwrap();
                if !(d.clipped || up.clipped || dn.clipped) {
                    let fd = (up.value - dn.value) / (2.0 * h);
                    prop_assert!((d.value - fd).abs() <= 1e-5 * d.value.abs() + 1e-9);
                }
            }
        }
    }
}
