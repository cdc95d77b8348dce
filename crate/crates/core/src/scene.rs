//! Shared domain vocabulary: scenes, mode identifiers, demultiplexer layouts
//! and observation series.
//!
//! Every length is expressed in units of the mode waist `w0`.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance above 1 accepted for normalized intensity fractions.
pub const NORM_EPS: f64 = 1e-6;

/// Waist of the experimental mode sorter in micrometers, used only for unit
/// conversion at the command-line boundary.
pub const WAIST_UM: f64 = 320.0;

/// One of the two incoherent sources. Source one sits at `c - d/2` and carries
/// brightness `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    One,
    Two,
}

impl Source {
    pub fn id(self) -> u8 {
        match self {
            Source::One => 1,
            Source::Two => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Source::One),
            2 => Ok(Source::Two),
            other => Err(Error::OutOfRange {
                field: "source_id",
                value: other as f64,
            }),
        }
    }
}

/// Closed interval of source positions over which a response is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo < hi);
        Self { lo, hi }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn contains_strictly(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(self.violation(x))
        }
    }

    pub fn check_strict(&self, x: f64) -> Result<()> {
        if self.contains_strictly(x) {
            Ok(())
        } else {
            Err(self.violation(x))
        }
    }

    pub fn intersect(&self, other: &Window) -> Window {
        Window::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn shrink(&self, margin: f64) -> Window {
        Window::new(self.lo + margin, self.hi - margin)
    }

    /// Distance of `x` outside the window, zero inside.
    pub fn excess(&self, x: f64) -> f64 {
        (self.lo - x).max(0.0) + (x - self.hi).max(0.0)
    }

    fn violation(&self, x: f64) -> Error {
        Error::OutOfWindow {
            x,
            lo: self.lo,
            hi: self.hi,
        }
    }
}

/// Admissible parameter ranges for scenes under a given layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub d_max: f64,
    pub c_max: f64,
    /// Restrict `d >= 0`, used when the two sources are indistinguishable and
    /// the problem is symmetric under relabeling.
    #[serde(default)]
    pub nonnegative_d: bool,
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self {
            d_max: 0.5,
            c_max: 0.3,
            nonnegative_d: false,
        }
    }
}

impl SceneBounds {
    pub fn symmetric(mut self) -> Self {
        self.nonnegative_d = true;
        self
    }

    pub fn d_range(&self) -> (f64, f64) {
        if self.nonnegative_d {
            (0.0, self.d_max)
        } else {
            (-self.d_max, self.d_max)
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct RawScene {
    d: f64,
    c: f64,
    p: f64,
}

/// The parameter triplet `(d, c, p)` of a two-source scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScene")]
pub struct Scene {
    d: f64,
    c: f64,
    p: f64,
}

impl TryFrom<RawScene> for Scene {
    type Error = Error;

    fn try_from(raw: RawScene) -> Result<Self> {
        Scene::new(raw.d, raw.c, raw.p)
    }
}

impl Scene {
    /// Builds a scene, checking finiteness and `p` in `(0, 1)`. Layout bounds
    /// are checked by [`validate_scene`].
    pub fn new(d: f64, c: f64, p: f64) -> Result<Self> {
        if !d.is_finite() {
            return Err(Error::OutOfRange { field: "d", value: d });
        }
        if !c.is_finite() {
            return Err(Error::OutOfRange { field: "c", value: c });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Degenerate(p));
        }
        Ok(Self { d, c, p })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.d, self.c, self.p]
    }

    /// Positions of source one and source two.
    pub fn positions(&self) -> (f64, f64) {
        (self.c - 0.5 * self.d, self.c + 0.5 * self.d)
    }

    /// The relabeled scene `(-d, c, 1 - p)` describing the same physical pair.
    pub fn swapped(&self) -> Scene {
        Scene {
            d: -self.d,
            c: self.c,
            p: 1.0 - self.p,
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d={}, c={}, p={})", self.d, self.c, self.p)
    }
}

/// Validates a raw `(d, c, p)` triple against the layout's bounds.
pub fn validate_scene(raw: (f64, f64, f64), layout: &DemuxLayout) -> Result<Scene> {
    let (d, c, p) = raw;
    let scene = Scene::new(d, c, p)?;
    let bounds = &layout.bounds;
    let (d_lo, d_hi) = bounds.d_range();
    if d < d_lo || d > d_hi {
        return Err(Error::OutOfRange { field: "d", value: d });
    }
    if c.abs() > bounds.c_max {
        return Err(Error::OutOfRange { field: "c", value: c });
    }
    Ok(scene)
}

/// Horizontal Hermite-Gauss mode `HG_{n0}` of demultiplexer 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeId {
    pub demux: u8,
    pub order: u32,
}

impl ModeId {
    pub const fn new(demux: u8, order: u32) -> Self {
        Self { demux, order }
    }

    /// Column label used in CSV files, e.g. `m1_hg10`.
    pub fn label(&self) -> String {
        format!("m{}_hg{}0", self.demux, self.order)
    }

    pub fn parse_label(label: &str) -> Option<Self> {
        let rest = label.strip_prefix('m')?;
        let (demux, rest) = rest.split_once("_hg")?;
        let order = rest.strip_suffix('0')?;
        Some(Self {
            demux: demux.parse().ok()?,
            order: order.parse().ok()?,
        })
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Four lowest horizontal modes of demux 1 plus `HG10` of demux 2.
pub fn default_dual_modes() -> Vec<ModeId> {
    vec![
        ModeId::new(1, 0),
        ModeId::new(1, 1),
        ModeId::new(1, 2),
        ModeId::new(1, 3),
        ModeId::new(2, 1),
    ]
}

pub fn default_single_modes() -> Vec<ModeId> {
    default_dual_modes().into_iter().filter(|m| m.demux == 1).collect()
}

#[derive(Debug, Clone, Deserialize)]
struct RawLayout {
    #[serde(default = "unit_waist")]
    waist: f64,
    shift2: f64,
    split1: f64,
    active_modes: Vec<ModeId>,
    dual: bool,
    #[serde(default)]
    bounds: SceneBounds,
}

fn unit_waist() -> f64 {
    1.0
}

/// One or two mode sorters sharing the incoming light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct DemuxLayout {
    waist: f64,
    shift2: f64,
    split1: f64,
    active_modes: Vec<ModeId>,
    dual: bool,
    bounds: SceneBounds,
}

impl TryFrom<RawLayout> for DemuxLayout {
    type Error = Error;

    fn try_from(raw: RawLayout) -> Result<Self> {
        let layout = DemuxLayout::new(raw.dual, raw.shift2, raw.split1, raw.active_modes)?;
        if (raw.waist - 1.0).abs() > 0.0 {
            return Err(Error::InvalidLayout(
                "waist is the length unit and must be 1.0".into(),
            ));
        }
        Ok(layout.with_bounds(raw.bounds))
    }
}

impl DemuxLayout {
    pub fn new(dual: bool, shift2: f64, split1: f64, active_modes: Vec<ModeId>) -> Result<Self> {
        if !(split1 > 0.0 && split1 <= 1.0) {
            return Err(Error::InvalidLayout(format!("split1 = {split1} not in (0, 1]")));
        }
        if !dual && split1 != 1.0 {
            return Err(Error::InvalidLayout(
                "a single-demux layout must send all light to demux 1".into(),
            ));
        }
        if dual && split1 == 1.0 {
            return Err(Error::InvalidLayout(
                "a dual layout must send some light to demux 2".into(),
            ));
        }
        if !shift2.is_finite() {
            return Err(Error::InvalidLayout("shift2 must be finite".into()));
        }
        if active_modes.is_empty() {
            return Err(Error::InvalidLayout("no active modes".into()));
        }
        for (i, m) in active_modes.iter().enumerate() {
            match m.demux {
                1 => {}
                2 if dual => {}
                2 => {
                    return Err(Error::InvalidLayout(format!(
                        "mode {m} requires a dual layout"
                    )))
                }
                _ => return Err(Error::InvalidLayout(format!("unknown demux in {m:?}"))),
            }
            if active_modes[..i].contains(m) {
                return Err(Error::InvalidLayout(format!("duplicate mode {m}")));
            }
        }
        Ok(Self {
            waist: 1.0,
            shift2,
            split1,
            active_modes,
            dual,
            bounds: SceneBounds::default(),
        })
    }

    /// Two sorters, the second shifted by `0.3 w0`, light split evenly.
    pub fn dual_default() -> Self {
        Self::new(true, 0.3, 0.5, default_dual_modes()).expect("default layout is valid")
    }

    pub fn single_default() -> Self {
        Self::new(false, 0.0, 1.0, default_single_modes()).expect("default layout is valid")
    }

    pub fn with_bounds(mut self, bounds: SceneBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn shift2(&self) -> f64 {
        self.shift2
    }

    pub fn split1(&self) -> f64 {
        self.split1
    }

    pub fn is_dual(&self) -> bool {
        self.dual
    }

    pub fn active_modes(&self) -> &[ModeId] {
        &self.active_modes
    }

    pub fn n_modes(&self) -> usize {
        self.active_modes.len()
    }

    pub fn bounds(&self) -> &SceneBounds {
        &self.bounds
    }

    /// Fraction of the light reaching a given demultiplexer.
    pub fn split(&self, demux: u8) -> f64 {
        if demux == 1 {
            self.split1
        } else {
            1.0 - self.split1
        }
    }

    /// Lateral offset of a demultiplexer's mode basis.
    pub fn shift(&self, demux: u8) -> f64 {
        if demux == 1 {
            0.0
        } else {
            self.shift2
        }
    }

    /// Short configuration tag, `1mplc` or `2mplc`.
    pub fn config_tag(&self) -> &'static str {
        if self.dual {
            "2mplc"
        } else {
            "1mplc"
        }
    }
}

/// Expected number of signal photons per time bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PhotonBudget(f64);

impl PhotonBudget {
    pub fn new(n_total: f64) -> Result<Self> {
        if n_total > 0.0 && n_total.is_finite() {
            Ok(Self(n_total))
        } else {
            Err(Error::OutOfRange {
                field: "n_total",
                value: n_total,
            })
        }
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

impl Default for PhotonBudget {
    fn default() -> Self {
        Self(1e11)
    }
}

impl TryFrom<f64> for PhotonBudget {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhotonBudget> for f64 {
    fn from(b: PhotonBudget) -> f64 {
        b.0
    }
}

/// Time-binned observation vectors over the active modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    bins: Vec<DVector<f64>>,
    bin_duration: f64,
    photon_budget: PhotonBudget,
}

impl ObservationSeries {
    /// Entries must be finite and at most `1 + NORM_EPS`. Entries slightly
    /// below zero are accepted: additive noise on nearly empty modes produces
    /// them, and clipping would bias the estimates.
    pub fn new(
        bins: Vec<DVector<f64>>,
        bin_duration: f64,
        photon_budget: PhotonBudget,
    ) -> Result<Self> {
        let m = bins.first().map(|b| b.len()).unwrap_or(0);
        for (k, bin) in bins.iter().enumerate() {
            if bin.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    found: bin.len(),
                });
            }
            if let Some(v) = bin.iter().find(|v| !v.is_finite() || **v > 1.0 + NORM_EPS) {
                return Err(Error::InvalidObservation(format!("bin {k} holds fraction {v}")));
            }
        }
        if !(bin_duration > 0.0) {
            return Err(Error::InvalidObservation(format!(
                "bin duration {bin_duration} must be positive"
            )));
        }
        Ok(Self {
            bins,
            bin_duration,
            photon_budget,
        })
    }

    pub fn bins(&self) -> &[DVector<f64>] {
        &self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_modes(&self) -> usize {
        self.bins.first().map(|b| b.len()).unwrap_or(0)
    }

    pub fn bin_duration(&self) -> f64 {
        self.bin_duration
    }

    pub fn photon_budget(&self) -> PhotonBudget {
        self.photon_budget
    }

    /// Per-mode sample mean over bins.
    pub fn mean(&self) -> DVector<f64> {
        let m = self.n_modes();
        let mut acc = DVector::zeros(m);
        for b in &self.bins {
            acc += b;
        }
        if !self.bins.is_empty() {
            acc /= self.bins.len() as f64;
        }
        acc
    }
}

/// Default bin length: 100 samples at 10 kHz.
pub const DEFAULT_BIN_DURATION: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_scene_examples() {
        let layout = DemuxLayout::dual_default();
        assert!(validate_scene((0.1, 0.0, 0.5), &layout).is_ok());
        assert!(validate_scene((0.0, 0.0, 0.5), &layout).is_ok());
        assert!(matches!(
            validate_scene((0.1, 0.0, 1.0), &layout),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            validate_scene((0.1, 0.0, 0.0), &layout),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            validate_scene((0.6, 0.0, 0.5), &layout),
            Err(Error::OutOfRange { field: "d", .. })
        ));
        assert!(matches!(
            validate_scene((0.1, -0.31, 0.5), &layout),
            Err(Error::OutOfRange { field: "c", .. })
        ));
    }

    #[test]
    fn symmetric_bounds_reject_negative_d() {
        let layout = DemuxLayout::dual_default()
            .with_bounds(SceneBounds::default().symmetric());
        assert!(validate_scene((-0.1, 0.0, 0.5), &layout).is_err());
        assert!(validate_scene((0.1, 0.0, 0.5), &layout).is_ok());
    }

    #[test]
    fn single_layout_rejects_second_demux_modes() {
        let err = DemuxLayout::new(false, 0.0, 1.0, default_dual_modes()).unwrap_err();
        assert!(matches!(err, Error::InvalidLayout(_)));
        assert!(DemuxLayout::new(false, 0.0, 0.5, default_single_modes()).is_err());
        assert!(DemuxLayout::new(true, 0.3, 0.5, vec![]).is_err());
        let dup = vec![ModeId::new(1, 0), ModeId::new(1, 0)];
        assert!(DemuxLayout::new(false, 0.0, 1.0, dup).is_err());
    }

    #[test]
    fn default_layouts() {
        let dual = DemuxLayout::dual_default();
        assert_eq!(dual.split1(), 0.5);
        assert_eq!(dual.shift2(), 0.3);
        assert_eq!(dual.n_modes(), 5);
        assert_eq!(DemuxLayout::single_default().n_modes(), 4);
    }

    #[test]
    fn layout_json_validates() {
        let bad = r#"{"shift2":0.3,"split1":1.0,"dual":false,
            "active_modes":[{"demux":2,"order":1}]}"#;
        assert!(serde_json::from_str::<DemuxLayout>(bad).is_err());
        let good = serde_json::to_string(&DemuxLayout::dual_default()).unwrap();
        let back: DemuxLayout = serde_json::from_str(&good).unwrap();
        assert_eq!(back, DemuxLayout::dual_default());
    }

    #[test]
    fn mode_labels_round_trip() {
        for m in default_dual_modes() {
            assert_eq!(ModeId::parse_label(&m.label()), Some(m));
        }
        assert_eq!(ModeId::new(2, 1).label(), "m2_hg10");
        assert_eq!(ModeId::parse_label("total_power"), None);
    }

    #[test]
    fn observation_series_checks_entries() {
        let budget = PhotonBudget::default();
        let ok = vec![DVector::from_vec(vec![0.5, 0.1]), DVector::from_vec(vec![0.4, 0.2])];
        assert!(ObservationSeries::new(ok, 1e-4, budget).is_ok());
        let too_big = vec![DVector::from_vec(vec![1.1, 0.1])];
        assert!(ObservationSeries::new(too_big, 1e-4, budget).is_err());
        let ragged = vec![DVector::from_vec(vec![0.5]), DVector::from_vec(vec![0.4, 0.2])];
        assert!(ObservationSeries::new(ragged, 1e-4, budget).is_err());
        assert!(PhotonBudget::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn scene_construction_is_total(d in -1.0f64..1.0, c in -1.0f64..1.0, p in -0.5f64..1.5) {
            let layout = DemuxLayout::dual_default();
            match validate_scene((d, c, p), &layout) {
                Ok(s) => {
                    prop_assert!(s.p() > 0.0 && s.p() < 1.0);
                    prop_assert!(s.d().abs() <= 0.5 && s.c().abs() <= 0.3);
                    let json = serde_json::to_string(&s).unwrap();
                    let back: Scene = serde_json::from_str(&json).unwrap();
                    prop_assert_eq!(back.d().to_bits(), s.d().to_bits());
                    prop_assert_eq!(back.c().to_bits(), s.c().to_bits());
                    prop_assert_eq!(back.p().to_bits(), s.p().to_bits());
                }
                Err(Error::Degenerate(_)) => prop_assert!(!(p > 0.0 && p < 1.0)),
                Err(Error::OutOfRange { .. }) => {
                    prop_assert!(d.abs() > 0.5 || c.abs() > 0.3)
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
