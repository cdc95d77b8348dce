//! Fixtures shared by the pipeline benchmarks.

use spade_core::calibration::{even_positions, DEFAULT_DEGREE};
use spade_core::*;

/// Dual-sorter model with ideal curves for both sources.
pub fn ideal_dual() -> ForwardModel {
    let layout = DemuxLayout::dual_default();
    ForwardModel::from_response(IdealResponse::new(layout.clone()), layout).expect("default layout")
}

/// Dual-sorter model with a polynomial fit of the ideal curves.
pub fn fitted_dual() -> ForwardModel {
    let layout = DemuxLayout::dual_default();
    let ideal = IdealResponse::new(layout.clone());
    let scan = CalibrationScan::sample(&ideal, Source::One, even_positions(61, 0.35)).expect("scan");
    let fitted = fit_scan(&scan, DEFAULT_DEGREE).and_then(|m| m.aliased()).expect("fit");
    ForwardModel::from_response(fitted, layout).expect("fitted model")
}

/// A scene away from the fold at zero centroid.
pub fn scene() -> Scene {
    Scene::new(0.15, 0.05, 0.3).expect("valid scene")
}

/// Noiseless mean repeated over `bins` bins.
pub fn noiseless_series(model: &ForwardModel, scene: &Scene, bins: usize) -> ObservationSeries {
    let spec = NoiseSpec::gaussian(vec![0.0; model.n_modes()], bins, 0);
    simulate_bins(model, scene, &spec).expect("simulate")
}
