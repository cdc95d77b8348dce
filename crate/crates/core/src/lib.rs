//! Two-point superresolution with one or two Hermite-Gauss mode sorters.
//!
//! Positions are in units of the beam waist `w0`. A scene is two incoherent
//! point sources with separation `d`, centroid `c` and brightness fraction
//! `p` of the source at `c - d/2`.

pub mod calibration;
pub mod error;
pub mod estimator;
pub mod fisher;
pub mod forward;
pub mod io;
pub mod optics;
pub mod response;
pub mod scene;
pub mod synth;

pub use calibration::{fit_scan, CalibrationScan, SourceResponseModel};
pub use error::{Error, Result};
pub use estimator::{
    estimate, estimate_covariance, estimate_series, loss, scene_statistics, EstimationResult,
    NoiseCovariance, OptimizerConfig, SceneStatistics,
};
pub use fisher::{crb_sweep, fim_gaussian, fim_shot_noise, qcrb_benchmark, EnsembleSweep, FisherResult};
pub use forward::ForwardModel;
pub use optics::{hg_intensity_fraction, IdealResponse};
pub use response::{SourceResponse, TwinResponse};
pub use scene::{
    validate_scene, DemuxLayout, ModeId, ObservationSeries, PhotonBudget, Scene, SceneBounds, Source,
    Window,
};
pub use synth::{
    emulate_indistinguishable, generate_table1_ensemble, simulate_bins, Ensemble, NoiseSpec,
    SingleSourceTimeSeries,
};

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod test_oracle;
