//! Spatial interpolation of daily precipitation and of the precipitation
//! indexes CDD and MFP, with cross-validated evaluation.
//!
//! * [`geo`]: stations, distances, the station × date observation panel.
//! * [`covariance`]: empirical semivariograms and spherical model fits.
//! * [`interpolators`]: NN, IDW, ordinary, universal and trans-Gaussian
//!   kriging, plus the IDW fallback.
//! * [`indexes`]: CDD and MFP.
//! * [`evaluation`]: k-fold cross-validation, error metrics, direct and
//!   two-stage index pipelines, distribution moments.
//!
//! Work over days and periods runs on rayon when the `parallel` feature is
//! enabled (the default); see [`par::Execution`].

pub mod covariance;
pub mod evaluation;
pub mod geo;
pub mod indexes;
pub mod interpolators;
pub mod linalg;
pub mod par;
pub mod synthetic;

pub use covariance::{
    covariance_eval, empirical_semivariogram, fit_spherical, gls_trend, iterated_gls,
    EmpiricalVariogram, FitDiagnostics, FitOptions, SphericalModel, VariogramOptions,
};
pub use evaluation::{
    cv_daily, kfold_split, run_direct, run_two_stage, EvalConfig, EvaluationReport, FoldAssignment,
};
pub use geo::{distance, nearest_station, validate_panel, Coord, DistanceMatrix, DistanceMetric, ObservationPanel, Station};
pub use indexes::{cdd, index_panel, is_dry_day, mfp, IndexKind, IndexSettings};
pub use interpolators::{
    boxcox, idw_predict, nn_predict, ok_predict, tgk_predict, uk_predict, with_fallback,
    FieldSnapshot, InterpConfig, KrigingSolution, Method, TransformSpec,
};
pub use par::Execution;
