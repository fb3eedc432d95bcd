//! Demand-system estimation on household consumption microdata.
//!
//! The crate fits the linear-approximate Almost Ideal Demand System (LA-AIDS)
//! under adding-up, homogeneity and symmetry, builds an alternate dataset in
//! which every First Stage Unit (FSU) shares a single price per item, and
//! provides the machinery used to judge whether that simplification preserves
//! budget-share distributions, expenditure inequality and elasticities:
//!
//! - [`survey`]: CSV ingestion, NA-row dropping, share construction, price uniformization
//! - [`aids`]: restricted LA-AIDS fit, prediction, state effects from residuals
//! - [`calibration`]: measurement-error models, calibration matrix, CV grid search
//! - [`dist_tests`]: two-sample KS, Cramér permutation test, Gini significance gap
//! - [`inequality`]: Lorenz curves and Gini indices
//! - [`elasticity`]: expenditure, Marshallian and Hicksian elasticities
//! - [`synth`]: synthetic populations with known parameters

// dense matrix code reads better with explicit (i, j) indices
#![allow(clippy::needless_range_loop)]

pub mod aids;
pub mod calibration;
pub mod elasticity;
mod error;
pub mod inequality;
mod linalg;
pub mod serde_matrix;
pub mod survey;
pub mod synth;

pub use aids::{
    estimate_state_effects, fit_la_aids, predict_shares, state_effects_for_parameters,
    stone_log_price_index, AidsParameters, FitOptions, FitReport, PriceIndex,
    RestrictionDiagnostics, ShareBasis, StateEffects,
};
pub use calibration::{
    apply_measurement_model, build_calibration_matrix, calibrate_dataset, correct_parameters,
    cv_error, cv_error_with, fit_calibrated, fold_assignment, grid_search, grid_search_with,
    CalibrationMatrix, CalibrationMode, CalibrationSpec, CvResult, ErrorTarget, GridPoint,
    GridPreset, Loss, MeasurementNoise,
};
pub use dist_tests::{
    cramer_two_sample, gini_significance_compare, ks_two_sample, Decision, GiniComparison,
    GiniDecision, TestResult,
};
pub use elasticity::{
    compare_elasticities, compare_elasticities_with, compute_elasticities, ElasticityComparison,
    ElasticitySet,
};
pub use error::{Error, ErrorClass, Result};
pub use inequality::{
    gini_index, item_expenditures, lorenz_curve, GiniFormula, GiniResult, LorenzCurve,
};
pub use survey::{
    build_demand_dataset, parse_survey_csv, parse_survey_reader, uniformize_prices, BuildReport,
    DemandDataset, Household, HouseholdRecord, ParsedSurvey, PriceStrategy, SurveySchema,
};
/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use synth::{generate, random_parameters, GroundTruth, SyntheticConfig};
