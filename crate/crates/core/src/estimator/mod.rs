//! Two-way fixed-effects estimation with user-clustered inference.

pub mod demean;
pub mod did;
pub mod imputation;
pub mod ols;

pub use demean::{demean_two_way, DemeanInfo, TwoWayIndex};
pub use did::{
    did_battery, did_estimate, event_study, five_bin_layout, pct_of_mean, summarize_fit, validate_bins,
    week_bins, weekly_interactions, EventCoef, EventStudyResult, PanelData, PreMeanMode, SpecOptions,
    TermBins, DID_TERM, WEEK1_TERM, WEEK2_TERM,
};
pub use imputation::{imputation_att, ImputationOptions, ImputationResult};
pub use ols::{fit_design, Coefficient, DofConvention, FitDiagnostics, FitOptions, FitResult, TwfeDesign};
