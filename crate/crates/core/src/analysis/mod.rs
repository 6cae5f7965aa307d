//! Post-hoc analysis: road geometry, exponential fits, factor statistics,
//! the closed-form deviation model and success metrics.

mod closed_form;
mod factors;
mod fit;
mod geometry;
mod metrics;
mod stats;

pub use closed_form::{closed_form_dev2, ClosedFormDevs, ClosedFormInputs};
pub use factors::{extract_factors, factor_importance, median_split_table, Factor, FactorImportance, FactorSample};
pub use fit::{fit_exponential, growth_onset, is_takeover, ExpFit, TAKEOVER_BASE};
pub use geometry::{goal_thresholds, lateral_deviation, GoalThresholds, RoadGeometry, RoadType};
pub use metrics::{success_metrics, CellStats, SuccessReport};
pub use stats::{fisher_exact, incomplete_beta, ln_gamma, pearson, student_t_two_sided, Correlation, FisherResult};
