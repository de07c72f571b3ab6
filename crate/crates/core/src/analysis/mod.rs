//! Study-level computations over a count store and prediction sets.

pub mod approx;
pub mod curriculum;
pub mod fit;
pub mod overfit;
pub mod perf;
pub mod report;
pub mod sample;

pub use approx::{approx_criterion, ApproxOptions, ApproxResult, ApproxRow, Band};
pub use curriculum::{curriculum, SeriesPoint};
pub use fit::{linear_fit, FitSummary, XTransform};
pub use overfit::{overfit_detect, DetectorConfig, LossSeries, Split, StopReport};
pub use perf::{performance_grid, GridCell, PerformanceGrid};
pub use report::{rule_selection_report, RuleSelectionReport, TokenReport};
pub use sample::{sample_contexts, ContextSample, SampledContext};
