//! Cross-validation, correlation tables, lengthscale reports and marginal
//! feature sweeps.

mod correlate;
mod cv;
mod interpret;
mod stats;

pub use correlate::{correlation_table, ved_scatter, write_ved_csv, CorrelationTable, VedPoint};
pub use cv::{run_cv, write_folds_csv, write_table_csv, CvConfig, CvReport, CvRow, FoldRmse, FUSED_LABEL};
pub use interpret::{
    lengthscale_report, linspace, marginal_sweep, write_lengthscale_csv, LengthscaleEntry, LengthscaleReport,
    MarginalSweep, SweepPoint, INFLUENCE_THRESHOLD,
};
pub use stats::{average_ranks, pearson, rmse, spearman};
