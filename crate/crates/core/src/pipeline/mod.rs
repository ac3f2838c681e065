//! End-to-end benchmark: ingest, features and labels, generator jobs,
//! fidelity, utility, privacy, significance, and report export.

mod config;
mod pareto;
mod report;
mod run;

pub use config::{
    DataSource, FeatureParams, FidelityParams, GeneratorOverrides, JobSpec, RunConfig, SAMPLE_DAYS, SAMPLE_HOUSEHOLDS,
    SAMPLE_SEED,
};
pub use pareto::{pareto_frontier, ParetoRow};
pub use report::{
    render_markdown, render_pareto_csv, render_projection_csv, table_fidelity_utility, table_mia, table_reconstruction,
    table_utility, ClassifierSignificance, DatasetReport, EvalReport, JobStatus, REPORT_FILE,
};
pub use run::{load_real_table, run, write_outputs, RunOptions};
