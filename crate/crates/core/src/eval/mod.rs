//! Metrics, test-set evaluation, sweeps and trajectory serving.

mod metrics;
mod plot;
mod report;
mod serve;
mod sweep;

pub use metrics::{
    cosine_corr, cosine_corr_batch, cosine_corr_each, error_cdf, median, nmse, nmse_batch, nmse_each, to_db,
};
pub use plot::{cdf_plot_data, serve_plot_data, sweep_plot_data};
pub use report::{
    evaluate, parse_reports_csv, reports_csv, test_windows, DisturbMode, EvalReport, InputNoise, Labels, REPORT_HEADER,
};
pub(crate) use report::file_stem;
pub use serve::{serve_trajectory, serving_truth, ServeLog, ServeMode, ServeRow, Source, WindowEntry};
pub use sweep::{sweep_disturbance, sweep_past_length, sweep_pilot_size, Provider, SIGMA_GRID};
