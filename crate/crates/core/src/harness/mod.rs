//! Cost and metrics, the closed-loop driver, open-loop validation and reports.

pub mod closed_loop;
pub mod metrics;
pub mod report;
pub mod validate;

pub use closed_loop::{
    drag_reduction, run_closed_loop, ClosedLoopConfig, ClosedLoopLog, ClosedLoopMeta, Controller, DEFAULT_DURATION,
    DEFAULT_T_SETTLE, LOG_HEADER,
};
pub use metrics::{cost_j, moving_average, reduction_pct, window_len, CostParams, OMEGA_L, T_WINDOW};
pub use report::{build_report, format_table, read_logs, write_report_csv, ReportRow, REPORT_HEADER};
pub use validate::{held_out_trajectories, open_loop_error, OpenLoopError};
