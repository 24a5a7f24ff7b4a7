//! Per-regime drag-reduction summary over a set of closed-loop logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::closed_loop::{drag_reduction, ClosedLoopLog};
use crate::scalar::fmt17;

pub const REPORT_HEADER: &str = "regime,controller,seed,reduction_pct,mean_J";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub regime: f64,
    pub controller: String,
    pub seed: u64,
    pub reduction_pct: f64,
    pub mean_j: f64,
}

/// One row per log; each is compared with the uncontrolled log of the
/// same regime.
pub fn build_report(logs: &[ClosedLoopLog], t_settle: f64) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(logs.len());
    for log in logs {
        let baseline = logs
            .iter()
            .find(|b| b.meta.controller == "none" && (b.meta.regime - log.meta.regime).abs() < 1e-9)
            .ok_or_else(|| Error::Config(format!("no uncontrolled baseline for regime {}", log.meta.regime)))?;
        rows.push(ReportRow {
            regime: log.meta.regime,
            controller: log.meta.controller.clone(),
            seed: log.meta.seed,
            reduction_pct: drag_reduction(baseline, log, t_settle)?,
            mean_j: log.mean_after(&log.j, t_settle)?,
        });
    }
    rows.sort_by(|a, b| {
        a.regime
            .total_cmp(&b.regime)
            .then_with(|| a.controller.cmp(&b.controller))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(r.regime),
            r.controller,
            r.seed,
            fmt17(r.reduction_pct),
            fmt17(r.mean_j)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Fixed-width text table.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut out = format!("{:>10}  {:<12}  {:>6}  {:>14}  {:>10}\n", "regime", "controller", "seed", "reduction [%]", "mean J");
    for r in rows {
        out.push_str(&format!(
            "{:>10.2}  {:<12}  {:>6}  {:>14.2}  {:>10.5}\n",
            r.regime, r.controller, r.seed, r.reduction_pct, r.mean_j
        ));
    }
    out
}

/// Reads every `*.csv` log with a sidecar in `dir`.
pub fn read_logs(dir: &Path) -> Result<Vec<ClosedLoopLog>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension("json").exists())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("closed-loop logs"));
    }
    paths.iter().map(|p| ClosedLoopLog::read(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::closed_loop::{run_closed_loop, ClosedLoopConfig, Controller};
    use crate::plant::make_plant;

    #[test]
    fn baseline_row_is_zero_and_missing_baseline_is_an_error() {
        let p = make_plant(300.0).unwrap();
        let cfg = ClosedLoopConfig { duration: 10.0, ..Default::default() };
        let base = run_closed_loop(&p, &Controller::None, &cfg, 0).unwrap();
        let rows = build_report(std::slice::from_ref(&base), 2.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].reduction_pct, 0.0);
        assert!(format_table(&rows).contains("none"));

        let mut other = base.clone();
        other.meta.controller = "mpc".into();
        other.meta.regime = 500.0;
        assert!(build_report(&[base, other], 2.0).is_err());
    }
}
