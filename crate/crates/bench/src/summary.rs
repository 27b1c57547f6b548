//! Per-experiment medians over repeats.

use std::path::{Path, PathBuf};

use qnbo::TraceRecord;

use crate::config::ExperimentSpec;
use crate::error::{BenchError, Result};
use crate::output::{aligned, fmt_f64, fmt_opt, write_table};
use crate::runner::ExperimentReport;

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "name",
    "method",
    "problem",
    "repeats",
    "outer_steps",
    "threshold",
    "iters_to_threshold",
    "final_hypergrad_norm",
    "final_hypergrad_err",
    "final_x_dist",
    "wall_ms",
    "gc_f",
    "gc_F",
    "jv",
    "hvp",
    "val_accuracy",
];

/// Median of the values; an even count averages the middle two.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Number of outer steps until the tracked error first drops to `threshold`.
/// Tracks `hypergrad_err` when it is recorded, `‖∇̃Φ‖` otherwise.
pub fn iters_to_threshold(trace: &[TraceRecord<f64>], threshold: f64) -> Option<usize> {
    trace
        .iter()
        .position(|r| r.hypergrad_err.unwrap_or(r.hypergrad_norm) <= threshold)
        .map(|k| k + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub name: String,
    pub method: String,
    pub problem: String,
    pub repeats: usize,
    pub outer_steps: usize,
    pub threshold: Option<f64>,
    /// `None` when the median repeat never reached the threshold.
    pub iters_to_threshold: Option<f64>,
    pub final_hypergrad_norm: f64,
    pub final_hypergrad_err: Option<f64>,
    pub final_x_dist: Option<f64>,
    pub wall_ms: f64,
    pub gc_f: f64,
    pub gc_ul: f64,
    pub jv: f64,
    pub hvp: f64,
    pub val_accuracy: Option<f64>,
}

fn med_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.and_then(|v| median(&v))
}

impl Summary {
    pub fn of(report: &ExperimentReport) -> Self {
        let spec = &report.spec;
        let last: Vec<&TraceRecord<f64>> = report
            .repeats
            .iter()
            .filter_map(|r| r.trace.last())
            .collect();
        let med = |f: &dyn Fn(&TraceRecord<f64>) -> f64| {
            median(&last.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN)
        };
        let iters = spec.threshold.and_then(|t| {
            let v: Vec<f64> = report
                .repeats
                .iter()
                .map(|r| iters_to_threshold(&r.trace, t).map_or(f64::INFINITY, |k| k as f64))
                .collect();
            median(&v).filter(|m| m.is_finite())
        });
        Summary {
            name: spec.name.clone(),
            method: spec.method.as_str().into(),
            problem: spec.problem.kind().into(),
            repeats: report.repeats.len(),
            outer_steps: spec.solver.outer_steps,
            threshold: spec.threshold,
            iters_to_threshold: iters,
            final_hypergrad_norm: med(&|r| r.hypergrad_norm),
            final_hypergrad_err: med_opt(last.iter().map(|r| r.hypergrad_err)),
            final_x_dist: med_opt(last.iter().map(|r| r.x_dist)),
            wall_ms: med(&|r| r.wall_ns as f64 * 1e-6),
            gc_f: med(&|r| r.oracle_counts.ll_grad as f64),
            gc_ul: med(&|r| (r.oracle_counts.ul_grad_x + r.oracle_counts.ul_grad_y) as f64),
            jv: med(&|r| r.oracle_counts.jvp as f64),
            hvp: med(&|r| r.oracle_counts.hvp as f64),
            val_accuracy: med_opt(
                report
                    .repeats
                    .iter()
                    .map(|r| r.metrics.get("val_accuracy").copied()),
            ),
        }
    }

    pub fn row(&self) -> Vec<String> {
        let count = |v: f64| {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v}")
            }
        };
        vec![
            self.name.clone(),
            self.method.clone(),
            self.problem.clone(),
            self.repeats.to_string(),
            self.outer_steps.to_string(),
            fmt_opt(self.threshold),
            self.iters_to_threshold.map(count).unwrap_or_default(),
            fmt_f64(self.final_hypergrad_norm),
            fmt_opt(self.final_hypergrad_err),
            fmt_opt(self.final_x_dist),
            format!("{:.3}", self.wall_ms),
            count(self.gc_f),
            count(self.gc_ul),
            count(self.jv),
            count(self.hvp),
            self.val_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_default(),
        ]
    }
}

pub fn write_summaries(path: &Path, summaries: &[Summary]) -> Result<PathBuf> {
    let rows: Vec<Vec<String>> = summaries.iter().map(Summary::row).collect();
    write_table(path, &SUMMARY_COLUMNS, &rows)
}

/// Experiments can only be compared on one problem instance: same problem
/// settings, seeds and repeat count.
pub fn check_comparable(specs: &[ExperimentSpec]) -> Result<()> {
    let Some(a) = specs.first() else {
        return Err(BenchError::config("compare", "no experiments given"));
    };
    for b in &specs[1..] {
        if b.problem != a.problem || b.base_seed != a.base_seed || b.repeats != a.repeats {
            return Err(BenchError::config(
                b.name.clone(),
                format!(
                    "problem instance differs from '{}' (problem, base_seed and repeats must match)",
                    a.name
                ),
            ));
        }
    }
    Ok(())
}

/// Terminal table for `compare`.
pub fn comparison_table(summaries: &[Summary]) -> String {
    let header = [
        "name",
        "method",
        "iters",
        "final_err",
        "final_norm",
        "gc_f",
        "gc_F",
        "jv",
        "hvp",
        "wall_ms",
    ];
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let r = s.row();
            vec![
                r[0].clone(),
                r[1].clone(),
                if r[6].is_empty() {
                    "-".into()
                } else {
                    r[6].clone()
                },
                if r[8].is_empty() {
                    "-".into()
                } else {
                    r[8].clone()
                },
                r[7].clone(),
                r[11].clone(),
                r[12].clone(),
                r[13].clone(),
                r[14].clone(),
                r[10].clone(),
            ]
        })
        .collect();
    aligned(&header, &rows)
}

/// The experiment with the fewest `jv + hvp` calls among those that reached
/// the threshold (all of them when none has a threshold).
pub fn fewest_second_order_calls(summaries: &[Summary]) -> Option<&Summary> {
    let reached: Vec<&Summary> = summaries
        .iter()
        .filter(|s| s.iters_to_threshold.is_some())
        .collect();
    let pool = if reached.is_empty() && summaries.iter().all(|s| s.threshold.is_none()) {
        summaries.iter().collect()
    } else {
        reached
    };
    pool.into_iter()
        .min_by(|a, b| (a.jv + a.hvp).total_cmp(&(b.jv + b.hvp)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even_counts() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(
            median(&[1.0, f64::INFINITY, f64::INFINITY]),
            Some(f64::INFINITY)
        );
    }

    #[test]
    fn threshold_counts_steps_not_indices() {
        let mut r = TraceRecord {
            k: 0,
            q: 1,
            hypergrad_norm: 1.0,
            hypergrad_err: None,
            exact_grad_norm: None,
            x_dist: None,
            y_dist: None,
            f_grad_norm: 0.0,
            pairs_shared: 0,
            pairs_rejected: 0,
            direction_residual: None,
            oracle_counts: Default::default(),
            wall_ns: 0,
        };
        let mut trace = vec![r.clone()];
        r.hypergrad_norm = 0.1;
        trace.push(r.clone());
        assert_eq!(iters_to_threshold(&trace, 0.5), Some(2));
        assert_eq!(iters_to_threshold(&trace, 1.0), Some(1));
        assert_eq!(iters_to_threshold(&trace, 0.01), None);
        r.hypergrad_err = Some(0.001);
        assert_eq!(iters_to_threshold(&[r], 0.01), Some(1));
    }
}
