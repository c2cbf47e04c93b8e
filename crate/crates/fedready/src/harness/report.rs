//! Correlation reporting: do the readiness indices predict the final
//! federated metric? Rows are grouped by (dataset, K); within a group
//! each alpha level is reduced to its across-seed mean (optional), and
//! every readiness column is correlated against the final metric with
//! both Pearson and Spearman.

use std::collections::BTreeMap;

use super::csv::SweepRow;
use crate::error::{Error, Result};
use crate::stats::{pearson, spearman, CorrelationResult};

pub const METRIC_COLUMNS: [&str; 5] =
    ["cohesion", "neg_dispersion", "density", "cdi", "avg_entropy"];

fn column(row: &SweepRow, metric: &str) -> f64 {
    match metric {
        "cohesion" => row.cohesion,
        "neg_dispersion" => row.neg_dispersion,
        "density" => row.density,
        "cdi" => row.cdi,
        "avg_entropy" => row.avg_entropy,
        other => unreachable!("unknown metric column {other}"),
    }
}

/// One correlation attempt: degenerate inputs (for example a constant
/// readiness column) fail per metric without affecting the others.
#[derive(Debug, Clone)]
pub enum CorrOutcome {
    Ok(CorrelationResult),
    Failed(String),
}

impl CorrOutcome {
    pub fn as_ok(&self) -> Option<&CorrelationResult> {
        match self {
            CorrOutcome::Ok(r) => Some(r),
            CorrOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub metric: &'static str,
    pub pearson: CorrOutcome,
    pub spearman: CorrOutcome,
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub dataset: String,
    pub k: usize,
    /// Correlation points (alpha levels after seed averaging, rows otherwise).
    pub points: usize,
    pub metrics: Vec<MetricReport>,
}

/// A (dataset, K) group either yields a report or fails as a whole
/// (too few alpha levels); other groups are unaffected.
#[derive(Debug, Clone)]
pub enum GroupOutcome {
    Ready(GroupReport),
    Failed { dataset: String, k: usize, message: String },
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Correlates readiness columns against the final metric per
/// (dataset, K) group. `seed_average` collapses each alpha level to
/// its across-seed mean first, which is the default reporting mode.
pub fn correlate_report(rows: &[SweepRow], seed_average: bool) -> Result<Vec<GroupOutcome>> {
    let complete: Vec<&SweepRow> = rows.iter().filter(|r| r.is_complete()).collect();
    if complete.is_empty() {
        return Err(Error::Domain(
            "no complete rows to correlate (failed cells are excluded)".into(),
        ));
    }

    let mut groups: BTreeMap<(String, usize), Vec<&SweepRow>> = BTreeMap::new();
    for row in complete {
        groups.entry((row.dataset.clone(), row.k)).or_default().push(row);
    }

    let mut outcomes = Vec::with_capacity(groups.len());
    for ((dataset, k), members) in groups {
        let mut distinct: Vec<f64> = members.iter().map(|r| r.alpha).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 3 {
            outcomes.push(GroupOutcome::Failed {
                dataset,
                k,
                message: format!(
                    "only {} distinct alpha level(s); need at least 3 for a correlation",
                    distinct.len()
                ),
            });
            continue;
        }

        // Assemble the points: one per alpha level (seed-averaged) or
        // one per row.
        let mut metric_points: Vec<Vec<f64>> = vec![Vec::new(); METRIC_COLUMNS.len()];
        let mut final_points: Vec<f64> = Vec::new();
        if seed_average {
            for &alpha in &distinct {
                let level: Vec<&&SweepRow> =
                    members.iter().filter(|r| r.alpha == alpha).collect();
                for (slot, metric) in metric_points.iter_mut().zip(METRIC_COLUMNS) {
                    let vals: Vec<f64> = level.iter().map(|r| column(r, metric)).collect();
                    slot.push(mean(&vals));
                }
                let finals: Vec<f64> = level.iter().map(|r| r.final_metric).collect();
                final_points.push(mean(&finals));
            }
        } else {
            for row in &members {
                for (slot, metric) in metric_points.iter_mut().zip(METRIC_COLUMNS) {
                    slot.push(column(row, metric));
                }
                final_points.push(row.final_metric);
            }
        }

        let run = |res: Result<CorrelationResult>| match res {
            Ok(r) => CorrOutcome::Ok(r),
            Err(e) => CorrOutcome::Failed(e.to_string()),
        };
        let metrics = METRIC_COLUMNS
            .iter()
            .zip(&metric_points)
            .map(|(&metric, x)| MetricReport {
                metric,
                pearson: run(pearson(x, &final_points)),
                spearman: run(spearman(x, &final_points)),
            })
            .collect();
        outcomes.push(GroupOutcome::Ready(GroupReport {
            dataset,
            k,
            points: final_points.len(),
            metrics,
        }));
    }
    Ok(outcomes)
}

fn outcome_cell(outcome: &CorrOutcome) -> (String, &'static str) {
    match outcome {
        CorrOutcome::Ok(r) => {
            (format!("{:+.4} (p={:.4})", r.r, r.p_value), if r.significant { "*" } else { " " })
        }
        CorrOutcome::Failed(_) => ("degenerate".to_string(), " "),
    }
}

/// Aligned text table, one block per group. Significant correlations
/// (p < 0.05) are flagged with `*`.
pub fn report_text(outcomes: &[GroupOutcome]) -> String {
    let mut out = String::new();
    for outcome in outcomes {
        match outcome {
            GroupOutcome::Failed { dataset, k, message } => {
                out.push_str(&format!("dataset={dataset} K={k}: cannot correlate: {message}\n\n"));
            }
            GroupOutcome::Ready(group) => {
                out.push_str(&format!(
                    "dataset={} K={} ({} points)\n",
                    group.dataset, group.k, group.points
                ));
                out.push_str(&format!(
                    "{:<16} {:<22} {:<3} {:<22} {:<3}\n",
                    "metric", "pearson r", "sig", "spearman r", "sig"
                ));
                for m in &group.metrics {
                    let (p_cell, p_sig) = outcome_cell(&m.pearson);
                    let (s_cell, s_sig) = outcome_cell(&m.spearman);
                    out.push_str(&format!(
                        "{:<16} {:<22} {:<3} {:<22} {:<3}\n",
                        m.metric, p_cell, p_sig, s_cell, s_sig
                    ));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Machine-readable form of the same report. Failed correlations keep
/// their row with NaN statistics and the failure message in `error`.
pub fn report_csv(outcomes: &[GroupOutcome]) -> String {
    let mut out = String::from("dataset,K,metric,method,r,p_value,n,significant,error\n");
    let mut push = |dataset: &str, k: usize, metric: &str, method: &str, o: &CorrOutcome| {
        match o {
            CorrOutcome::Ok(r) => out.push_str(&format!(
                "{dataset},{k},{metric},{method},{:.16e},{:.16e},{},{},\n",
                r.r, r.p_value, r.n, r.significant
            )),
            CorrOutcome::Failed(msg) => out.push_str(&format!(
                "{dataset},{k},{metric},{method},NaN,NaN,0,false,{}\n",
                msg.replace([',', '\n'], ";")
            )),
        }
    };
    for outcome in outcomes {
        match outcome {
            GroupOutcome::Failed { dataset, k, message } => {
                for metric in METRIC_COLUMNS {
                    for method in ["pearson", "spearman"] {
                        push(dataset, *k, metric, method, &CorrOutcome::Failed(message.clone()));
                    }
                }
            }
            GroupOutcome::Ready(group) => {
                for m in &group.metrics {
                    push(&group.dataset, group.k, m.metric, "pearson", &m.pearson);
                    push(&group.dataset, group.k, m.metric, "spearman", &m.spearman);
                }
            }
        }
    }
    out
}
