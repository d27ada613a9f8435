use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::trials::TrialRecord;
use crate::bounds::{self, Budgets};
use crate::error::Result;
use crate::instance::ProblemInstance;
use crate::schedule::Schedule;

/// Per-cell summary statistics. Standard deviations use the population
/// formula (divide by the number of trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub instance: String,
    pub schedule: Schedule,
    pub cost: f64,
    pub delta: f64,
    pub trials: u64,
    pub total_pulls_mean: f64,
    pub total_pulls_std: f64,
    pub comm_cost_mean: f64,
    pub comm_cost_std: f64,
    pub total_cost_mean: f64,
    pub total_cost_std: f64,
    pub error_rate: f64,
    pub event_e_rate: f64,
    pub hit_max_steps: u64,
    /// Whether this cell's schedule has a per-trial bound to check.
    pub bounds_checked: bool,
    /// Bound violations among trials on which the band event held.
    pub pull_violations: u64,
    pub comm_violations: u64,
    pub total_violations: u64,
}

/// Mean and population standard deviation, summed in sorted order so the
/// result does not depend on record order.
pub(crate) fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Violations {
    pub pulls: bool,
    pub comm: bool,
    pub total: bool,
}

/// Checks one trial against the bound that applies to its schedule: the
/// pull budget `T` for every-step communication, and the pull, communication
/// and total-cost bounds for doubling communication. Other schedules (and
/// trials outside the band event) are not checked.
pub(crate) fn trial_violations(r: &TrialRecord, b: &Budgets, num_clients: usize) -> Option<Violations> {
    if !r.event_e {
        return None;
    }
    match r.schedule {
        Schedule::EveryStep => Some(Violations {
            pulls: r.total_pulls as f64 > b.t_total,
            ..Violations::default()
        }),
        Schedule::Exponential { base: 2.0 } => {
            let pull_bound: f64 = b
                .t_km
                .iter()
                .zip(&b.t_k)
                .map(|(row, &tk)| row.iter().map(|&v| v.max(2.0 * tk)).sum::<f64>())
                .sum();
            let scalar_bound = num_clients as f64 * b.t_k.iter().map(|t| t.log2().ceil()).sum::<f64>();
            Some(Violations {
                pulls: r.total_pulls as f64 > pull_bound,
                comm: r.comm_cost > r.cost * scalar_bound,
                total: r.total_cost > 3.0 * b.t_total,
            })
        }
        _ => None,
    }
}

fn cell_order(a: &TrialRecord, b: &TrialRecord) -> std::cmp::Ordering {
    a.instance
        .cmp(&b.instance)
        .then_with(|| a.schedule.to_string().cmp(&b.schedule.to_string()))
        .then_with(|| a.cost.total_cmp(&b.cost))
        .then_with(|| a.delta.total_cmp(&b.delta))
}

/// Groups records by (instance, schedule, cost, delta) and summarizes each
/// group. Bound checks use `instance` when given.
pub fn aggregate(records: &[TrialRecord], instance: Option<&ProblemInstance>) -> Result<Vec<Aggregate>> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| cell_order(a, b));
    let mut budgets: HashMap<u64, Budgets> = HashMap::new();
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| cell_order(a, b).is_eq()) {
        let first = group[0];
        let n = group.len() as f64;
        let collect = |f: &dyn Fn(&TrialRecord) -> f64| group.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let (total_pulls_mean, total_pulls_std) = mean_std(&mut collect(&|r| r.total_pulls as f64));
        let (comm_cost_mean, comm_cost_std) = mean_std(&mut collect(&|r| r.comm_cost));
        let (total_cost_mean, total_cost_std) = mean_std(&mut collect(&|r| r.total_cost));

        let mut agg = Aggregate {
            instance: first.instance.clone(),
            schedule: first.schedule,
            cost: first.cost,
            delta: first.delta,
            trials: group.len() as u64,
            total_pulls_mean,
            total_pulls_std,
            comm_cost_mean,
            comm_cost_std,
            total_cost_mean,
            total_cost_std,
            error_rate: group.iter().filter(|r| !r.correct).count() as f64 / n,
            event_e_rate: group.iter().filter(|r| r.event_e).count() as f64 / n,
            hit_max_steps: group.iter().filter(|r| r.hit_max_steps).count() as u64,
            bounds_checked: false,
            pull_violations: 0,
            comm_violations: 0,
            total_violations: 0,
        };
        if let Some(inst) = instance {
            let b = match budgets.get(&first.delta.to_bits()) {
                Some(b) => b,
                None => {
                    let b = bounds::budgets(inst, first.delta)?;
                    budgets.entry(first.delta.to_bits()).or_insert(b)
                }
            };
            agg.bounds_checked = match first.schedule {
                Schedule::EveryStep => true,
                Schedule::Exponential { base } => base == 2.0,
                _ => false,
            };
            for r in group {
                if let Some(v) = trial_violations(r, b, inst.num_clients()) {
                    agg.pull_violations += v.pulls as u64;
                    agg.comm_violations += v.comm as u64;
                    agg.total_violations += v.total as u64;
                }
            }
        }
        out.push(agg);
    }
    Ok(out)
}

/// One long-format output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub schedule: String,
    #[serde(rename = "C")]
    pub cost: f64,
    pub delta: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

fn metric_rows(aggregates: &[Aggregate]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for a in aggregates {
        let rate_std = |p: f64| (p * (1.0 - p)).sqrt();
        let metrics = [
            ("total_pulls", a.total_pulls_mean, a.total_pulls_std),
            ("comm_cost", a.comm_cost_mean, a.comm_cost_std),
            ("total_cost", a.total_cost_mean, a.total_cost_std),
            ("error_rate", a.error_rate, rate_std(a.error_rate)),
            ("event_e_rate", a.event_e_rate, rate_std(a.event_e_rate)),
        ];
        for (metric, mean, std) in metrics {
            rows.push(MetricRow {
                schedule: a.schedule.to_string(),
                cost: a.cost,
                delta: a.delta,
                metric: metric.to_string(),
                mean,
                std,
            });
        }
    }
    rows
}

/// Writes `schedule,C,delta,metric,mean,std` rows, five metrics per cell.
pub fn emit_csv<W: Write>(writer: W, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in metric_rows(aggregates) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the same rows as a JSON array.
pub fn emit_json<W: Write>(writer: W, aggregates: &[Aggregate]) -> Result<()> {
    serde_json::to_writer_pretty(writer, &metric_rows(aggregates))?;
    Ok(())
}

pub fn read_json_rows<R: Read>(reader: R) -> Result<Vec<MetricRow>> {
    Ok(serde_json::from_reader(reader)?)
}
