use std::fmt;

use serde::{Deserialize, Serialize};

use super::aggregate::mean_std;
use super::spec::DEFAULT_DELTAS;
use super::trials::TrialRecord;
use crate::bounds::BoundReport;
use crate::instance::{BUILTIN_BERNOULLI, BUILTIN_GAUSSIAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotEvaluated,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotEvaluated => "not evaluated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub status: Status,
    pub criteria: Vec<CriterionResult>,
}

impl fmt::Display for AcceptanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.criteria {
            writeln!(f, "criterion {:>2} [{}] {}: {}", c.id, c.status, c.name, c.detail)?;
        }
        write!(f, "overall: {}", self.status)
    }
}

const PAC_ERROR_LIMIT: usize = 5;
const THREE_TIMES: f64 = 3.0;
const PERIODIC_H1_MARGIN: f64 = 5.0;
const SWEET_SPOT_FACTOR: f64 = 1.5;

struct Records<'a>(&'a [TrialRecord]);

impl<'a> Records<'a> {
    fn cell(&self, instance: &str, schedule: &str, cost: f64, delta: f64) -> Vec<&'a TrialRecord> {
        self.0
            .iter()
            .filter(|r| {
                r.instance == instance
                    && r.schedule.to_string() == schedule
                    && r.cost == cost
                    && r.delta == delta
            })
            .collect()
    }

    /// Records of a schedule at `delta`, regardless of cost.
    fn any_cost(&self, instance: &str, schedule: &str, delta: f64) -> Vec<&'a TrialRecord> {
        self.0
            .iter()
            .filter(|r| r.instance == instance && r.schedule.to_string() == schedule && r.delta == delta)
            .collect()
    }
}

fn mean_of(records: &[&TrialRecord], f: impl Fn(&TrialRecord) -> f64) -> f64 {
    let mut values: Vec<f64> = records.iter().map(|r| f(r)).collect();
    mean_std(&mut values).0
}

fn report_for<'a>(reports: &'a [BoundReport], instance: &str, delta: f64) -> Option<&'a BoundReport> {
    reports.iter().find(|r| r.instance == instance && r.delta == delta)
}

fn result(id: u32, name: &str, status: Status, detail: String) -> CriterionResult {
    CriterionResult { id, name: name.to_string(), status, detail }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn missing(id: u32, name: &str, what: &str) -> CriterionResult {
    result(id, name, Status::NotEvaluated, format!("missing {what}"))
}

/// Evaluates every record-derived acceptance predicate.
pub fn check_acceptance(records: &[TrialRecord], reports: &[BoundReport]) -> AcceptanceReport {
    let recs = Records(records);
    let mut criteria = vec![
        pac_gaussian(&recs),
        every_step_budget(&recs, reports),
        doubling_bounds(&recs, reports),
        cost_ratio(&recs),
        sparse_beats_periodic(&recs),
        sweet_spot(&recs, reports),
    ];
    for (id, name) in [
        (7, "reference equivalence"),
        (8, "bound internals"),
        (10, "ingest round trip"),
    ] {
        criteria.push(result(id, name, Status::NotEvaluated, "not derivable from trial records".into()));
    }
    criteria.push(bernoulli(&recs));
    criteria.sort_by_key(|c| c.id);

    let status = if criteria.iter().any(|c| c.status == Status::Fail) {
        Status::Fail
    } else if criteria.iter().any(|c| c.status == Status::Pass) {
        Status::Pass
    } else {
        Status::NotEvaluated
    };
    AcceptanceReport { status, criteria }
}

fn pac_gaussian(recs: &Records) -> CriterionResult {
    let name = "delta-PAC on the Gaussian builtin";
    let cell = recs.cell(BUILTIN_GAUSSIAN, "exp:2", 10.0, 0.1);
    if cell.is_empty() {
        return missing(1, name, "eq17 exp:2 C=10 delta=0.1 cell");
    }
    let errors = cell.iter().filter(|r| !r.correct).count();
    result(
        1,
        name,
        verdict(errors <= PAC_ERROR_LIMIT),
        format!("{errors} errors in {} trials (limit {PAC_ERROR_LIMIT})", cell.len()),
    )
}

fn every_step_budget(recs: &Records, reports: &[BoundReport]) -> CriterionResult {
    let name = "every-step pulls within T";
    let cell = recs.any_cost(BUILTIN_GAUSSIAN, "every", 0.01);
    let Some(report) = report_for(reports, BUILTIN_GAUSSIAN, 0.01) else {
        return missing(2, name, "eq17 bound report at delta=0.01");
    };
    if cell.is_empty() {
        return missing(2, name, "eq17 every delta=0.01 cell");
    }
    let on_e: Vec<_> = cell.iter().filter(|r| r.event_e).collect();
    let violations = on_e.iter().filter(|r| r.total_pulls as f64 > report.t_total).count();
    let worst = on_e.iter().map(|r| r.total_pulls).max().unwrap_or(0);
    result(
        2,
        name,
        verdict(violations == 0),
        format!(
            "{violations} violations over {} band trials; max pulls {worst} vs T = {:.1}",
            on_e.len(),
            report.t_total
        ),
    )
}

fn doubling_bounds(recs: &Records, reports: &[BoundReport]) -> CriterionResult {
    let name = "doubling-schedule pull, comm and total bounds";
    let Some(report) = report_for(reports, BUILTIN_GAUSSIAN, 0.01) else {
        return missing(3, name, "eq17 bound report at delta=0.01");
    };
    let mut details = Vec::new();
    let mut violations = 0;
    for cost in [0.0, 10.0, 100.0] {
        let cell = recs.cell(BUILTIN_GAUSSIAN, "exp:2", cost, 0.01);
        if cell.is_empty() {
            return missing(3, name, &format!("eq17 exp:2 C={cost} delta=0.01 cell"));
        }
        let comm_bound = cost * report.doubling_comm_scalar_bound;
        let mut v = 0;
        let mut band = 0;
        for r in cell.iter().filter(|r| r.event_e) {
            band += 1;
            if r.total_pulls as f64 > report.doubling_pull_bound
                || r.comm_cost > comm_bound
                || r.total_cost > report.doubling_total_bound
            {
                v += 1;
            }
        }
        violations += v;
        details.push(format!("C={cost}: {v}/{band}"));
    }
    result(3, name, verdict(violations == 0), format!("violations {}", details.join(", ")))
}

fn cost_ratio(recs: &Records) -> CriterionResult {
    let name = "doubling total cost within 3x every-step pulls";
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for delta in DEFAULT_DELTAS {
        let base = recs.any_cost(BUILTIN_GAUSSIAN, "every", delta);
        if base.is_empty() {
            return missing(4, name, &format!("eq17 every delta={delta} cell"));
        }
        let pulls = mean_of(&base, |r| r.total_pulls as f64);
        for cost in [0.0, 10.0, 100.0] {
            let cell = recs.cell(BUILTIN_GAUSSIAN, "exp:2", cost, delta);
            if cell.is_empty() {
                return missing(4, name, &format!("eq17 exp:2 C={cost} delta={delta} cell"));
            }
            let ratio = mean_of(&cell, |r| r.total_cost) / pulls;
            if ratio > worst {
                worst = ratio;
                worst_at = format!("C={cost} delta={delta}");
            }
        }
    }
    result(
        4,
        name,
        verdict(worst <= THREE_TIMES),
        format!("largest ratio {worst:.3} at {worst_at}"),
    )
}

fn comm_comparison(recs: &Records, instance: &str, cost: f64, delta: f64) -> Result<(f64, Vec<(u64, f64)>), String> {
    let sparse = recs.cell(instance, "exp:2", cost, delta);
    if sparse.is_empty() {
        return Err(format!("{instance} exp:2 C={cost} delta={delta} cell"));
    }
    let mut periodic = Vec::new();
    for h in [1u64, 5, 10] {
        let cell = recs.cell(instance, &format!("periodic:{h}"), cost, delta);
        if cell.is_empty() {
            return Err(format!("{instance} periodic:{h} C={cost} delta={delta} cell"));
        }
        periodic.push((h, mean_of(&cell, |r| r.comm_cost)));
    }
    Ok((mean_of(&sparse, |r| r.comm_cost), periodic))
}

fn sparse_beats_periodic(recs: &Records) -> CriterionResult {
    let name = "doubling comm cost below periodic";
    match comm_comparison(recs, BUILTIN_GAUSSIAN, 10.0, 0.01) {
        Err(what) => missing(5, name, &what),
        Ok((sparse, periodic)) => {
            let below = periodic.iter().all(|&(_, p)| sparse < p);
            let margin = periodic[0].1 / sparse;
            let listing: Vec<String> = periodic.iter().map(|(h, p)| format!("H={h}: {p:.1}")).collect();
            result(
                5,
                name,
                verdict(below && margin >= PERIODIC_H1_MARGIN),
                format!("doubling {sparse:.1}; {}; H=1 margin {margin:.1}x", listing.join(", ")),
            )
        }
    }
}

fn sweet_spot(recs: &Records, reports: &[BoundReport]) -> CriterionResult {
    let name = "periodic sweet spot";
    let (cost, delta) = (10.0, 0.01);
    let Some(report) = report_for(reports, BUILTIN_GAUSSIAN, delta) else {
        return missing(6, name, "eq17 bound report at delta=0.01");
    };
    let mut totals = Vec::new();
    for p in 0..=5u32 {
        let h = 10u64.pow(p);
        let cell = recs.cell(BUILTIN_GAUSSIAN, &format!("periodic:{h}"), cost, delta);
        if cell.is_empty() {
            return missing(6, name, &format!("eq17 periodic:{h} C=10 delta=0.01 cell"));
        }
        totals.push((h, mean_of(&cell, |r| r.total_cost)));
    }
    let sparse = recs.cell(BUILTIN_GAUSSIAN, "exp:2", cost, delta);
    if sparse.is_empty() {
        return missing(6, name, "eq17 exp:2 C=10 delta=0.01 cell");
    }
    let sparse_total = mean_of(&sparse, |r| r.total_cost);
    let (arg, &(best_h, best)) = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("six periodic cells");
    let interior = arg > 0 && arg + 1 < totals.len();
    let h_star = (cost * report.t_total / (report.num_clients * report.num_arms) as f64).sqrt();
    let decade = ((best_h as f64).log10() - h_star.log10()).abs() <= 1.0;
    let ratio = sparse_total / best;
    result(
        6,
        name,
        verdict(interior && decade && ratio <= SWEET_SPOT_FACTOR),
        format!(
            "periodic minimum {best:.0} at H={best_h} (interior: {interior}, H*={h_star:.1}, within a decade: {decade}); doubling {sparse_total:.0}, ratio {ratio:.3} (limit {SWEET_SPOT_FACTOR})"
        ),
    )
}

fn bernoulli(recs: &Records) -> CriterionResult {
    let name = "Bernoulli builtin";
    let cost = if recs.cell(BUILTIN_BERNOULLI, "exp:2", 10.0, 0.1).is_empty() {
        match recs.any_cost(BUILTIN_BERNOULLI, "exp:2", 0.1).first() {
            Some(r) => r.cost,
            None => return missing(9, name, "bernoulli-eq36 exp:2 delta=0.1 cell"),
        }
    } else {
        10.0
    };
    let cell = recs.cell(BUILTIN_BERNOULLI, "exp:2", cost, 0.1);
    let errors = cell.iter().filter(|r| !r.correct).count();
    match comm_comparison(recs, BUILTIN_BERNOULLI, cost, 0.1) {
        Err(what) => missing(9, name, &what),
        Ok((sparse, periodic)) => {
            let below = periodic.iter().all(|&(_, p)| sparse < p);
            let listing: Vec<String> = periodic.iter().map(|(h, p)| format!("H={h}: {p:.1}")).collect();
            result(
                9,
                name,
                verdict(errors <= PAC_ERROR_LIMIT && below),
                format!(
                    "{errors} errors in {} trials; comm doubling {sparse:.1} vs {}",
                    cell.len(),
                    listing.join(", ")
                ),
            )
        }
    }
}
