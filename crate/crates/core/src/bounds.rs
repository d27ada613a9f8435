//! Closed-form sample-complexity and cost bounds.
//!
//! Every function here is a pure computation over gaps and confidence
//! parameters. `T_km` and `T_k` are the per-pair and per-arm pull budgets,
//! `T` their max-combined double sum. The report also carries the lower bound,
//! the cost-optimal period `H*` and the cost-optimal exponential base `lambda*`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::schedule::Schedule;
use crate::trace::{global_radius, local_radius};

/// Leading constant of the pull budgets.
pub const BUDGET_CONSTANT: f64 = 102.0;

/// Gaps below this are accepted but numerically fragile.
pub const MIN_WELL_CONDITIONED_GAP: f64 = 1e-6;

/// Largest sample size `critical_sample_size` will search.
pub const MAX_CRITICAL_SAMPLES: u64 = 1 << 62;

fn check_gap_delta(gap: f64, delta: f64) -> Result<()> {
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(Error::param(format!("gap must be positive and finite, got {gap}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0,1), got {delta}")));
    }
    if gap < MIN_WELL_CONDITIONED_GAP {
        log::warn!("gap {gap} is below {MIN_WELL_CONDITIONED_GAP}; bounds may be ill-conditioned");
    }
    Ok(())
}

fn check_sizes(num_arms: usize, num_clients: usize) -> Result<()> {
    if num_arms == 0 || num_clients == 0 {
        return Err(Error::param("K and M must be positive"));
    }
    Ok(())
}

/// Per-pair budget `102 ln(64 sqrt(8KM/delta) / gap^2) / gap^2 + 1`.
pub fn t_km(gap: f64, num_arms: usize, num_clients: usize, delta: f64) -> Result<f64> {
    check_gap_delta(gap, delta)?;
    check_sizes(num_arms, num_clients)?;
    let km = (num_arms * num_clients) as f64;
    let g2 = gap * gap;
    Ok(BUDGET_CONSTANT * (64.0 * (8.0 * km / delta).sqrt() / g2).ln() / g2 + 1.0)
}

/// Per-arm budget `102 ln(64 sqrt(8K/delta) / (M gap^2)) / (M gap^2) + 1`.
pub fn t_k(gap: f64, num_arms: usize, num_clients: usize, delta: f64) -> Result<f64> {
    check_gap_delta(gap, delta)?;
    check_sizes(num_arms, num_clients)?;
    let scaled = num_clients as f64 * gap * gap;
    Ok(BUDGET_CONSTANT * (64.0 * (8.0 * num_arms as f64 / delta).sqrt() / scaled).ln() / scaled + 1.0)
}

/// Budget tables for one instance: `t_km[k][m]`, `t_k[k]`, and `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub t_km: Vec<Vec<f64>>,
    pub t_k: Vec<f64>,
    pub t_total: f64,
}

pub fn budgets(instance: &ProblemInstance, delta: f64) -> Result<Budgets> {
    let gaps = instance.gaps()?;
    let (k_arms, m_clients) = (instance.num_arms(), instance.num_clients());
    let t_km_table = gaps
        .local
        .iter()
        .map(|row| row.iter().map(|&g| t_km(g, k_arms, m_clients, delta)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let t_k_list = gaps
        .global
        .iter()
        .map(|&g| t_k(g, k_arms, m_clients, delta))
        .collect::<Result<Vec<_>>>()?;
    let t_total = t_km_table
        .iter()
        .zip(&t_k_list)
        .map(|(row, &tk)| row.iter().map(|&v| v.max(tk)).sum::<f64>())
        .sum();
    Ok(Budgets { t_km: t_km_table, t_k: t_k_list, t_total })
}

/// `T = sum_k sum_m max{T_km, T_k}`.
pub fn t_total(instance: &ProblemInstance, delta: f64) -> Result<f64> {
    Ok(budgets(instance, delta)?.t_total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingBounds {
    /// `sum_k sum_m max{T_km, 2 T_k}`.
    pub pull_bound: f64,
    /// `M sum_k ceil(log2 T_k)`, the uploaded-scalar budget.
    pub comm_scalar_bound: f64,
    /// `C` times `comm_scalar_bound`.
    pub comm_bound: f64,
    /// `3 T`.
    pub total_bound: f64,
    /// `C ln T_k <= T_k` for every arm.
    pub precondition_ok: bool,
}

/// Pull, communication and total-cost bounds for doubling communication.
pub fn doubling_bounds(instance: &ProblemInstance, delta: f64, cost: f64) -> Result<DoublingBounds> {
    check_cost(cost)?;
    Ok(doubling_from_budgets(&budgets(instance, delta)?, instance.num_clients(), cost))
}

fn doubling_from_budgets(b: &Budgets, num_clients: usize, cost: f64) -> DoublingBounds {
    let pull_bound = b
        .t_km
        .iter()
        .zip(&b.t_k)
        .map(|(row, &tk)| row.iter().map(|&v| v.max(2.0 * tk)).sum::<f64>())
        .sum();
    let rounds: f64 = b.t_k.iter().map(|&tk| tk.log2().ceil()).sum();
    let comm_scalar_bound = num_clients as f64 * rounds;
    DoublingBounds {
        pull_bound,
        comm_scalar_bound,
        comm_bound: cost * comm_scalar_bound,
        total_bound: 3.0 * b.t_total,
        precondition_ok: b.t_k.iter().all(|&tk| cost * tk.ln() <= tk),
    }
}

fn check_cost(cost: f64) -> Result<()> {
    if !(cost >= 0.0 && cost.is_finite()) {
        return Err(Error::param(format!("cost must be >= 0, got {cost}")));
    }
    Ok(())
}

/// Which constant the lower bound carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowerBoundForm {
    /// `2 ln(1/(2.4 delta))` per term.
    #[default]
    Doubled,
    /// `ln(1/(2.4 delta))` per term.
    Plain,
}

/// `sum_k sum_m max{c L / gap_km^2, c L / (M^2 gap_k^2)}` with `L = ln(1/(2.4 delta))`
/// and `c = 2` (doubled form) or `1` (plain form).
pub fn lower_bound(instance: &ProblemInstance, delta: f64, form: LowerBoundForm) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0 / 2.4) {
        return Err(Error::param(format!(
            "lower bound needs delta in (0, 1/2.4), got {delta}"
        )));
    }
    let gaps = instance.gaps()?;
    let factor = match form {
        LowerBoundForm::Doubled => 2.0,
        LowerBoundForm::Plain => 1.0,
    };
    let l = factor * (1.0 / (2.4 * delta)).ln();
    let m2 = (instance.num_clients() as f64).powi(2);
    Ok(gaps
        .local
        .iter()
        .zip(&gaps.global)
        .map(|(row, &gk)| {
            let global_term = l / (m2 * gk * gk);
            row.iter().map(|&g| (l / (g * g)).max(global_term)).sum::<f64>()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Local,
    Global,
}

/// Smallest `n` with `alpha(n') <= gap/4` for all `n' >= n` (unit variance).
///
/// Both radii are strictly decreasing for `n >= 1` because `8KM/delta` and
/// `8K/delta` exceed `e^2` whenever `K >= 1` and `delta < 1`, so the first
/// crossing is the answer.
pub fn critical_sample_size(
    gap: f64,
    num_arms: usize,
    num_clients: usize,
    delta: f64,
    scope: Scope,
) -> Result<u64> {
    check_gap_delta(gap, delta)?;
    check_sizes(num_arms, num_clients)?;
    let target = gap / 4.0;
    let radius = |n: u64| match scope {
        Scope::Local => local_radius(n, num_arms, num_clients, delta, 1.0),
        Scope::Global => global_radius(n, num_arms, num_clients, delta, 1.0),
    };
    if radius(1) <= target {
        return Ok(1);
    }
    let mut hi = 2u64;
    while radius(hi) > target {
        if hi >= MAX_CRITICAL_SAMPLES {
            return Err(Error::param(format!("critical sample size exceeds 2^62 for gap {gap}")));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // radius(lo) > target >= radius(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if radius(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Real-valued root of the crossing condition via the lower Lambert branch:
/// `n = -W_{-1}(-a e^{-b}) / a`. Rounding it up reproduces
/// [`critical_sample_size`] away from the `n = 1` boundary.
pub fn critical_sample_size_lambert(
    gap: f64,
    num_arms: usize,
    num_clients: usize,
    delta: f64,
    scope: Scope,
) -> Result<f64> {
    check_gap_delta(gap, delta)?;
    check_sizes(num_arms, num_clients)?;
    let (a, c) = match scope {
        Scope::Local => (gap * gap / 64.0, 8.0 * (num_arms * num_clients) as f64 / delta),
        Scope::Global => (
            num_clients as f64 * gap * gap / 64.0,
            8.0 * num_arms as f64 / delta,
        ),
    };
    let b = c.ln() / 2.0;
    let y = -a * (-b).exp();
    let w = lambert_w_minus1(y)
        .ok_or_else(|| Error::param(format!("no lower-branch solution for gap {gap}")))?;
    Ok(-w / a)
}

/// Lower branch of the Lambert W function on `[-1/e, 0)`, by bisection.
pub fn lambert_w_minus1(y: f64) -> Option<f64> {
    let floor = -(-1.0f64).exp();
    if !(y < 0.0 && y >= floor) {
        return None;
    }
    let f = |w: f64| w * w.exp() - y;
    // f is decreasing on (-inf, -1] with f(-1) <= 0 and f -> -y > 0 at -inf.
    let mut hi = -1.0f64;
    let mut lo = -2.0f64;
    while f(lo) < 0.0 {
        lo *= 2.0;
        if lo < -1e6 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `H* = sqrt(C T / (M K))`; `C = 0` returns 1 (communicate every step).
pub fn optimal_period(cost: f64, t_total: f64, num_clients: usize, num_arms: usize) -> Result<f64> {
    check_cost(cost)?;
    check_sizes(num_arms, num_clients)?;
    if t_total.is_nan() || t_total <= 0.0 {
        return Err(Error::param(format!("T must be positive, got {t_total}")));
    }
    if cost == 0.0 {
        return Ok(1.0);
    }
    Ok((cost * t_total / (num_clients * num_arms) as f64).sqrt())
}

/// The right-hand side `(C M / T) sum_k ln T_k` of the base equation.
pub fn optimal_base_rhs(cost: f64, num_clients: usize, t_total: f64, t_k: &[f64]) -> Result<f64> {
    check_cost(cost)?;
    if t_total.is_nan() || t_total <= 0.0 {
        return Err(Error::param(format!("T must be positive, got {t_total}")));
    }
    if let Some(bad) = t_k.iter().find(|&&v| v.is_nan() || v <= 1.0) {
        return Err(Error::param(format!("every T_k must exceed 1, got {bad}")));
    }
    Ok(cost * num_clients as f64 / t_total * t_k.iter().map(|v| v.ln()).sum::<f64>())
}

/// Unique `lambda > 1` with `lambda (ln lambda)^2 = rhs`; `rhs = 0` returns 1.
pub fn solve_base_equation(rhs: f64) -> Result<f64> {
    if !(rhs >= 0.0 && rhs.is_finite()) {
        return Err(Error::param(format!("right-hand side must be >= 0, got {rhs}")));
    }
    if rhs == 0.0 {
        return Ok(1.0);
    }
    let f = |l: f64| l * l.ln().powi(2) - rhs;
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Return whichever endpoint has the smaller residual.
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Cost-optimal exponential base `lambda*`; `C = 0` returns 1 (the boundary).
pub fn optimal_base(cost: f64, num_clients: usize, t_total: f64, t_k: &[f64]) -> Result<f64> {
    solve_base_equation(optimal_base_rhs(cost, num_clients, t_total, t_k)?)
}

/// Worst-case bounds for one communication scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeBound {
    pub schedule: String,
    pub pull_bound: f64,
    pub comm_bound: f64,
    pub total_bound: f64,
}

/// Bounds for periodic (period `H`), exponential (base `lambda`) and
/// super-exponential communication.
///
/// The super-exponential row is computed exactly: each arm may stay in play
/// until the first schedule step at or after `T_k`, and is uploaded at every
/// schedule step up to that one.
pub fn scheme_bound_table(
    instance: &ProblemInstance,
    delta: f64,
    cost: f64,
    period: f64,
    base: f64,
) -> Result<Vec<SchemeBound>> {
    check_cost(cost)?;
    let b = budgets(instance, delta)?;
    Ok(scheme_rows(&b, instance.num_clients(), cost, period, base))
}

fn scheme_rows(b: &Budgets, num_clients: usize, cost: f64, period: f64, base: f64) -> Vec<SchemeBound> {
    let m = num_clients as f64;
    let k = b.t_k.len() as f64;
    let t = b.t_total;
    let mut rows = Vec::new();

    let periodic_pulls = t + period * m * k;
    let periodic_comm = cost * t / period + cost * m * k;
    rows.push(SchemeBound {
        schedule: format!("periodic:{}", format_compact(period)),
        pull_bound: periodic_pulls,
        comm_bound: periodic_comm,
        total_bound: periodic_pulls + periodic_comm,
    });

    let exp_pulls = base * t;
    let exp_comm = cost * m * b.t_k.iter().map(|v| v.ln() / base.ln()).sum::<f64>() + cost * m * k;
    rows.push(SchemeBound {
        schedule: format!("exp:{}", format_compact(base)),
        pull_bound: exp_pulls,
        comm_bound: exp_comm,
        total_bound: exp_pulls + exp_comm,
    });

    let schedule = Schedule::super_exponential();
    let reach: Vec<u64> = b
        .t_k
        .iter()
        .map(|&tk| schedule.next_comm_step((tk.ceil() as u64).saturating_sub(1)))
        .collect();
    let super_pulls: f64 = b
        .t_km
        .iter()
        .zip(&reach)
        .map(|(row, &r)| row.iter().map(|&v| v.max(r as f64)).sum::<f64>())
        .sum();
    let rounds: usize = reach.iter().map(|&r| schedule.enumerate(r).len()).sum();
    let super_comm = cost * m * rounds as f64;
    rows.push(SchemeBound {
        schedule: schedule.to_string(),
        pull_bound: super_pulls,
        comm_bound: super_comm,
        total_bound: super_pulls + super_comm,
    });
    rows
}

fn format_compact(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Everything the `bounds` command reports for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub instance: String,
    pub num_arms: usize,
    pub num_clients: usize,
    pub delta: f64,
    pub cost: f64,
    pub t_km: Vec<Vec<f64>>,
    pub t_k: Vec<f64>,
    pub t_total: f64,
    pub doubling_pull_bound: f64,
    pub doubling_comm_scalar_bound: f64,
    pub doubling_comm_bound: f64,
    pub doubling_total_bound: f64,
    pub precondition_ok: bool,
    /// `None` when `delta >= 1/2.4`.
    pub lower_bound: Option<f64>,
    pub lower_bound_plain: Option<f64>,
    pub h_star: f64,
    pub lambda_star: f64,
    pub schemes: Vec<SchemeBound>,
}

impl BoundReport {
    /// Builds the full report. The scheme table uses `H*` (rounded, at least
    /// 1) and base 2 unless overridden.
    pub fn compute(
        label: &str,
        instance: &ProblemInstance,
        delta: f64,
        cost: f64,
        period: Option<f64>,
        base: Option<f64>,
    ) -> Result<Self> {
        check_cost(cost)?;
        let b = budgets(instance, delta)?;
        let (k_arms, m_clients) = (instance.num_arms(), instance.num_clients());
        let t4 = doubling_from_budgets(&b, m_clients, cost);
        let lower = |form| match lower_bound(instance, delta, form) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Parameter(_)) if delta >= 1.0 / 2.4 => Ok(None),
            Err(e) => Err(e),
        };
        let h_star = optimal_period(cost, b.t_total, m_clients, k_arms)?;
        let lambda_star = optimal_base(cost, m_clients, b.t_total, &b.t_k)?;
        let period = period.unwrap_or_else(|| h_star.round().max(1.0));
        let base = base.unwrap_or(2.0);
        let schemes = scheme_rows(&b, m_clients, cost, period, base);
        Ok(BoundReport {
            instance: label.to_string(),
            num_arms: k_arms,
            num_clients: m_clients,
            delta,
            cost,
            t_km: b.t_km,
            t_k: b.t_k,
            t_total: b.t_total,
            doubling_pull_bound: t4.pull_bound,
            doubling_comm_scalar_bound: t4.comm_scalar_bound,
            doubling_comm_bound: t4.comm_bound,
            doubling_total_bound: t4.total_bound,
            precondition_ok: t4.precondition_ok,
            lower_bound: lower(LowerBoundForm::Doubled)?,
            lower_bound_plain: lower(LowerBoundForm::Plain)?,
            h_star,
            lambda_star,
            schemes,
        })
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        writeln!(
            f,
            "instance {} (K={}, M={}), delta={}, C={}",
            self.instance, self.num_arms, self.num_clients, self.delta, self.cost
        )?;
        writeln!(f)?;
        write!(f, "{:>6}", "arm")?;
        for m in 0..self.num_clients {
            write!(f, " {:>14}", format!("T_k,{}", m + 1))?;
        }
        writeln!(f, " {:>14}", "T_k")?;
        for (k, row) in self.t_km.iter().enumerate() {
            write!(f, "{:>6}", k + 1)?;
            for v in row {
                write!(f, " {v:>14.2}")?;
            }
            writeln!(f, " {:>14.2}", self.t_k[k])?;
        }
        writeln!(f)?;
        let rows = [
            ("T", format!("{:.4}", self.t_total)),
            ("pull bound", format!("{:.4}", self.doubling_pull_bound)),
            ("comm bound", format!("{:.4}", self.doubling_comm_bound)),
            ("total bound", format!("{:.4}", self.doubling_total_bound)),
            ("precondition", self.precondition_ok.to_string()),
            ("lower bound", opt(self.lower_bound)),
            ("lower bound (plain)", opt(self.lower_bound_plain)),
            ("H*", format!("{:.4}", self.h_star)),
            ("lambda*", format!("{:.10}", self.lambda_star)),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<24} {value:>20}")?;
        }
        writeln!(f)?;
        writeln!(f, "{:<16} {:>16} {:>16} {:>16}", "schedule", "pulls", "comm", "total")?;
        for row in &self.schemes {
            writeln!(
                f,
                "{:<16} {:>16.2} {:>16.2} {:>16.2}",
                row.schedule, row.pull_bound, row.comm_bound, row.total_bound
            )?;
        }
        Ok(())
    }
}
