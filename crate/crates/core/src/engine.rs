//! The federated successive-elimination state machine.
//!
//! Each step every client pulls every arm in `S_m = S_l,m ∪ S_g` once (when
//! `|S_m| > 1`), eliminates local arms whose empirical mean trails the local
//! leader by at least `2 alpha_l(n)`, and declares its local best arm once a
//! single contender remains. At communication steps of the schedule, clients
//! upload the means of the arms in `S_g`; the server averages them and
//! eliminates with threshold `2 alpha_g(n)`. The run ends when every local set
//! and the server set are empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{BestArmProfile, ProblemInstance};
use crate::schedule::Schedule;
use crate::stream::{InstanceSource, RewardSource};
use crate::trace::{EventKind, RadiusParams, StepRadii, Trace};

pub use crate::trace::{global_radius, local_radius, TraceLevel};

pub const DEFAULT_MAX_STEPS: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub delta: f64,
    pub uplink_cost: f64,
    pub sigma: f64,
    pub schedule: Schedule,
    pub max_steps: u64,
    pub seed: u64,
    pub trial: u64,
    pub trace_level: TraceLevel,
}

impl RunConfig {
    pub fn new(delta: f64, schedule: Schedule) -> Self {
        RunConfig {
            delta,
            uplink_cost: 0.0,
            sigma: 1.0,
            schedule,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            trial: 0,
            trace_level: TraceLevel::None,
        }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.uplink_cost = cost;
        self
    }

    pub fn with_seed(mut self, seed: u64, trial: u64) -> Self {
        self.seed = seed;
        self.trial = trial;
        self
    }

    pub fn with_trace(mut self, level: TraceLevel) -> Self {
        self.trace_level = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.uplink_cost >= 0.0 && self.uplink_cost.is_finite()) {
            return Err(Error::param(format!("uplink cost must be >= 0, got {}", self.uplink_cost)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.max_steps == 0 {
            return Err(Error::param("max_steps must be >= 1"));
        }
        Ok(())
    }
}

/// One server aggregation: the step and `|S_g|` at send time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRound {
    pub step: u64,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Declared local best arm per client; `None` only when the step cap hit.
    pub local_declarations: Vec<Option<usize>>,
    pub global_declaration: Option<usize>,
    pub stop_step: u64,
    pub total_pulls: u64,
    /// `pull_counts[k][m]`.
    pub pull_counts: Vec<Vec<u64>>,
    /// Scalars uploaded over the run: `sum over rounds of M |S_g|`.
    pub comm_scalars: u64,
    pub comm_cost: f64,
    pub comm_round_count: u64,
    pub comm_rounds: Vec<CommRound>,
    pub total_cost: f64,
    pub event_e_holds: bool,
    pub hit_max_steps: bool,
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total_pulls: u64,
    pub comm_cost: f64,
    pub total_cost: f64,
}

impl RunResult {
    pub fn costs(&self) -> CostBreakdown {
        CostBreakdown {
            total_pulls: self.total_pulls,
            comm_cost: self.comm_cost,
            total_cost: self.total_cost,
        }
    }

    /// Whether every declaration is present and matches the ground truth.
    pub fn is_correct(&self, truth: &BestArmProfile) -> bool {
        self.global_declaration == Some(truth.global_best)
            && self
                .local_declarations
                .iter()
                .zip(&truth.local_best)
                .all(|(d, t)| *d == Some(*t))
    }

    /// Declarations as `"1 2 3|4"` (1-based, `-` for missing).
    pub fn declarations_string(&self) -> String {
        let fmt = |d: &Option<usize>| d.map(|k| (k + 1).to_string()).unwrap_or_else(|| "-".into());
        let locals: Vec<String> = self.local_declarations.iter().map(fmt).collect();
        format!("{}|{}", locals.join(" "), fmt(&self.global_declaration))
    }
}

/// A single run of the elimination protocol over a reward source.
pub struct Engine<'a, S> {
    instance: &'a ProblemInstance,
    config: RunConfig,
    source: S,
    radius: RadiusParams,
    num_clients: usize,
    step: u64,
    local_active: Vec<Vec<usize>>,
    global_active: Vec<usize>,
    sums: Vec<f64>,
    counts: Vec<u64>,
    local_declarations: Vec<Option<usize>>,
    global_declaration: Option<usize>,
    total_pulls: u64,
    comm_scalars: u64,
    comm_rounds: Vec<CommRound>,
    band_holds: bool,
    global_means: Vec<f64>,
    local_radius_by_count: Vec<f64>,
    trace: Option<Trace>,
    terminated: bool,
    selected: Vec<usize>,
}

impl<'a, S: RewardSource> Engine<'a, S> {
    pub fn new(instance: &'a ProblemInstance, config: RunConfig, source: S) -> Self {
        let (k_arms, m_clients) = (instance.num_arms(), instance.num_clients());
        let radius = RadiusParams {
            num_arms: k_arms,
            num_clients: m_clients,
            delta: config.delta,
            sigma: config.sigma,
        };
        let trace = match config.trace_level {
            TraceLevel::None => None,
            level => Some(Trace::new(level, radius)),
        };
        Engine {
            instance,
            source,
            radius,
            num_clients: m_clients,
            step: 0,
            local_active: vec![(0..k_arms).collect(); m_clients],
            global_active: (0..k_arms).collect(),
            sums: vec![0.0; k_arms * m_clients],
            counts: vec![0; k_arms * m_clients],
            local_declarations: vec![None; m_clients],
            global_declaration: None,
            total_pulls: 0,
            comm_scalars: 0,
            comm_rounds: Vec::new(),
            band_holds: true,
            global_means: instance.global_means(),
            local_radius_by_count: vec![f64::NAN],
            trace,
            terminated: false,
            selected: Vec::with_capacity(k_arms),
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// `S_l,m`, ascending.
    pub fn local_active(&self, client: usize) -> &[usize] {
        &self.local_active[client]
    }

    /// `S_g`, ascending.
    pub fn global_active(&self) -> &[usize] {
        &self.global_active
    }

    pub fn local_declarations(&self) -> &[Option<usize>] {
        &self.local_declarations
    }

    pub fn global_declaration(&self) -> Option<usize> {
        self.global_declaration
    }

    pub fn pull_count(&self, arm: usize, client: usize) -> u64 {
        self.counts[arm * self.num_clients + client]
    }

    pub fn empirical_mean(&self, arm: usize, client: usize) -> f64 {
        let idx = arm * self.num_clients + client;
        self.sums[idx] / self.counts[idx] as f64
    }

    pub fn total_pulls(&self) -> u64 {
        self.total_pulls
    }

    pub fn comm_cost(&self) -> f64 {
        self.config.uplink_cost * self.comm_scalars as f64
    }

    fn cached_local_radius(&mut self, count: u64) -> f64 {
        let idx = count as usize;
        while self.local_radius_by_count.len() <= idx {
            let s = self.local_radius_by_count.len() as u64;
            self.local_radius_by_count.push(self.radius.local(s));
        }
        self.local_radius_by_count[idx]
    }

    fn record(&mut self, kind: EventKind, client: Option<usize>, arm: Option<usize>, value: f64) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(self.step, kind, client, arm, value);
        }
    }

    fn pull(&mut self, arm: usize, client: usize) {
        let reward = self.source.draw(arm, client);
        let idx = arm * self.num_clients + client;
        self.sums[idx] += reward;
        self.counts[idx] += 1;
        self.total_pulls += 1;
        let count = self.counts[idx];
        let deviation = (self.sums[idx] / count as f64 - self.instance.mean(arm, client)).abs();
        if deviation > self.cached_local_radius(count) {
            self.band_holds = false;
        }
        self.record(EventKind::Pull, Some(client), Some(arm), reward);
    }

    /// Runs one iteration of the protocol. Returns whether the run has ended.
    pub fn step(&mut self) -> bool {
        if self.terminated {
            return true;
        }
        self.step += 1;
        let n = self.step;
        let local_r = self.cached_local_radius(n);
        let global_r = self.radius.global(n);
        if let Some(trace) = self.trace.as_mut() {
            if trace.level == TraceLevel::Full {
                trace.radii.push(StepRadii { step: n, local: local_r, global: global_r });
            }
        }

        for m in 0..self.num_clients {
            self.selected.clear();
            merge_sorted(&self.local_active[m], &self.global_active, &mut self.selected);
            if self.selected.len() > 1 {
                for i in 0..self.selected.len() {
                    let k = self.selected[i];
                    self.pull(k, m);
                }
            }

            if self.local_active[m].len() > 1 {
                let means: Vec<(usize, f64)> = self.local_active[m]
                    .iter()
                    .map(|&k| (k, self.empirical_mean(k, m)))
                    .collect();
                let leader = leader_mean(&means);
                let threshold = 2.0 * local_r;
                let mut keep = Vec::with_capacity(means.len());
                for &(k, mu) in &means {
                    if leader - mu >= threshold {
                        self.record(EventKind::LocalElim, Some(m), Some(k), mu);
                    } else {
                        keep.push(k);
                    }
                }
                self.local_active[m] = keep;
            }
            if self.local_active[m].len() == 1 {
                let k = self.local_active[m][0];
                self.local_declarations[m] = Some(k);
                let mu = self.empirical_mean(k, m);
                self.record(EventKind::DeclareLocal, Some(m), Some(k), mu);
                self.local_active[m].clear();
            }
        }

        if self.global_active.len() > 1 && self.config.schedule.is_comm_step(n) {
            let active = self.global_active.len();
            self.comm_scalars += (self.num_clients * active) as u64;
            self.comm_rounds.push(CommRound { step: n, active });
            self.record(EventKind::CommRound, None, None, active as f64);
            let m_f = self.num_clients as f64;
            let means: Vec<(usize, f64)> = self
                .global_active
                .iter()
                .map(|&k| {
                    debug_assert!((0..self.num_clients).all(|m| self.pull_count(k, m) == n));
                    let total: f64 = (0..self.num_clients).map(|m| self.empirical_mean(k, m)).sum();
                    (k, total / m_f)
                })
                .collect();
            for &(k, mu) in &means {
                if (mu - self.global_means[k]).abs() > global_r {
                    self.band_holds = false;
                }
            }
            let leader = leader_mean(&means);
            let threshold = 2.0 * global_r;
            let mut keep = Vec::with_capacity(means.len());
            for &(k, mu) in &means {
                if leader - mu >= threshold {
                    self.record(EventKind::GlobalElim, None, Some(k), mu);
                } else {
                    keep.push(k);
                }
            }
            self.global_active = keep;
        }
        if self.global_active.len() == 1 {
            let k = self.global_active[0];
            self.global_declaration = Some(k);
            self.record(EventKind::DeclareGlobal, None, Some(k), f64::NAN);
            self.global_active.clear();
        }

        self.terminated = self.global_active.is_empty() && self.local_active.iter().all(Vec::is_empty);
        self.terminated
    }

    /// Steps until termination or the step cap, then reports.
    pub fn run_to_end(mut self) -> RunResult {
        while !self.terminated && self.step < self.config.max_steps {
            self.step();
        }
        self.finish()
    }

    pub fn finish(self) -> RunResult {
        let k_arms = self.instance.num_arms();
        let pull_counts = (0..k_arms)
            .map(|k| self.counts[k * self.num_clients..(k + 1) * self.num_clients].to_vec())
            .collect();
        let comm_cost = self.config.uplink_cost * self.comm_scalars as f64;
        RunResult {
            local_declarations: self.local_declarations,
            global_declaration: self.global_declaration,
            stop_step: self.step,
            total_pulls: self.total_pulls,
            pull_counts,
            comm_scalars: self.comm_scalars,
            comm_cost,
            comm_round_count: self.comm_rounds.len() as u64,
            comm_rounds: self.comm_rounds,
            total_cost: self.total_pulls as f64 + comm_cost,
            event_e_holds: self.band_holds,
            hit_max_steps: !self.terminated,
            trace: self.trace,
        }
    }
}

/// Largest mean; ties resolve to the first (lowest-index) arm.
fn leader_mean(means: &[(usize, f64)]) -> f64 {
    let mut best = means[0].1;
    for &(_, mu) in &means[1..] {
        if mu > best {
            best = mu;
        }
    }
    best
}

fn merge_sorted(a: &[usize], b: &[usize], out: &mut Vec<usize>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Runs the protocol on `instance` with rewards keyed by `(config.seed, config.trial)`.
pub fn run(instance: &ProblemInstance, config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    instance.validate().into_result()?;
    let source = InstanceSource::new(instance, config.seed, config.trial);
    Ok(Engine::new(instance, config.clone(), source).run_to_end())
}

/// Runs the protocol over an arbitrary reward source.
pub fn run_with_source<S: RewardSource>(
    instance: &ProblemInstance,
    config: &RunConfig,
    source: S,
) -> Result<RunResult> {
    config.validate()?;
    Ok(Engine::new(instance, config.clone(), source).run_to_end())
}
