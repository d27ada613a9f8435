//! Run traces and the realized confidence-band event.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    /// No trace is kept; the run still reports whether the bands held.
    #[default]
    None,
    /// Eliminations, communication rounds, and declarations.
    Events,
    /// Everything in `Events`, plus every pull and the radii of each step.
    Full,
}

impl std::str::FromStr for TraceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TraceLevel::None),
            "events" => Ok(TraceLevel::Events),
            "full" => Ok(TraceLevel::Full),
            other => Err(Error::param(format!("unknown trace level '{other}'"))),
        }
    }
}

/// Parameters of the local and global confidence radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusParams {
    pub num_arms: usize,
    pub num_clients: usize,
    pub delta: f64,
    pub sigma: f64,
}

impl RadiusParams {
    pub fn local(&self, n: u64) -> f64 {
        local_radius(n, self.num_arms, self.num_clients, self.delta, self.sigma)
    }

    pub fn global(&self, n: u64) -> f64 {
        global_radius(n, self.num_arms, self.num_clients, self.delta, self.sigma)
    }
}

/// Local confidence radius `sigma * sqrt(2 ln(8 K M n^2 / delta) / n)`.
pub fn local_radius(n: u64, num_arms: usize, num_clients: usize, delta: f64, sigma: f64) -> f64 {
    let n = n as f64;
    let km = (num_arms * num_clients) as f64;
    sigma * (2.0 * (8.0 * km * n * n / delta).ln() / n).sqrt()
}

/// Global confidence radius `sigma * sqrt(2 ln(8 K n^2 / delta) / (M n))`.
pub fn global_radius(n: u64, num_arms: usize, num_clients: usize, delta: f64, sigma: f64) -> f64 {
    let n = n as f64;
    let k = num_arms as f64;
    let m = num_clients as f64;
    sigma * (2.0 * (8.0 * k * n * n / delta).ln() / (m * n)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pull,
    LocalElim,
    GlobalElim,
    CommRound,
    DeclareLocal,
    DeclareGlobal,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Pull => "pull",
            EventKind::LocalElim => "local_elim",
            EventKind::GlobalElim => "global_elim",
            EventKind::CommRound => "comm_round",
            EventKind::DeclareLocal => "declare_local",
            EventKind::DeclareGlobal => "declare_global",
        })
    }
}

/// One trace row. `value` is the reward for pulls, `|S_g|` for communication
/// rounds, and the eliminated or declared arm's empirical mean otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: EventKind,
    pub client: Option<usize>,
    pub arm: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRadii {
    pub step: u64,
    pub local: f64,
    pub global: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub level: TraceLevel,
    pub params: RadiusParams,
    pub events: Vec<TraceEvent>,
    pub radii: Vec<StepRadii>,
}

impl Trace {
    pub fn new(level: TraceLevel, params: RadiusParams) -> Self {
        Trace { level, params, events: Vec::new(), radii: Vec::new() }
    }

    pub(crate) fn push(&mut self, step: u64, kind: EventKind, client: Option<usize>, arm: Option<usize>, value: f64) {
        if kind == EventKind::Pull && self.level != TraceLevel::Full {
            return;
        }
        self.events.push(TraceEvent { step, kind, client, arm, value });
    }

    /// Writes `n,event_type,client,arm,value` rows (1-based indices, empty when
    /// not applicable).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "event_type", "client", "arm", "value"])?;
        for e in &self.events {
            let client = e.client.map(|c| (c + 1).to_string()).unwrap_or_default();
            let arm = e.arm.map(|a| (a + 1).to_string()).unwrap_or_default();
            w.write_record([
                e.step.to_string(),
                e.kind.to_string(),
                client,
                arm,
                format!("{}", e.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether every realized estimate stayed inside its confidence band.
///
/// Checks (a) for every (arm, client) and every prefix length `s` of its
/// samples, `|mean of first s - mu_{k,m}| <= alpha_l(s)`, and (b) at every
/// communication round `n`, `|mu_hat_k(n) - mu_k| <= alpha_g(n)` for each arm
/// then active at the server. Requires a [`TraceLevel::Full`] trace.
pub fn event_e_holds(trace: &Trace, instance: &ProblemInstance) -> Result<bool> {
    if trace.level != TraceLevel::Full {
        return Err(Error::Trace("band check needs a full trace with every pull".into()));
    }
    let (k_arms, m_clients) = (instance.num_arms(), instance.num_clients());
    let params = trace.params;
    let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); m_clients]; k_arms];
    for e in trace.events.iter().filter(|e| e.kind == EventKind::Pull) {
        let (Some(k), Some(m)) = (e.arm, e.client) else {
            return Err(Error::Trace(format!("pull at step {} lacks arm or client", e.step)));
        };
        samples[k][m].push(e.value);
    }
    let mut holds = true;
    for k in 0..k_arms {
        for m in 0..m_clients {
            let mut sum = 0.0;
            for (i, x) in samples[k][m].iter().enumerate() {
                sum += x;
                let s = i as u64 + 1;
                if (sum / s as f64 - instance.mean(k, m)).abs() > params.local(s) {
                    holds = false;
                }
            }
        }
    }
    let global_means = instance.global_means();
    let mut server_active: Vec<bool> = vec![true; k_arms];
    for e in &trace.events {
        match e.kind {
            EventKind::CommRound => {
                let n = e.step;
                for k in (0..k_arms).filter(|&k| server_active[k]) {
                    let mut total = 0.0;
                    for m in 0..m_clients {
                        let prefix = samples[k][m].get(..n as usize).ok_or_else(|| {
                            Error::Trace(format!(
                                "arm {} client {} has fewer than {n} samples at round {n}",
                                k + 1,
                                m + 1
                            ))
                        })?;
                        total += prefix.iter().sum::<f64>() / n as f64;
                    }
                    if (total / m_clients as f64 - global_means[k]).abs() > params.global(n) {
                        holds = false;
                    }
                }
            }
            EventKind::GlobalElim | EventKind::DeclareGlobal => {
                if let Some(k) = e.arm {
                    server_active[k] = false;
                }
                if e.kind == EventKind::DeclareGlobal {
                    server_active.iter_mut().for_each(|a| *a = false);
                }
            }
            _ => {}
        }
    }
    Ok(holds)
}
