use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::Experiment;
use crate::engine::{self, RunConfig, TraceLevel};
use crate::error::Result;
use crate::schedule::Schedule;

/// One trial of one grid cell, flattened for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub instance: String,
    pub schedule: Schedule,
    pub cost: f64,
    pub delta: f64,
    pub trial: u64,
    pub stop_step: u64,
    pub total_pulls: u64,
    pub comm_scalars: u64,
    pub comm_cost: f64,
    pub comm_rounds: u64,
    pub total_cost: f64,
    pub hit_max_steps: bool,
    pub correct: bool,
    pub event_e: bool,
    pub declarations: String,
}

/// Stream key for trial `trial` of grid cell `cell`.
pub(crate) fn trial_key(cell: usize, trial: u64) -> u64 {
    ((cell as u64) << 32) | trial
}

/// Runs every (cell, trial) pair, in parallel, and returns the records
/// ordered by cell then trial.
pub fn run_trials(exp: &Experiment) -> Result<Vec<TrialRecord>> {
    exp.validate()?;
    let truth = exp.instance.best_arms()?;
    let grid = exp.grid();
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|c| (0..exp.trials).map(move |t| (c, t)))
        .collect();
    jobs.par_iter()
        .map(|&(cell, trial)| {
            let (spec, delta) = grid[cell];
            let mut config = RunConfig::new(delta, spec.schedule)
                .with_cost(spec.cost)
                .with_seed(exp.seed, trial_key(cell, trial))
                .with_trace(TraceLevel::None);
            config.sigma = exp.sigma;
            config.max_steps = exp.max_steps;
            let r = engine::run(&exp.instance, &config)?;
            if r.hit_max_steps {
                log::warn!("cell {cell} trial {trial} hit the step cap at {}", r.stop_step);
            }
            Ok(TrialRecord {
                instance: exp.label.clone(),
                schedule: spec.schedule,
                cost: spec.cost,
                delta,
                trial,
                stop_step: r.stop_step,
                total_pulls: r.total_pulls,
                comm_scalars: r.comm_scalars,
                comm_cost: r.comm_cost,
                comm_rounds: r.comm_round_count,
                total_cost: r.total_cost,
                hit_max_steps: r.hit_max_steps,
                correct: r.is_correct(&truth),
                event_e: r.event_e_holds,
                declarations: r.declarations_string(),
            })
        })
        .collect()
}

pub fn write_records<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
