use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_MAX_STEPS;
use crate::error::{Error, Result};
use crate::ingest::{self, HetrecFiles};
use crate::instance::ProblemInstance;
use crate::schedule::Schedule;

pub const DEFAULT_DELTAS: [f64; 6] = [0.2, 0.1, 0.05, 0.01, 0.005, 0.001];
pub const DEFAULT_TRIALS: u64 = 100;

/// Where an experiment's instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSpec {
    /// A builtin name or a path to an instance text file.
    Name(String),
    File { file: PathBuf },
    Ratings { ratings: PathBuf },
    Hetrec { hetrec: HetrecFiles },
}

impl InstanceSpec {
    /// Loads the instance; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(String, ProblemInstance)> {
        match self {
            InstanceSpec::Name(name) => match ProblemInstance::builtin(name) {
                Some(inst) => Ok((name.clone(), inst)),
                None => load_file(&base.join(name)),
            },
            InstanceSpec::File { file } => load_file(&base.join(file)),
            InstanceSpec::Ratings { ratings } => {
                let path = base.join(ratings);
                let table = ingest::read_ratings_csv(&path)?;
                let (inst, _) = ingest::build_instance(&table)?;
                Ok((path.display().to_string(), inst))
            }
            InstanceSpec::Hetrec { hetrec } => {
                let files = HetrecFiles {
                    ratings: base.join(&hetrec.ratings),
                    countries: base.join(&hetrec.countries),
                    genres: base.join(&hetrec.genres),
                };
                let (table, _) = files.join()?;
                let (inst, _) = ingest::build_instance(&table)?;
                Ok(("hetrec".to_string(), inst))
            }
        }
    }
}

fn load_file(path: &Path) -> Result<(String, ProblemInstance)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Spec(format!("instance '{}': {e}", path.display())))?;
    let inst = ProblemInstance::read_text(std::io::BufReader::new(file))?;
    Ok((path.display().to_string(), inst))
}

/// One (schedule, uplink cost) pair of the algorithm grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub schedule: Schedule,
    pub cost: f64,
}

/// The on-disk experiment description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instance: InstanceSpec,
    pub cells: Vec<CellSpec>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_deltas() -> Vec<f64> {
    DEFAULT_DELTAS.to_vec()
}

fn default_trials() -> u64 {
    DEFAULT_TRIALS
}

fn default_sigma() -> f64 {
    1.0
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads the instance and checks the grids.
    pub fn resolve(&self, base: &Path) -> Result<Experiment> {
        let (label, instance) = self.instance.load(base)?;
        let exp = Experiment {
            label,
            instance,
            cells: self.cells.clone(),
            deltas: self.deltas.clone(),
            trials: self.trials,
            seed: self.seed,
            sigma: self.sigma,
            max_steps: self.max_steps,
        };
        exp.validate()?;
        Ok(exp)
    }
}

/// A resolved experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub label: String,
    pub instance: ProblemInstance,
    pub cells: Vec<CellSpec>,
    pub deltas: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub sigma: f64,
    pub max_steps: u64,
}

impl Experiment {
    pub fn new(label: &str, instance: ProblemInstance, cells: Vec<CellSpec>, deltas: Vec<f64>, trials: u64) -> Self {
        Experiment {
            label: label.to_string(),
            instance,
            cells,
            deltas,
            trials,
            seed: 0,
            sigma: 1.0,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Spec("no (schedule, cost) cells".into()));
        }
        if self.deltas.is_empty() {
            return Err(Error::Spec("empty delta grid".into()));
        }
        if self.trials == 0 {
            return Err(Error::Spec("trials must be >= 1".into()));
        }
        if self.cells.len() * self.deltas.len() > u32::MAX as usize || self.trials > u32::MAX as u64 {
            return Err(Error::Spec("grid too large".into()));
        }
        self.instance.validate().into_result()
    }

    /// Grid cells in run order: deltas outermost, then the algorithm cells.
    pub fn grid(&self) -> Vec<(CellSpec, f64)> {
        self.deltas
            .iter()
            .flat_map(|&d| self.cells.iter().map(move |&c| (c, d)))
            .collect()
    }
}
