use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedelim::bounds::BoundReport;
use fedelim::engine::{self, RunConfig, TraceLevel};
use fedelim::harness::{self, CellSpec, Experiment, ExperimentSpec, Status, TrialRecord};
use fedelim::ingest::{self, HetrecFiles};
use fedelim::{ProblemInstance, Schedule};

#[derive(Parser)]
#[command(name = "fedelim", version, about = "Federated best-arm identification by successive elimination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated trials of one (schedule, cost, delta) cell.
    Run(RunArgs),
    /// Run the grid described by an experiment file.
    Sweep(SweepArgs),
    /// Print the closed-form bounds for an instance.
    Bounds(BoundsArgs),
    /// Build an empirical instance from ratings and write its summary.
    Ingest(IngestArgs),
    /// Evaluate the acceptance predicates on trial records.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Builtin name (eq17, bernoulli-eq36) or path to an instance file.
    #[arg(long)]
    instance: String,
    /// every, exp:<base>, periodic:<H>[:<offset>], superexp, superexp:nofirst
    #[arg(long, default_value = "exp:2")]
    schedule: Schedule,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    cost: f64,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a full per-step trace for every trial.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the experiment file's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    instance: String,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    cost: f64,
    /// Period for the periodic row of the scheme table (default: rounded H*).
    #[arg(long)]
    period: Option<f64>,
    /// Base for the exponential row of the scheme table.
    #[arg(long)]
    base: Option<f64>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// CSV with header client,arm,rating.
    #[arg(long, conflicts_with = "hetrec")]
    ratings: Option<PathBuf>,
    /// Ratings, movie-country and movie-genre files, in that order.
    #[arg(long, num_args = 3, value_names = ["RATINGS", "COUNTRIES", "GENRES"])]
    hetrec: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Bound reports (a single report or an array of reports per file).
    #[arg(long, num_args = 0..)]
    bounds: Vec<PathBuf>,
}

fn load_instance(arg: &str) -> Result<(String, ProblemInstance)> {
    if let Some(inst) = ProblemInstance::builtin(arg) {
        return Ok((arg.to_string(), inst));
    }
    let file = File::open(arg).with_context(|| format!("opening instance {arg}"))?;
    let inst = ProblemInstance::read_text(BufReader::new(file)).with_context(|| format!("reading instance {arg}"))?;
    Ok((arg.to_string(), inst))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_outputs(dir: &Path, records: &[TrialRecord], instance: &ProblemInstance) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    harness::write_records(create(&dir.join("records.csv"))?, records)?;
    let aggregates = harness::aggregate(records, Some(instance))?;
    harness::emit_csv(create(&dir.join("summary.csv"))?, &aggregates)?;
    harness::emit_json(create(&dir.join("summary.json"))?, &aggregates)?;
    for a in &aggregates {
        println!(
            "{} C={} delta={}: pulls {:.1} ± {:.1}, comm {:.1} ± {:.1}, total {:.1} ± {:.1}, errors {:.3}, band {:.3}",
            a.schedule,
            a.cost,
            a.delta,
            a.total_pulls_mean,
            a.total_pulls_std,
            a.comm_cost_mean,
            a.comm_cost_std,
            a.total_cost_mean,
            a.total_cost_std,
            a.error_rate,
            a.event_e_rate
        );
        if a.pull_violations + a.comm_violations + a.total_violations > 0 {
            log::warn!(
                "{} C={} delta={}: bound violations pulls {} comm {} total {}",
                a.schedule,
                a.cost,
                a.delta,
                a.pull_violations,
                a.comm_violations,
                a.total_violations
            );
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (label, instance) = load_instance(&args.instance)?;
    let cells = vec![CellSpec { schedule: args.schedule, cost: args.cost }];
    let mut exp = Experiment::new(&label, instance, cells, vec![args.delta], args.trials).with_seed(args.seed);
    exp.sigma = args.sigma;
    if let Some(cap) = args.max_steps {
        exp.max_steps = cap;
    }
    let records = harness::run_trials(&exp)?;
    write_outputs(&args.out, &records, &exp.instance)?;
    if args.trace {
        for trial in 0..args.trials {
            // the single cell has index 0, so its stream key is the trial index
            let mut config = RunConfig::new(args.delta, args.schedule)
                .with_cost(args.cost)
                .with_seed(args.seed, trial)
                .with_trace(TraceLevel::Full);
            config.sigma = exp.sigma;
            config.max_steps = exp.max_steps;
            let result = engine::run(&exp.instance, &config)?;
            let trace = result.trace.expect("trace requested");
            trace.write_csv(create(&args.out.join(format!("trace_trial{trial}.csv")))?)?;
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let spec = ExperimentSpec::read(&args.spec)?;
    let base = args.spec.parent().unwrap_or(Path::new("."));
    let mut exp = spec.resolve(base)?;
    if let Some(trials) = args.trials {
        exp.trials = trials;
    }
    let out = match (args.out, &spec.out) {
        (Some(dir), _) => dir,
        (None, Some(dir)) => base.join(dir),
        (None, None) => bail!("no output directory: pass --out or set `out` in the experiment file"),
    };
    log::info!("{} cells x {} trials", exp.grid().len(), exp.trials);
    let records = harness::run_trials(&exp)?;
    write_outputs(&out, &records, &exp.instance)?;

    let cost = exp.cells[0].cost;
    let reports = exp
        .deltas
        .iter()
        .map(|&d| BoundReport::compute(&exp.label, &exp.instance, d, cost, None, None))
        .collect::<fedelim::Result<Vec<_>>>()?;
    serde_json::to_writer_pretty(create(&out.join("bounds.json"))?, &reports)?;
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let (label, instance) = load_instance(&args.instance)?;
    instance.validate().into_result()?;
    let report = BoundReport::compute(&label, &instance, args.delta, args.cost, args.period, args.base)?;
    let json = serde_json::to_string_pretty(&report)?;
    if args.json {
        println!("{json}");
    } else {
        print!("{report}");
    }
    if let Some(path) = args.out {
        let mut w = create(&path)?;
        writeln!(w, "{json}")?;
    }
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (table, join) = match (args.ratings, args.hetrec) {
        (Some(path), None) => (ingest::read_ratings_csv(&path)?, None),
        (None, Some(paths)) => {
            let files = HetrecFiles {
                ratings: paths[0].clone(),
                countries: paths[1].clone(),
                genres: paths[2].clone(),
            };
            let (table, report) = files.join()?;
            (table, Some(report))
        }
        _ => bail!("pass exactly one of --ratings or --hetrec"),
    };
    let (_, mut summary) = ingest::build_instance(&table)?;
    if let Some(report) = &join {
        println!(
            "joined {} rows from {} ratings ({} unresolvable, {} without country)",
            report.rows, report.ratings_read, report.dropped_unresolvable, report.dropped_empty_country
        );
    }
    summary.join = join;
    println!(
        "{} clients x {} arms, removed {:?}, global best {}",
        summary.num_clients, summary.num_arms, summary.removed_clients, summary.global_best
    );
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<BoundReport>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(many) = serde_json::from_str::<Vec<BoundReport>>(&text) {
        return Ok(many);
    }
    let one: BoundReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(vec![one])
}

fn cmd_check(args: CheckArgs) -> Result<bool> {
    let mut records = Vec::new();
    for path in &args.records {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        records.extend(harness::read_records(BufReader::new(file))?);
    }
    let mut reports = Vec::new();
    for path in &args.bounds {
        reports.extend(read_reports(path)?);
    }
    let report = harness::check_acceptance(&records, &reports);
    println!("{report}");
    Ok(report.status != Status::Fail)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Sweep(args) => cmd_sweep(args).map(|()| true),
        Command::Bounds(args) => cmd_bounds(args).map(|()| true),
        Command::Ingest(args) => cmd_ingest(args).map(|()| true),
        Command::Check(args) => cmd_check(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
