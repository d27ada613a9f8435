//! Acceptance gate: evaluates each criterion and prints one line per
//! criterion. The run fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use fedelim::bounds::{self, BoundReport, Scope};
use fedelim::harness::{self, CellSpec, Experiment, Status, TrialRecord, DEFAULT_DELTAS};
use fedelim::ingest::{self, HetrecFiles};
use fedelim::stream::InstanceSource;
use fedelim::trace::{global_radius, local_radius};
use fedelim::{Engine, ProblemInstance, RewardSource, RunConfig, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn cell(schedule: &str, cost: f64) -> CellSpec {
    CellSpec { schedule: schedule.parse().unwrap(), cost }
}

fn run(exp: Experiment) -> Vec<TrialRecord> {
    harness::run_trials(&exp).unwrap()
}

/// Runs the trial grids behind criteria 1 to 6 and 9 and evaluates them with
/// the harness checker.
fn record_criteria() -> Vec<Outcome> {
    let gaussian = ProblemInstance::synthetic_gaussian();
    let started = Instant::now();
    let mut records = run(Experiment::new(
        "eq17",
        gaussian.clone(),
        vec![cell("exp:2", 10.0)],
        vec![0.1],
        100,
    )
    .with_seed(101));
    let pac_secs = started.elapsed().as_secs_f64();

    let mut grid_cells = vec![cell("every", 0.0)];
    grid_cells.extend([0.0, 10.0, 100.0].map(|c| cell("exp:2", c)));
    let deltas: Vec<f64> = DEFAULT_DELTAS.iter().copied().filter(|&d| d != 0.1).collect();
    records.extend(run(Experiment::new("eq17", gaussian.clone(), grid_cells.clone(), deltas, 100).with_seed(202)));
    // delta = 0.1 for the remaining cells; the C = 10 doubling cell is already present
    grid_cells.retain(|c| !(c.schedule.to_string() == "exp:2" && c.cost == 10.0));
    records.extend(run(Experiment::new("eq17", gaussian.clone(), grid_cells, vec![0.1], 100).with_seed(303)));

    let mut periodic: Vec<CellSpec> = [1u64, 5, 10, 100, 1000, 10_000, 100_000]
        .iter()
        .map(|h| cell(&format!("periodic:{h}"), 10.0))
        .collect();
    records.extend(run(Experiment::new("eq17", gaussian.clone(), periodic.clone(), vec![0.01], 100).with_seed(404)));

    periodic.truncate(3);
    periodic.push(cell("exp:2", 10.0));
    records.extend(run(Experiment::new(
        "bernoulli-eq36",
        ProblemInstance::synthetic_bernoulli(),
        periodic,
        vec![0.1],
        50,
    )
    .with_seed(505)));

    let report = BoundReport::compute("eq17", &gaussian, 0.01, 10.0, None, None).unwrap();
    let checked = harness::check_acceptance(&records, &[report]);
    checked
        .criteria
        .into_iter()
        .filter(|c| c.status != Status::NotEvaluated)
        .map(|c| {
            let mut detail = c.detail;
            if c.id == 1 {
                detail.push_str(&format!("; {pac_secs:.1}s"));
            }
            Outcome { id: c.id, pass: c.status == Status::Pass, detail }
        })
        .collect()
}

/// A direct transcription of the protocol over ordered sets, used to check
/// the engine step by step.
struct Reference {
    k: usize,
    m: usize,
    delta: f64,
    cost: f64,
    schedule: String,
    local: Vec<BTreeSet<usize>>,
    global: BTreeSet<usize>,
    sums: BTreeMap<(usize, usize), f64>,
    counts: BTreeMap<(usize, usize), u64>,
    local_decl: Vec<Option<usize>>,
    global_decl: Option<usize>,
    pulls: u64,
    comm: f64,
    n: u64,
}

impl Reference {
    fn new(k: usize, m: usize, delta: f64, cost: f64, schedule: &str) -> Self {
        Reference {
            k,
            m,
            delta,
            cost,
            schedule: schedule.to_string(),
            local: vec![(0..k).collect(); m],
            global: (0..k).collect(),
            sums: BTreeMap::new(),
            counts: BTreeMap::new(),
            local_decl: vec![None; m],
            global_decl: None,
            pulls: 0,
            comm: 0.0,
            n: 0,
        }
    }

    fn communicates(&self, n: u64) -> bool {
        match self.schedule.as_str() {
            "every" => true,
            "exp:2" => (0..64).map(|t| 2f64.powi(t).ceil() as u64).any(|s| s == n),
            "exp:1.5" => (0..120).map(|t| 1.5f64.powi(t).ceil() as u64).any(|s| s == n),
            "periodic:7:3" => n >= 3 && (n - 3) % 7 == 0,
            "superexp" => [1u64, 2, 4, 16, 256, 65536].contains(&n),
            other => panic!("unknown schedule {other}"),
        }
    }

    fn mean(&self, arm: usize, client: usize) -> f64 {
        self.sums[&(arm, client)] / self.counts[&(arm, client)] as f64
    }

    fn step(&mut self, source: &mut impl RewardSource) {
        self.n += 1;
        let n = self.n;
        for c in 0..self.m {
            let union: BTreeSet<usize> = self.local[c].union(&self.global).copied().collect();
            if union.len() > 1 {
                for &a in &union {
                    let r = source.draw(a, c);
                    *self.sums.entry((a, c)).or_insert(0.0) += r;
                    *self.counts.entry((a, c)).or_insert(0) += 1;
                    self.pulls += 1;
                }
            }
            if self.local[c].len() > 1 {
                let radius = local_radius(n, self.k, self.m, self.delta, 1.0);
                let best = self.local[c].iter().map(|&a| self.mean(a, c)).fold(f64::MIN, f64::max);
                let survivors: BTreeSet<usize> = self.local[c]
                    .iter()
                    .copied()
                    .filter(|&a| best - self.mean(a, c) < 2.0 * radius)
                    .collect();
                self.local[c] = survivors;
            }
            if self.local[c].len() == 1 {
                self.local_decl[c] = self.local[c].iter().next().copied();
                self.local[c].clear();
            }
        }
        if self.global.len() > 1 && self.communicates(n) {
            self.comm += self.cost * (self.m * self.global.len()) as f64;
            let radius = global_radius(n, self.k, self.m, self.delta, 1.0);
            let avg = |a: usize| (0..self.m).map(|c| self.mean(a, c)).sum::<f64>() / self.m as f64;
            let best = self.global.iter().map(|&a| avg(a)).fold(f64::MIN, f64::max);
            self.global = self.global.iter().copied().filter(|&a| best - avg(a) < 2.0 * radius).collect();
        }
        if self.global.len() == 1 {
            self.global_decl = self.global.iter().next().copied();
            self.global.clear();
        }
    }

    fn done(&self) -> bool {
        self.global.is_empty() && self.local.iter().all(BTreeSet::is_empty)
    }
}

fn reference_equivalence() -> Outcome {
    const HORIZON: u64 = 20_000;
    let schedules = ["every", "exp:2", "exp:1.5", "periodic:7:3", "superexp"];
    let mut runs = 0;
    let mut finished = 0;
    let mut mismatches = Vec::new();
    for (k, m) in [(2usize, 2usize), (3, 3)] {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000 * k as u64);
            let means: Vec<Vec<f64>> =
                (0..k).map(|_| (0..m).map(|_| rng.random_range(0.0..3.0)).collect()).collect();
            let inst = ProblemInstance::gaussian(means).unwrap();
            if !inst.validate().is_ok() {
                continue;
            }
            for sched in schedules {
                runs += 1;
                let schedule: Schedule = sched.parse().unwrap();
                let config = RunConfig::new(0.1, schedule).with_cost(2.5).with_seed(seed, 0);
                let mut engine = Engine::new(&inst, config, InstanceSource::new(&inst, seed, 0));
                let mut reference = Reference::new(k, m, 0.1, 2.5, sched);
                let mut ref_source = InstanceSource::new(&inst, seed, 0);
                let mut ok = true;
                while !reference.done() && reference.n < HORIZON {
                    engine.step();
                    reference.step(&mut ref_source);
                    let same = (0..m).all(|c| {
                        engine.local_active(c).iter().copied().collect::<BTreeSet<_>>() == reference.local[c]
                    }) && engine.global_active().iter().copied().collect::<BTreeSet<_>>() == reference.global
                        && engine.local_declarations() == reference.local_decl.as_slice()
                        && engine.global_declaration() == reference.global_decl
                        && engine.total_pulls() == reference.pulls
                        && engine.comm_cost() == reference.comm
                        && engine.is_terminated() == reference.done();
                    if !same {
                        ok = false;
                        break;
                    }
                }
                if reference.done() {
                    finished += 1;
                }
                if !ok {
                    mismatches.push(format!("K={k} seed={seed} {sched} at step {}", reference.n));
                }
            }
        }
    }
    Outcome {
        id: 7,
        pass: mismatches.is_empty() && runs >= 400,
        detail: format!(
            "{runs} runs ({finished} terminated within {HORIZON} steps), {} mismatches {:?}",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>()
        ),
    }
}

fn bound_internals() -> Outcome {
    let mut failures = Vec::new();
    for gap in [0.05, 0.1, 0.2, 0.4, 0.8] {
        for delta in [0.1, 0.01] {
            for scope in [Scope::Local, Scope::Global] {
                let n = bounds::critical_sample_size(gap, 4, 3, delta, scope).unwrap();
                let radius = |n: u64| match scope {
                    Scope::Local => local_radius(n, 4, 3, delta, 1.0),
                    Scope::Global => global_radius(n, 4, 3, delta, 1.0),
                };
                let budget = match scope {
                    Scope::Local => bounds::t_km(gap, 4, 3, delta).unwrap(),
                    Scope::Global => bounds::t_k(gap, 4, 3, delta).unwrap(),
                };
                let crossing = radius(n) <= gap / 4.0 && (n == 1 || radius(n - 1) > gap / 4.0);
                if !crossing || n as f64 > budget.ceil() {
                    failures.push(format!("{scope:?} gap={gap} delta={delta}: n*={n}, budget {budget:.1}"));
                }
            }
        }
    }
    let mut worst_residual: f64 = 0.0;
    for rhs in [1e-6, 1e-3, 0.0046833, 0.1, 1.0, 10.0, 1e3] {
        let l = bounds::solve_base_equation(rhs).unwrap();
        worst_residual = worst_residual.max((l * l.ln().powi(2) - rhs).abs() / rhs.max(1.0));
    }
    let two = bounds::solve_base_equation(2.0 * 2f64.ln().powi(2)).unwrap();
    let pass = failures.is_empty() && worst_residual <= 1e-8 && (two - 2.0).abs() <= 1e-9;
    Outcome {
        id: 8,
        pass,
        detail: format!(
            "grid failures {failures:?}; worst base residual {worst_residual:.2e}; base at 2(ln 2)^2 = {two:.12}"
        ),
    }
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hetrec").join(name)
}

/// Independent join: every rating line times the genre lines of its movie,
/// provided the movie has a country.
fn brute_force_join_rows() -> usize {
    let read = |name| std::fs::read_to_string(fixture(name)).unwrap();
    let ratings = read("user_ratedmovies.dat");
    let countries = read("movie_countries.dat");
    let genres = read("movie_genres.dat");
    let movie_of = |line: &str| line.split('\t').nth(1).unwrap().to_string();
    let first = |line: &str| line.split('\t').next().unwrap().to_string();
    let mut rows = 0;
    for r in ratings.lines().skip(1) {
        let movie = movie_of(r);
        let c = countries.lines().skip(1).filter(|l| first(l) == movie).count();
        let g = genres.lines().skip(1).filter(|l| first(l) == movie).count();
        rows += c * g;
    }
    rows
}

fn ingest_round_trip() -> Outcome {
    let files = HetrecFiles {
        ratings: fixture("user_ratedmovies.dat"),
        countries: fixture("movie_countries.dat"),
        genres: fixture("movie_genres.dat"),
    };
    let (table, join) = files.join().unwrap();
    let expected_rows = brute_force_join_rows();
    let (cleaned, report) = ingest::clean(&table);
    let built = ingest::to_empirical_instance(&cleaned);
    let valid = built.as_ref().map(|(inst, _)| inst.validate().is_ok()).unwrap_or(false);
    let removed = report.removed();
    let pass = table.len() == expected_rows && removed == ["Japan"] && valid && join.dropped_unresolvable == 1;
    Outcome {
        id: 10,
        pass,
        detail: format!(
            "joined {} rows (brute force {expected_rows}), dropped {}, removed {removed:?}, validate ok: {valid}",
            table.len(),
            join.dropped_unresolvable
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = record_criteria();
    outcomes.push(reference_equivalence());
    outcomes.push(bound_internals());
    outcomes.push(ingest_round_trip());
    outcomes.sort_by_key(|o| o.id);
    let ids: Vec<u32> = outcomes.iter().map(|o| o.id).collect();
    assert_eq!(ids, (1..=10).collect::<Vec<_>>(), "every criterion must be evaluated");
    for o in &outcomes {
        println!("criterion {:>2}: {} | {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
