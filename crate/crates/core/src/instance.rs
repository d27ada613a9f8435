//! Problem instances: the `K x M` mean matrix, its reward model, ground-truth
//! best arms, and sub-optimality gaps.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact;
use crate::stream::RewardStream;

/// Name of the builtin 4-arm, 3-client Gaussian instance.
pub const BUILTIN_GAUSSIAN: &str = "eq17";
/// Name of the builtin 3-arm, 3-client Bernoulli instance.
pub const BUILTIN_BERNOULLI: &str = "bernoulli-eq36";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    GaussianUnitVariance,
    Bernoulli,
    EmpiricalPool,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::GaussianUnitVariance => "gaussian",
            RewardKind::Bernoulli => "bernoulli",
            RewardKind::EmpiricalPool => "empirical",
        })
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(RewardKind::GaussianUnitVariance),
            "bernoulli" => Ok(RewardKind::Bernoulli),
            "empirical" => Err(Error::instance(
                "empirical-pool instances are built from rating data, not instance files",
            )),
            other => Err(Error::instance(format!("unknown reward kind '{other}'"))),
        }
    }
}

/// A non-empty pool of observed rewards; draws are uniform over its entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    values: Vec<f64>,
    exact_mean: Option<BigRational>,
    mean: f64,
}

impl Pool {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::instance("empty reward pool"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::instance("non-finite value in reward pool"));
        }
        let exact_mean = exact::exact_mean(&values);
        let mean = match &exact_mean {
            Some(q) => exact::to_f64(q),
            None => {
                log::warn!("pool values are not exact decimals; tie checks fall back to f64");
                values.iter().sum::<f64>() / values.len() as f64
            }
        };
        Ok(Pool { values, exact_mean, mean })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn exact_key(&self) -> BigRational {
        self.exact_mean
            .clone()
            .unwrap_or_else(|| float_key(self.mean))
    }
}

fn float_key(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(BigRational::zero)
}

/// Ground truth for one run: `means[k][m]` is the mean of arm `k` at client `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    means: Vec<Vec<f64>>,
    kind: RewardKind,
    pools: Option<Vec<Vec<Pool>>>,
}

impl ProblemInstance {
    fn from_matrix(means: Vec<Vec<f64>>, kind: RewardKind) -> Result<Self> {
        check_shape(&means)?;
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::instance("means must be finite"));
        }
        Ok(ProblemInstance { means, kind, pools: None })
    }

    /// Unit-variance Gaussian rewards. `means` is indexed `[arm][client]`.
    pub fn gaussian(means: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_matrix(means, RewardKind::GaussianUnitVariance)
    }

    /// `{0,1}` rewards. Range violations are reported by [`validate`](Self::validate).
    pub fn bernoulli(means: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_matrix(means, RewardKind::Bernoulli)
    }

    /// Rewards drawn uniformly from observed pools, indexed `[arm][client]`.
    pub fn empirical(pools: Vec<Vec<Pool>>) -> Result<Self> {
        let means: Vec<Vec<f64>> = pools
            .iter()
            .map(|row| row.iter().map(Pool::mean).collect())
            .collect();
        check_shape(&means)?;
        Ok(ProblemInstance {
            means,
            kind: RewardKind::EmpiricalPool,
            pools: Some(pools),
        })
    }

    /// The builtin 4x3 Gaussian instance: arm `m` is the local best of client
    /// `m`, arm 4 is the global best.
    pub fn synthetic_gaussian() -> Self {
        Self::gaussian(vec![
            vec![0.9, 0.1, 0.1],
            vec![0.1, 0.9, 0.1],
            vec![0.1, 0.1, 0.9],
            vec![0.5, 0.5, 0.5],
        ])
        .expect("builtin instance is well-formed")
    }

    /// The builtin 3x3 Bernoulli instance.
    ///
    /// The published table lists one row per client; it is stored here
    /// transposed into the `[arm][client]` layout, which makes arm 1 both
    /// every client's local best and the global best.
    pub fn synthetic_bernoulli() -> Self {
        let per_client = [[0.9, 0.85, 0.1], [0.85, 0.8, 0.3], [0.7, 0.6, 0.5]];
        let means = (0..3)
            .map(|k| (0..3).map(|m| per_client[m][k]).collect())
            .collect();
        Self::bernoulli(means).expect("builtin instance is well-formed")
    }

    /// Looks up a builtin instance by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            BUILTIN_GAUSSIAN => Some(Self::synthetic_gaussian()),
            BUILTIN_BERNOULLI => Some(Self::synthetic_bernoulli()),
            _ => None,
        }
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn num_clients(&self) -> usize {
        self.means[0].len()
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn mean(&self, arm: usize, client: usize) -> f64 {
        self.means[arm][client]
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn pools(&self) -> Option<&[Vec<Pool>]> {
        self.pools.as_deref()
    }

    /// `mu_k`: arm means averaged over clients.
    pub fn global_means(&self) -> Vec<f64> {
        let m = self.num_clients() as f64;
        self.means
            .iter()
            .map(|row| row.iter().sum::<f64>() / m)
            .collect()
    }

    /// Exact rational view of the mean matrix used for tie detection.
    fn exact_means(&self) -> Vec<Vec<BigRational>> {
        match &self.pools {
            Some(pools) => pools
                .iter()
                .map(|row| row.iter().map(Pool::exact_key).collect())
                .collect(),
            None => self
                .means
                .iter()
                .map(|row| row.iter().map(|&v| float_key(v)).collect())
                .collect(),
        }
    }

    /// Checks every instance invariant. Violations are returned as data.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let (k_arms, m_clients) = (self.num_arms(), self.num_clients());
        if m_clients == 1 {
            report
                .warnings
                .push("single client: local and global problems coincide".into());
        }
        if self.kind == RewardKind::Bernoulli {
            for k in 0..k_arms {
                for m in 0..m_clients {
                    let mu = self.means[k][m];
                    if !(0.0..=1.0).contains(&mu) {
                        report.violations.push(Violation::BernoulliOutOfRange {
                            arm: k,
                            client: m,
                            mean: mu,
                        });
                    }
                }
            }
        }
        if let Some(pools) = &self.pools {
            for (k, row) in pools.iter().enumerate() {
                for (m, pool) in row.iter().enumerate() {
                    if pool.is_empty() {
                        report
                            .violations
                            .push(Violation::EmptyPool { arm: k, client: m });
                    } else if pool.mean() != self.means[k][m] {
                        report
                            .violations
                            .push(Violation::PoolMeanMismatch { arm: k, client: m });
                    }
                }
            }
        }
        let exact = self.exact_means();
        for m in 0..m_clients {
            let column: Vec<&BigRational> = exact.iter().map(|row| &row[m]).collect();
            let tied = maximizers(&column);
            if tied.len() > 1 {
                report
                    .violations
                    .push(Violation::LocalBestNotUnique { client: m, arms: tied });
            }
        }
        let totals = exact_totals(&exact);
        let tied = maximizers(&totals.iter().collect::<Vec<_>>());
        if tied.len() > 1 {
            report
                .violations
                .push(Violation::GlobalBestNotUnique { arms: tied });
        }
        report
    }

    /// Local and global best arms. Fails if any argmax is not unique.
    pub fn best_arms(&self) -> Result<BestArmProfile> {
        let exact = self.exact_means();
        let mut local_best = Vec::with_capacity(self.num_clients());
        for m in 0..self.num_clients() {
            let column: Vec<&BigRational> = exact.iter().map(|row| &row[m]).collect();
            match maximizers(&column).as_slice() {
                [k] => local_best.push(*k),
                tied => {
                    return Err(Error::instance(format!(
                        "local best of client {} not unique (arms {})",
                        m + 1,
                        one_based(tied)
                    )))
                }
            }
        }
        let totals = exact_totals(&exact);
        let global_best = match maximizers(&totals.iter().collect::<Vec<_>>()).as_slice() {
            [k] => *k,
            tied => {
                return Err(Error::instance(format!(
                    "global best not unique (arms {})",
                    one_based(tied)
                )))
            }
        };
        Ok(BestArmProfile {
            local_best,
            global_best,
            global_means: self.global_means(),
        })
    }

    /// Sub-optimality gaps for every (arm, client) pair and every arm globally.
    pub fn gaps(&self) -> Result<GapStructure> {
        let best = self.best_arms()?;
        let (k_arms, m_clients) = (self.num_arms(), self.num_clients());
        let mut local = vec![vec![0.0; m_clients]; k_arms];
        for m in 0..m_clients {
            let star = best.local_best[m];
            let top = self.means[star][m];
            let mut smallest = f64::INFINITY;
            for k in (0..k_arms).filter(|&k| k != star) {
                let gap = top - self.means[k][m];
                local[k][m] = gap;
                smallest = smallest.min(gap);
            }
            local[star][m] = smallest;
        }
        let star = best.global_best;
        let top = best.global_means[star];
        let mut global = vec![0.0; k_arms];
        let mut smallest = f64::INFINITY;
        for k in (0..k_arms).filter(|&k| k != star) {
            let gap = top - best.global_means[k];
            global[k] = gap;
            smallest = smallest.min(gap);
        }
        global[star] = smallest;
        if local.iter().flatten().chain(global.iter()).any(|&g| g <= 0.0) {
            return Err(Error::instance(
                "gap underflow: distinct means collapse to equal doubles",
            ));
        }
        Ok(GapStructure { local, global })
    }

    /// One reward for arm `arm` at client `client`.
    pub fn draw(&self, stream: &mut RewardStream, arm: usize, client: usize) -> f64 {
        let rng = stream.rng();
        match self.kind {
            RewardKind::GaussianUnitVariance => {
                let z: f64 = rng.sample(StandardNormal);
                self.means[arm][client] + z
            }
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < self.means[arm][client] {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::EmpiricalPool => {
                let pool = &self.pools.as_ref().expect("empirical instance has pools")[arm][client];
                pool.values[rng.random_range(0..pool.values.len())]
            }
        }
    }

    /// Reads the text instance format: a `K M kind` header followed by `K`
    /// lines of `M` whitespace-separated means. Blank lines and `#` comments
    /// are skipped.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut header: Option<(usize, usize, RewardKind)> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx as u64 + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            match header {
                None => {
                    if fields.len() != 3 {
                        return Err(parse_err("expected header 'K M kind'".into()));
                    }
                    let k: usize = fields[0]
                        .parse()
                        .map_err(|_| parse_err(format!("bad arm count '{}'", fields[0])))?;
                    let m: usize = fields[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad client count '{}'", fields[1])))?;
                    let kind = fields[2]
                        .parse()
                        .map_err(|e: Error| parse_err(e.to_string()))?;
                    header = Some((k, m, kind));
                }
                Some((k, m, _)) => {
                    if rows.len() == k {
                        return Err(parse_err(format!("more than {k} mean rows")));
                    }
                    if fields.len() != m {
                        return Err(parse_err(format!(
                            "expected {m} means, found {}",
                            fields.len()
                        )));
                    }
                    let row = fields
                        .iter()
                        .map(|f| {
                            f.parse::<f64>()
                                .map_err(|_| parse_err(format!("non-numeric mean '{f}'")))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    rows.push(row);
                }
            }
        }
        let (k, _, kind) = header.ok_or_else(|| Error::instance("empty instance file"))?;
        if rows.len() != k {
            return Err(Error::instance(format!(
                "expected {k} mean rows, found {}",
                rows.len()
            )));
        }
        Self::from_matrix(rows, kind)
    }

    /// Writes the text instance format understood by [`read_text`](Self::read_text).
    pub fn to_text(&self) -> Result<String> {
        if self.kind == RewardKind::EmpiricalPool {
            return Err(Error::instance(
                "empirical-pool instances have no text form; use the ingest summary",
            ));
        }
        let mut out = format!("{} {} {}\n", self.num_arms(), self.num_clients(), self.kind);
        for row in &self.means {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_shape(means: &[Vec<f64>]) -> Result<()> {
    if means.len() < 2 {
        return Err(Error::instance("need at least 2 arms"));
    }
    let m = means[0].len();
    if m == 0 {
        return Err(Error::instance("need at least 1 client"));
    }
    if means.iter().any(|row| row.len() != m) {
        return Err(Error::instance("mean matrix is ragged"));
    }
    Ok(())
}

fn exact_totals(exact: &[Vec<BigRational>]) -> Vec<BigRational> {
    exact
        .iter()
        .map(|row| row.iter().fold(BigRational::zero(), |acc, q| acc + q))
        .collect()
}

fn maximizers(values: &[&BigRational]) -> Vec<usize> {
    let Some(top) = values.iter().max() else {
        return Vec::new();
    };
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == *top)
        .map(|(i, _)| i)
        .collect()
}

fn one_based(arms: &[usize]) -> String {
    arms.iter()
        .map(|k| (k + 1).to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// A single broken instance invariant. Indices are 0-based; `Display` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BernoulliOutOfRange { arm: usize, client: usize, mean: f64 },
    EmptyPool { arm: usize, client: usize },
    PoolMeanMismatch { arm: usize, client: usize },
    LocalBestNotUnique { client: usize, arms: Vec<usize> },
    GlobalBestNotUnique { arms: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BernoulliOutOfRange { arm, client, mean } => write!(
                f,
                "Bernoulli mean out of [0,1]: arm {} client {} has {mean}",
                arm + 1,
                client + 1
            ),
            Violation::EmptyPool { arm, client } => {
                write!(f, "empty reward pool at arm {} client {}", arm + 1, client + 1)
            }
            Violation::PoolMeanMismatch { arm, client } => write!(
                f,
                "stored mean differs from pool mean at arm {} client {}",
                arm + 1,
                client + 1
            ),
            Violation::LocalBestNotUnique { client, arms } => write!(
                f,
                "local best of client {} not unique (arms {})",
                client + 1,
                one_based(arms)
            ),
            Violation::GlobalBestNotUnique { arms } => {
                write!(f, "global best not unique (arms {})", one_based(arms))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts a failed report into an error listing every violation.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::instance(msgs.join("; ")))
    }
}

/// Ground-truth answer vector. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestArmProfile {
    pub local_best: Vec<usize>,
    pub global_best: usize,
    pub global_means: Vec<f64>,
}

/// Sub-optimality gaps; `local[k][m]` and `global[k]`. The best arm's entry
/// holds the smallest gap among the other arms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStructure {
    pub local: Vec<Vec<f64>>,
    pub global: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::StreamKey;

    fn stream(arm: u32, client: u32) -> RewardStream {
        RewardStream::new(StreamKey { seed: 7, trial: 0, client, arm })
    }

    #[test]
    fn synthetic_gaussian_is_valid() {
        let inst = ProblemInstance::synthetic_gaussian();
        let report = inst.validate();
        assert!(report.is_ok(), "{:?}", report.violations);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn exact_tie_is_reported() {
        let inst = ProblemInstance::gaussian(vec![vec![0.3, 0.0], vec![0.3, 1.0]]).unwrap();
        let report = inst.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(
            report.violations[0].to_string(),
            "local best of client 1 not unique (arms 1, 2)"
        );
        assert!(inst.best_arms().is_err());
    }

    #[test]
    fn bernoulli_range_is_checked() {
        let inst = ProblemInstance::bernoulli(vec![vec![1.2], vec![0.5]]).unwrap();
        let report = inst.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v.to_string().starts_with("Bernoulli mean out of [0,1]")));
    }

    #[test]
    fn single_client_warns_but_passes() {
        let inst = ProblemInstance::gaussian(vec![vec![0.2], vec![0.7]]).unwrap();
        let report = inst.validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        let best = inst.best_arms().unwrap();
        assert_eq!(best.local_best, vec![1]);
        assert_eq!(best.global_best, 1);
    }

    #[test]
    fn best_arms_of_builtins() {
        let g = ProblemInstance::synthetic_gaussian().best_arms().unwrap();
        assert_eq!(g.local_best, vec![0, 1, 2]);
        assert_eq!(g.global_best, 3);
        let b = ProblemInstance::synthetic_bernoulli().best_arms().unwrap();
        assert_eq!(b.local_best, vec![0, 0, 0]);
        assert_eq!(b.global_best, 0);
    }

    #[test]
    fn gaps_of_synthetic_gaussian() {
        let gaps = ProblemInstance::synthetic_gaussian().gaps().unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(gaps.local[1][0], 0.8));
        assert!(close(gaps.local[2][0], 0.8));
        assert!(close(gaps.local[3][0], 0.4));
        assert!(close(gaps.local[0][0], 0.4));
        for k in 0..4 {
            assert!((gaps.global[k] - (0.5 - 1.1 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_arm_symmetric_gap() {
        let gaps = ProblemInstance::gaussian(vec![vec![0.0], vec![1.0]])
            .unwrap()
            .gaps()
            .unwrap();
        assert_eq!(gaps.local[0][0], 1.0);
        assert_eq!(gaps.local[1][0], 1.0);
    }

    #[test]
    fn degenerate_draws() {
        let pools = vec![
            vec![Pool::new(vec![3.5]).unwrap()],
            vec![Pool::new(vec![1.0]).unwrap()],
        ];
        let inst = ProblemInstance::empirical(pools).unwrap();
        let mut s = stream(0, 0);
        for _ in 0..100 {
            assert_eq!(inst.draw(&mut s, 0, 0), 3.5);
        }
        let bern = ProblemInstance::bernoulli(vec![vec![1.0], vec![0.0]]).unwrap();
        let mut s = stream(0, 0);
        let mut t = stream(1, 0);
        for _ in 0..100 {
            assert_eq!(bern.draw(&mut s, 0, 0), 1.0);
            assert_eq!(bern.draw(&mut t, 1, 0), 0.0);
        }
    }

    #[test]
    fn gaussian_sample_mean_concentrates() {
        let inst = ProblemInstance::gaussian(vec![vec![0.0], vec![1.0]]).unwrap();
        let mut s = stream(0, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| inst.draw(&mut s, 0, 0)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "sample mean {mean}");
    }

    #[test]
    fn pool_mean_ties_are_exact() {
        // {2} and {1, 3} tie exactly; so do {0.1, 0.2} and {0.15, 0.15}.
        let pools = vec![
            vec![Pool::new(vec![2.0]).unwrap()],
            vec![Pool::new(vec![1.0, 3.0]).unwrap()],
        ];
        let inst = ProblemInstance::empirical(pools).unwrap();
        assert!(!inst.validate().is_ok());
        let pools = vec![
            vec![Pool::new(vec![0.1, 0.2]).unwrap()],
            vec![Pool::new(vec![0.15, 0.15]).unwrap()],
        ];
        let inst = ProblemInstance::empirical(pools).unwrap();
        assert!(!inst.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let inst = ProblemInstance::synthetic_bernoulli();
        let text = inst.to_text().unwrap();
        let back = ProblemInstance::read_text(text.as_bytes()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let text = "2 2 gaussian\n0.1 0.2\n0.3 x\n";
        let err = ProblemInstance::read_text(text.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "line 3: non-numeric mean 'x'");
        let err = ProblemInstance::read_text("2 2 gaussian\n0.1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }
}
