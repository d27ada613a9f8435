//! Rating tables: CSV and hetrec-layout parsing, tie/coverage cleanup, and
//! conversion into empirical-pool instances.
//!
//! Clients are the first label (a country in the hetrec layout) and arms the
//! second (a genre). Every rating becomes one pool entry for its cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact;
use crate::instance::{Pool, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub client: usize,
    pub arm: usize,
    pub rating: f64,
}

/// Labeled ratings with interned client and arm labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingsTable {
    clients: Vec<String>,
    arms: Vec<String>,
    rows: Vec<Rating>,
}

impl RatingsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, client: &str, arm: &str, rating: f64) -> Result<()> {
        if client.is_empty() || arm.is_empty() {
            return Err(Error::Ingest("empty client or arm label".into()));
        }
        if !rating.is_finite() {
            return Err(Error::Ingest(format!("non-finite rating {rating}")));
        }
        let client = intern(&mut self.clients, client);
        let arm = intern(&mut self.arms, arm);
        self.rows.push(Rating { client, arm, rating });
        Ok(())
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn client_labels(&self) -> &[String] {
        &self.clients
    }

    pub fn arm_labels(&self) -> &[String] {
        &self.arms
    }

    pub fn client_label(&self, idx: usize) -> &str {
        &self.clients[idx]
    }

    pub fn arm_label(&self, idx: usize) -> &str {
        &self.arms[idx]
    }

    /// Ratings grouped by `(client label, arm label)`, in label order.
    pub fn cells(&self) -> BTreeMap<(&str, &str), Vec<f64>> {
        let mut cells: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            cells
                .entry((&self.clients[r.client], &self.arms[r.arm]))
                .or_default()
                .push(r.rating);
        }
        cells
    }

    fn retain_clients(&self, keep: impl Fn(&str) -> bool) -> RatingsTable {
        let mut out = RatingsTable::new();
        for r in &self.rows {
            let client = &self.clients[r.client];
            if keep(client) {
                out.push(client, &self.arms[r.arm], r.rating)
                    .expect("labels and ratings already validated");
            }
        }
        out
    }
}

// Linear lookup keeps label order stable; label counts are small.
fn intern(labels: &mut Vec<String>, label: &str) -> usize {
    match labels.iter().position(|l| l == label) {
        Some(i) => i,
        None => {
            labels.push(label.to_string());
            labels.len() - 1
        }
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses a `client,arm,rating` CSV with that exact header line.
pub fn parse_ratings_csv<R: Read>(reader: R) -> Result<RatingsTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = RatingsTable::new();
    let mut records = rdr.records();
    match records.next() {
        Some(header) => {
            let header = header?;
            let fields: Vec<&str> = header.iter().collect();
            if fields != ["client", "arm", "rating"] {
                return Err(parse_error(line_of(&header), "missing header 'client,arm,rating'"));
            }
        }
        None => return Err(parse_error(1, "missing header 'client,arm,rating'")),
    }
    for record in records {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(parse_error(line, format!("expected 3 fields, found {}", record.len())));
        }
        let rating: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_error(line, "non-numeric rating"))?;
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_error(line, "empty client or arm label"));
        }
        table.push(&record[0], &record[1], rating)?;
    }
    Ok(table)
}

pub fn read_ratings_csv(path: &Path) -> Result<RatingsTable> {
    parse_ratings_csv(File::open(path)?)
}

/// The three tab-separated hetrec files the join needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HetrecFiles {
    /// Columns `userID`, `movieID`, `rating` (others ignored).
    pub ratings: PathBuf,
    /// Columns `movieID`, `country`.
    pub countries: PathBuf,
    /// Columns `movieID`, `genre`.
    pub genres: PathBuf,
}

impl HetrecFiles {
    pub fn join(&self) -> Result<(RatingsTable, JoinReport)> {
        let open = |p: &PathBuf| {
            File::open(p).map_err(|e| Error::Ingest(format!("{}: {e}", p.display())))
        };
        join_hetrec(open(&self.ratings)?, open(&self.countries)?, open(&self.genres)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub ratings_read: usize,
    pub rows: usize,
    /// Ratings whose movie has no country entry.
    pub dropped_unresolvable: usize,
    /// Ratings whose movie's only country labels are empty.
    pub dropped_empty_country: usize,
}

struct TsvTable {
    columns: Vec<usize>,
    records: Vec<csv::StringRecord>,
}

fn read_tsv<R: Read>(reader: R, what: &str, wanted: &[&str]) -> Result<TsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let columns = wanted
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Ingest(format!("{what}: missing column '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    for record in &records {
        if columns.iter().any(|&c| c >= record.len()) {
            return Err(parse_error(line_of(record), format!("{what}: too few fields")));
        }
    }
    Ok(TsvTable { columns, records })
}

fn multimap(table: &TsvTable) -> HashMap<String, Vec<String>> {
    let mut map: HashMap<String, Vec<String>> = HashMap::new();
    for r in &table.records {
        map.entry(r[table.columns[0]].trim().to_string())
            .or_default()
            .push(r[table.columns[1]].trim().to_string());
    }
    map
}

/// Joins ratings with movie countries and genres on `movieID`: each rating
/// yields one row per (country, genre) of its movie, with the country as the
/// client and the genre as the arm.
pub fn join_hetrec<R1: Read, R2: Read, R3: Read>(
    ratings: R1,
    countries: R2,
    genres: R3,
) -> Result<(RatingsTable, JoinReport)> {
    let ratings = read_tsv(ratings, "ratings", &["userID", "movieID", "rating"])?;
    let countries = multimap(&read_tsv(countries, "countries", &["movieID", "country"])?);
    let genres = multimap(&read_tsv(genres, "genres", &["movieID", "genre"])?);
    let no_genres = Vec::new();

    let mut table = RatingsTable::new();
    let mut report = JoinReport::default();
    for record in &ratings.records {
        report.ratings_read += 1;
        let line = line_of(record);
        let movie = record[ratings.columns[1]].trim();
        let rating: f64 = record[ratings.columns[2]]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_error(line, "non-numeric rating"))?;
        let Some(movie_countries) = countries.get(movie) else {
            report.dropped_unresolvable += 1;
            continue;
        };
        let labeled: Vec<&String> = movie_countries.iter().filter(|c| !c.is_empty()).collect();
        if labeled.is_empty() {
            report.dropped_empty_country += 1;
            continue;
        }
        for country in labeled {
            for genre in genres.get(movie).unwrap_or(&no_genres) {
                if genre.is_empty() {
                    continue;
                }
                table.push(country, genre, rating)?;
            }
        }
    }
    report.rows = table.len();
    Ok((table, report))
}

/// Clients dropped by [`clean`], in label order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    /// Clients without ratings for every arm.
    pub incomplete: Vec<String>,
    /// Clients whose largest mean rating is shared by two or more arms.
    pub tied: Vec<String>,
}

impl CleanReport {
    pub fn removed(&self) -> Vec<String> {
        let mut all: Vec<String> = self.incomplete.iter().chain(&self.tied).cloned().collect();
        all.sort();
        all
    }
}

/// Exact mean when the ratings are decimal literals, else the float mean as a rational.
fn cell_mean(values: &[f64]) -> BigRational {
    exact::exact_mean(values).unwrap_or_else(|| {
        log::warn!("ratings are not exact decimals; comparing float means");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        BigRational::from_float(mean).expect("finite ratings have a finite mean")
    })
}

/// Removes clients that lack a rating for some arm, then clients whose best
/// arm is not unique under exact arithmetic.
pub fn clean(table: &RatingsTable) -> (RatingsTable, CleanReport) {
    let all_arms: BTreeSet<&str> = table.arms.iter().map(String::as_str).collect();
    let cells = table.cells();
    let mut per_client: BTreeMap<&str, Vec<(&str, &[f64])>> = BTreeMap::new();
    for ((client, arm), values) in &cells {
        per_client.entry(client).or_default().push((arm, values.as_slice()));
    }

    let mut report = CleanReport::default();
    for (client, arms) in &per_client {
        if arms.len() < all_arms.len() {
            report.incomplete.push(client.to_string());
            continue;
        }
        let means: Vec<BigRational> = arms.iter().map(|(_, v)| cell_mean(v)).collect();
        let top = means.iter().max().expect("every client has at least one arm");
        if means.iter().filter(|m| *m == top).count() > 1 {
            report.tied.push(client.to_string());
        }
    }
    let removed: BTreeSet<String> = report.incomplete.iter().chain(&report.tied).cloned().collect();
    (table.retain_clients(|c| !removed.contains(c)), report)
}

/// Shape, means and provenance of an ingested instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub clients: Vec<String>,
    pub arms: Vec<String>,
    pub num_arms: usize,
    pub num_clients: usize,
    /// `means[k][m]`.
    pub means: Vec<Vec<f64>>,
    /// `pool_sizes[k][m]`.
    pub pool_sizes: Vec<Vec<usize>>,
    pub global_means: Vec<f64>,
    pub global_best: String,
    pub local_best: Vec<String>,
    pub removed_clients: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinReport>,
}

/// Builds an empirical-pool instance from a cleaned table. Clients and arms are
/// ordered by label.
pub fn to_empirical_instance(table: &RatingsTable) -> Result<(ProblemInstance, InstanceSummary)> {
    if table.is_empty() {
        return Err(Error::Ingest("no ratings left to build an instance from".into()));
    }
    let mut clients: Vec<String> = table.clients.clone();
    let mut arms: Vec<String> = table.arms.clone();
    clients.sort();
    arms.sort();
    let cells = table.cells();

    let mut pools = Vec::with_capacity(arms.len());
    let mut exact_global = Vec::with_capacity(arms.len());
    for arm in &arms {
        let mut row = Vec::with_capacity(clients.len());
        let mut total = BigRational::from_integer(0.into());
        for client in &clients {
            let values = cells.get(&(client.as_str(), arm.as_str())).ok_or_else(|| {
                Error::Ingest(format!("client '{client}' has no ratings for arm '{arm}'"))
            })?;
            total += cell_mean(values);
            row.push(Pool::new(values.clone())?);
        }
        exact_global.push(total);
        pools.push(row);
    }

    let top = exact_global.iter().max().expect("at least one arm");
    let tied: Vec<&str> = arms
        .iter()
        .zip(&exact_global)
        .filter(|(_, g)| *g == top)
        .map(|(a, _)| a.as_str())
        .collect();
    if tied.len() > 1 {
        return Err(Error::Ingest(format!("global best arm not unique: {}", tied.join(", "))));
    }

    let instance = ProblemInstance::empirical(pools)?;
    instance.validate().into_result()?;
    let best = instance.best_arms()?;
    let summary = InstanceSummary {
        num_arms: arms.len(),
        num_clients: clients.len(),
        means: instance.means().to_vec(),
        pool_sizes: instance
            .pools()
            .expect("empirical instance has pools")
            .iter()
            .map(|row| row.iter().map(Pool::len).collect())
            .collect(),
        global_means: best.global_means.clone(),
        global_best: arms[best.global_best].clone(),
        local_best: best.local_best.iter().map(|&k| arms[k].clone()).collect(),
        removed_clients: Vec::new(),
        join: None,
        clients,
        arms,
    };
    Ok((instance, summary))
}

/// Clean then convert, recording the removed clients in the summary.
pub fn build_instance(table: &RatingsTable) -> Result<(ProblemInstance, InstanceSummary)> {
    let (cleaned, report) = clean(table);
    let (instance, mut summary) = to_empirical_instance(&cleaned)?;
    summary.removed_clients = report.removed();
    Ok((instance, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_table(text: &str) -> Result<RatingsTable> {
        parse_ratings_csv(text.as_bytes())
    }

    #[test]
    fn parses_three_rows() {
        let t = csv_table("client,arm,rating\nus,drama,4.0\nus,comedy,0.5\nfr,drama,5.0\n").unwrap();
        assert_eq!(t.len(), 3);
        let ratings: Vec<f64> = t.rows().iter().map(|r| r.rating).collect();
        assert_eq!(ratings, vec![4.0, 0.5, 5.0]);
        assert_eq!(t.client_labels(), ["us", "fr"]);
    }

    #[test]
    fn reports_bad_rating_line() {
        let text = "client,arm,rating\na,x,1\na,x,1\na,x,1\na,x,1\na,x,1\na,x,abc\n";
        let err = csv_table(text).unwrap_err().to_string();
        assert_eq!(err, "line 7: non-numeric rating");
    }

    #[test]
    fn header_only_is_empty() {
        assert!(csv_table("client,arm,rating\n").unwrap().is_empty());
    }

    #[test]
    fn rejects_missing_header_and_arity() {
        assert!(csv_table("a,x,1\n").unwrap_err().to_string().contains("missing header"));
        assert!(csv_table("").is_err());
        let err = csv_table("client,arm,rating\na,x\n").unwrap_err().to_string();
        assert_eq!(err, "line 2: expected 3 fields, found 2");
        let err = csv_table("client,arm,rating\n,x,1\n").unwrap_err().to_string();
        assert_eq!(err, "line 2: empty client or arm label");
    }

    #[test]
    fn join_multiplies_by_genres_and_drops_unknown_movies() {
        let ratings = "userID\tmovieID\trating\n1\t10\t4.0\n2\t11\t3.0\n3\t99\t5.0\n";
        let countries = "movieID\tcountry\n10\tUSA\n11\tFrance\n";
        let genres = "movieID\tgenre\n10\tDrama\n10\tComedy\n11\tDrama\n";
        let (t, report) =
            join_hetrec(ratings.as_bytes(), countries.as_bytes(), genres.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(report.dropped_unresolvable, 1);
        assert_eq!(report.ratings_read, 3);
        assert_eq!(report.rows, 3);
    }

    #[test]
    fn join_drops_empty_country() {
        let ratings = "userID\tmovieID\trating\n1\t10\t4.0\n";
        let countries = "movieID\tcountry\n10\t\n";
        let genres = "movieID\tgenre\n10\tDrama\n";
        let (t, report) =
            join_hetrec(ratings.as_bytes(), countries.as_bytes(), genres.as_bytes()).unwrap();
        assert!(t.is_empty());
        assert_eq!(report.dropped_empty_country, 1);
    }

    #[test]
    fn join_requires_columns() {
        let err = join_hetrec("user\tmovieID\trating\n".as_bytes(), "movieID\tcountry\n".as_bytes(), "movieID\tgenre\n".as_bytes())
            .unwrap_err();
        assert!(err.to_string().contains("missing column 'userID'"));
    }

    #[test]
    fn clean_removes_exact_ties_only() {
        // a: means 2/1 and 4/2, tied; b: means 2.0 and 2.5
        let t = csv_table(
            "client,arm,rating\na,x,2\na,y,1\na,y,3\nb,x,2.0\nb,y,2.5\n",
        )
        .unwrap();
        let (cleaned, report) = clean(&t);
        assert_eq!(report.tied, vec!["a"]);
        assert!(report.incomplete.is_empty());
        assert_eq!(cleaned.client_labels(), ["b"]);
        assert_eq!(clean(&cleaned).0, cleaned);
    }

    #[test]
    fn clean_tie_is_order_independent() {
        // 0.1 + 0.2 + 0.3 differs from 0.3 + 0.2 + 0.1 in floating point
        let t = csv_table("client,arm,rating\na,x,0.1\na,x,0.2\na,x,0.3\na,y,0.3\na,y,0.2\na,y,0.1\n")
            .unwrap();
        assert_eq!(clean(&t).1.tied, vec!["a"]);
    }

    #[test]
    fn clean_removes_incomplete_clients() {
        let t = csv_table("client,arm,rating\na,x,1\na,y,2\nb,x,3\n").unwrap();
        let (cleaned, report) = clean(&t);
        assert_eq!(report.incomplete, vec!["b"]);
        assert_eq!(cleaned.len(), 2);
    }

    #[test]
    fn rejects_tied_global_best_by_name() {
        // local bests unique, but global means 2 and 2
        let t = csv_table("client,arm,rating\nc1,a1,1\nc1,a1,3\nc1,a2,0\nc2,a1,2\nc2,a2,4\n").unwrap();
        let err = to_empirical_instance(&clean(&t).0).unwrap_err().to_string();
        assert!(err.contains("a1, a2"), "{err}");
    }

    #[test]
    fn pools_example_means() {
        // pools {1,3},{2},{0},{4}: arm means [2,0] and [2,4], global (1,3).
        // Client 1 ties its two arms, so validation refuses the instance.
        let t = csv_table("client,arm,rating\nc1,a1,1\nc1,a1,3\nc1,a2,2\nc2,a1,0\nc2,a2,4\n").unwrap();
        let err = to_empirical_instance(&t).unwrap_err().to_string();
        assert!(err.contains("local best of client 1 not unique"), "{err}");
        let pool = |v: &[f64]| Pool::new(v.to_vec()).unwrap();
        let inst = ProblemInstance::empirical(vec![
            vec![pool(&[1.0, 3.0]), pool(&[0.0])],
            vec![pool(&[2.0]), pool(&[4.0])],
        ])
        .unwrap();
        assert_eq!(inst.means(), &[vec![2.0, 0.0], vec![2.0, 4.0]]);
        assert_eq!(inst.global_means(), vec![1.0, 3.0]);
    }

    #[test]
    fn builds_validated_instance() {
        let t = csv_table("client,arm,rating\nc1,a1,1\nc1,a1,3\nc1,a2,1.5\nc2,a1,0\nc2,a2,4\nc3,a1,5\n").unwrap();
        let (inst, summary) = build_instance(&t).unwrap();
        assert_eq!(summary.removed_clients, vec!["c3"]);
        assert_eq!(inst.means(), &[vec![2.0, 0.0], vec![1.5, 4.0]]);
        assert_eq!(summary.global_best, "a2");
        assert_eq!(summary.local_best, vec!["a1", "a2"]);
        assert_eq!(summary.pool_sizes, vec![vec![2, 1], vec![1, 1]]);
    }
}
