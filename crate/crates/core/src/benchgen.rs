//! Random benchmark instances and ratings-table ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::perm::{factorial, Permutation, VoterProfile, MAX_CANTOR_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Every voter weighs 1.
    Uniform,
    /// `w_i ~ U(0, 1]`, normalized to sum to one.
    Random,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::Random => "random",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "random" => Ok(WeightMode::Random),
            _ => Err(domain(format!("unknown weight mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub m: usize,
    pub n: usize,
    pub weight_mode: WeightMode,
    pub trials: usize,
    pub seed: u64,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(domain(format!("need m >= 2, got {}", self.m)));
        }
        if self.n < 1 || self.trials < 1 {
            return Err(domain("need n >= 1 and trials >= 1"));
        }
        if self.m <= MAX_CANTOR_M && (self.n as u64) > factorial(self.m) {
            return Err(domain(format!(
                "cannot draw {} distinct permutations of {} items",
                self.n, self.m
            )));
        }
        Ok(())
    }

    /// Independent RNG stream for one trial.
    pub fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        trial_rng(self.seed, trial as u64)
    }
}

/// Stream `index` of the ChaCha generator keyed by `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniformly random permutation of `0..m`.
pub fn random_permutation<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Permutation {
    use rand::seq::SliceRandom;
    let mut items: Vec<usize> = (0..m).collect();
    items.shuffle(rng);
    Permutation::new(items).expect("shuffle preserves the bijection")
}

/// `n` pairwise-distinct random permutations with weights per `weight_mode`.
pub fn gen_profile<R: Rng + ?Sized>(config: &BenchmarkConfig, rng: &mut R) -> Result<VoterProfile> {
    config.validate()?;
    let cap = 100 * config.n;
    let mut seen = HashSet::with_capacity(config.n);
    let mut perms = Vec::with_capacity(config.n);
    let mut draws = 0;
    while perms.len() < config.n {
        if draws == cap {
            return Err(domain(format!(
                "gave up after {cap} draws looking for {} distinct permutations",
                config.n
            )));
        }
        draws += 1;
        let p = random_permutation(config.m, rng);
        if seen.insert(p.clone()) {
            perms.push(p);
        }
    }
    let weights = match config.weight_mode {
        WeightMode::Uniform => vec![1.0; config.n],
        WeightMode::Random => {
            let raw: Vec<f64> = (0..config.n).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        }
    };
    VoterProfile::from_parts(perms, &weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub voter: u64,
    pub item: usize,
    pub rating: f64,
}

/// Raw `(voter, item, rating)` rows over items `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    rows: Vec<Rating>,
    m: usize,
}

impl RatingsTable {
    /// The item universe is `0..=max item id`.
    pub fn new(rows: Vec<Rating>) -> Result<Self> {
        let m = rows.iter().map(|r| r.item + 1).max().unwrap_or(0);
        Self::with_items(rows, m)
    }

    pub fn with_items(rows: Vec<Rating>, m: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (k, r) in rows.iter().enumerate() {
            if r.item >= m {
                return Err(domain(format!("item {} outside universe of {m}", r.item)));
            }
            if !r.rating.is_finite() {
                return Err(Error::Parse {
                    line: k + 2,
                    msg: format!("non-finite rating {}", r.rating),
                });
            }
            if !seen.insert((r.voter, r.item)) {
                return Err(domain(format!("voter {} rated item {} twice", r.voter, r.item)));
            }
        }
        Ok(Self { rows, m })
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Parses `voter,item,rating` CSV with a header line.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["voter", "item", "rating"] {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header voter,item,rating, got {:?}", headers),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Rating>() {
            let row = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("voter,item,rating\n");
        for r in &self.rows {
            // `{:?}` prints the shortest text that parses back to the same f64.
            writeln!(out, "{},{},{:?}", r.voter, r.item, r.rating).unwrap();
        }
        out
    }
}

/// Voters who rated every item, each ranking items by rating descending
/// (ties by item id), in ascending voter order.
pub fn ratings_to_permutations(table: &RatingsTable) -> Vec<(u64, Permutation)> {
    let mut by_voter: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &table.rows {
        by_voter.entry(r.voter).or_default().push((r.item, r.rating));
    }
    by_voter
        .into_iter()
        .filter(|(_, v)| v.len() == table.m)
        .map(|(voter, mut v)| {
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let perm = Permutation::new(v.into_iter().map(|(item, _)| item).collect())
                .expect("a complete voter covers every item once");
            (voter, perm)
        })
        .collect()
}

/// `k` permutations drawn without replacement, each with weight 1.
pub fn sample_voters<R: Rng + ?Sized>(perms: &[Permutation], k: usize, rng: &mut R) -> Result<VoterProfile> {
    if k == 0 || k > perms.len() {
        return Err(domain(format!("cannot sample {k} voters from {}", perms.len())));
    }
    let picked = index::sample(rng, perms.len(), k)
        .into_iter()
        .map(|i| perms[i].clone())
        .collect();
    VoterProfile::uniform(picked)
}

/// Parses a permutation-list file: one comma-separated permutation per line.
/// Blank lines and `#` comments are skipped.
pub fn parse_permutation_list(text: &str) -> Result<Vec<Permutation>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p: Permutation = line.parse().map_err(|e: Error| Error::Parse {
            line: k + 1,
            msg: match e {
                Error::Parse { msg, .. } => msg,
                other => other.to_string(),
            },
        })?;
        if let Some(first) = out.first() {
            let first: &Permutation = first;
            if first.m() != p.m() {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("expected {} items, got {}", first.m(), p.m()),
                });
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_permutation_list(perms: &[Permutation]) -> String {
    perms.iter().map(|p| format!("{p}\n")).collect()
}

/// Synthetic ratings with shared item appeal, three taste clusters and
/// per-rating noise, rounded to one decimal so ties occur. About 5% of
/// voters skip one item.
pub fn synthetic_ratings(voters: usize, items: usize, seed: u64) -> RatingsTable {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let appeal: Vec<f64> = (0..items).map(|_| 2.0 * normal()).collect();
    let tastes: Vec<Vec<f64>> = (0..3).map(|_| (0..items).map(|_| 1.5 * normal()).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut rows = Vec::with_capacity(voters * items);
    for v in 0..voters {
        let taste = &tastes[rng.random_range(0..tastes.len())];
        let skip = (rng.random::<f64>() < 0.05).then(|| rng.random_range(0..items));
        for j in 0..items {
            if skip == Some(j) {
                continue;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            let raw = (appeal[j] + taste[j] + 2.0 * noise).clamp(-10.0, 10.0);
            rows.push(Rating {
                voter: v as u64,
                item: j,
                rating: (raw * 10.0).round() / 10.0,
            });
        }
    }
    RatingsTable::with_items(rows, items).expect("generated rows are unique and finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn config(m: usize, n: usize, weight_mode: WeightMode) -> BenchmarkConfig {
        BenchmarkConfig {
            m,
            n,
            weight_mode,
            trials: 1,
            seed: 0,
        }
    }

    #[test]
    fn exhausts_small_universe() {
        let prof = gen_profile(&config(3, 6, WeightMode::Uniform), &mut rng(1)).unwrap();
        let set: HashSet<_> = prof.perms().cloned().collect();
        assert_eq!(set.len(), 6);
        assert!(prof.weights().iter().all(|&w| w == 1.0));
        assert!(gen_profile(&config(3, 7, WeightMode::Uniform), &mut rng(1)).is_err());
    }

    #[test]
    fn random_weights_normalized() {
        let prof = gen_profile(&config(8, 10, WeightMode::Random), &mut rng(2)).unwrap();
        assert!((prof.total_weight() - 1.0).abs() < 1e-12);
        assert!(prof.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = config(8, 5, WeightMode::Random);
        let a: Vec<_> = (0..5).map(|t| gen_profile(&c, &mut c.trial_rng(t)).unwrap()).collect();
        let b: Vec<_> = (0..5).map(|t| gen_profile(&c, &mut c.trial_rng(t)).unwrap()).collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    fn row(voter: u64, item: usize, rating: f64) -> Rating {
        Rating { voter, item, rating }
    }

    #[test]
    fn ratings_examples() {
        let table = RatingsTable::new(vec![
            row(7, 0, 5.0),
            row(7, 1, 3.0),
            row(7, 2, 4.0),
            row(8, 0, 1.0),
            row(8, 2, 2.0),
            row(9, 0, 5.0),
            row(9, 1, 5.0),
            row(9, 2, 0.0),
        ])
        .unwrap();
        let perms = ratings_to_permutations(&table);
        assert_eq!(perms.len(), 2);
        assert_eq!(perms[0], (7, Permutation::new(vec![0, 2, 1]).unwrap()));
        assert_eq!(perms[1], (9, Permutation::new(vec![0, 1, 2]).unwrap()));
    }

    #[test]
    fn duplicate_rating_rejected() {
        assert!(RatingsTable::new(vec![row(1, 0, 1.0), row(1, 0, 2.0)]).is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "voter,item,rating\n1,0,2.5\n1,x,3\n";
        match RatingsTable::from_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(RatingsTable::from_csv("a,b,c\n".as_bytes()).is_err());
    }

    #[test]
    fn permutation_list_parsing() {
        let perms = parse_permutation_list("# header\n0,1,2\n\n2,1,0\n").unwrap();
        assert_eq!(perms.len(), 2);
        assert_eq!(write_permutation_list(&perms), "0,1,2\n2,1,0\n");
        match parse_permutation_list("0,1,2\n0,1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sample_voters_bounds() {
        let perms: Vec<_> = (0..5).map(|k| Permutation::cantor_decode(k, 4).unwrap()).collect();
        let all = sample_voters(&perms, 5, &mut rng(3)).unwrap();
        let mut got: Vec<_> = all.perms().cloned().collect();
        got.sort();
        assert_eq!(got, perms);
        assert!(sample_voters(&perms, 6, &mut rng(3)).is_err());
        assert_eq!(
            sample_voters(&perms, 3, &mut rng(4)).unwrap(),
            sample_voters(&perms, 3, &mut rng(4)).unwrap()
        );
    }

    #[test]
    fn bundled_fixture_matches_generator() {
        let text = include_str!("../../../data/synthetic_ratings.csv");
        assert_eq!(text, synthetic_ratings(200, 10, 0).to_csv());
        let table = RatingsTable::from_csv(text.as_bytes()).unwrap();
        let complete = ratings_to_permutations(&table);
        assert!(complete.len() >= 180 && complete.len() < 200);
    }
}
