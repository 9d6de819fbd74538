//! Classic rank aggregators and the [`Aggregator`] registry shared with the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::perm::{factorial, Permutation, VoterProfile, MAX_CANTOR_M};
use crate::tournament::{tournament_greedy, TournamentGraph};

/// Highest-weight voter's permutation; ties go to the lowest voter index.
pub fn dictator(profile: &VoterProfile) -> Permutation {
    let mut best = &profile.voters()[0];
    for v in &profile.voters()[1..] {
        if v.weight > best.weight {
            best = v;
        }
    }
    best.perm.clone()
}

/// Sorts items by normalized-weight average position, ascending.
pub fn borda(profile: &VoterProfile) -> Permutation {
    let m = profile.m();
    let mut score = vec![0.0; m];
    for (v, w) in profile.voters().iter().zip(profile.normalized_weights()) {
        for (k, &it) in v.perm.items().iter().enumerate() {
            score[it] += w * k as f64;
        }
    }
    sort_by_score(score, false)
}

/// Lehmer-code aggregation.
///
/// Each voter is encoded on its ranking vector: the digit of item `i` is the
/// number of items `j < i` placed after `i`, so it lies in `0..=i`. Every
/// digit is replaced by its weighted mode across voters (ties to the smaller
/// digit) and the code is decoded back to a permutation.
pub fn lehmer(profile: &VoterProfile) -> Permutation {
    let m = profile.m();
    let codes: Vec<Vec<usize>> = profile.perms().map(ranking_code).collect();
    let weights = profile.normalized_weights();
    let mut mass = vec![0.0; m];
    let mut digits = Vec::with_capacity(m);
    for i in 0..m {
        mass[..=i].iter_mut().for_each(|x| *x = 0.0);
        for (code, &w) in codes.iter().zip(&weights) {
            mass[code[i]] += w;
        }
        let mut best = 0;
        for d in 1..=i {
            if mass[d] > mass[best] {
                best = d;
            }
        }
        digits.push(best);
    }
    decode_ranking_code(&digits)
}

/// `code[i] = |{j < i : pos(j) > pos(i)}|` over the item -> position map.
pub fn ranking_code(p: &Permutation) -> Vec<usize> {
    let pos = p.inverse();
    (0..pos.len())
        .map(|i| pos[..i].iter().filter(|&&pj| pj > pos[i]).count())
        .collect()
}

/// Inverse of [`ranking_code`]; requires `code[i] <= i`.
pub fn decode_ranking_code(code: &[usize]) -> Permutation {
    let mut order: Vec<usize> = Vec::with_capacity(code.len());
    for (i, &c) in code.iter().enumerate() {
        assert!(c <= i, "ranking-code digit {c} exceeds {i}");
        // Exactly `c` of the items placed so far must end up after `i`.
        order.insert(order.len() - c, i);
    }
    Permutation::new(order).expect("insertion visits every item once")
}

/// Copeland's method with weighted strict majority.
///
/// `i` beats `j` when the voters ranking `i` first carry more than half the
/// total weight; an exact half relates neither way.
pub fn copeland(profile: &VoterProfile) -> Permutation {
    let graph = TournamentGraph::build(profile);
    copeland_from_graph(&graph)
}

pub(crate) fn copeland_from_graph(graph: &TournamentGraph) -> Permutation {
    let m = graph.m();
    let wins: Vec<f64> = (0..m)
        .map(|i| (0..m).filter(|&j| j != i && graph.has_edge(i, j)).count() as f64)
        .collect();
    sort_by_score(wins, true)
}

/// Decodes the rounded weighted mean of the voters' Cantor codes. Halves
/// round down.
pub fn average_encode(profile: &VoterProfile) -> Result<Permutation> {
    let m = profile.m();
    if m > MAX_CANTOR_M {
        return Err(domain(format!("average_encode needs m <= {MAX_CANTOR_M}, got {m}")));
    }
    let mut mean = 0.0;
    for (v, w) in profile.voters().iter().zip(profile.normalized_weights()) {
        mean += w * v.perm.cantor_encode()? as f64;
    }
    let floor = mean.floor();
    let rounded = if mean - floor > 0.5 { floor + 1.0 } else { floor };
    let max_code = factorial(m) - 1;
    let code = (rounded.max(0.0) as u64).min(max_code);
    Permutation::cantor_decode(code, m)
}

/// Stable sort of item ids by score; equal scores keep the smaller id first.
fn sort_by_score(score: Vec<f64>, descending: bool) -> Permutation {
    let mut items: Vec<usize> = (0..score.len()).collect();
    items.sort_by(|&a, &b| {
        let ord = score[a].total_cmp(&score[b]);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    Permutation::new(items).expect("sorted ids form a permutation")
}

/// Every aggregation rule available by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Dictator,
    Borda,
    Lehmer,
    Copeland,
    AverageEncode,
    TournamentGreedy,
}

impl Aggregator {
    pub const ALL: [Aggregator; 6] = [
        Aggregator::Dictator,
        Aggregator::Borda,
        Aggregator::Lehmer,
        Aggregator::Copeland,
        Aggregator::AverageEncode,
        Aggregator::TournamentGreedy,
    ];

    /// The rules compared in the efficiency benchmarks.
    pub const BENCHMARKED: [Aggregator; 5] = [
        Aggregator::Dictator,
        Aggregator::Copeland,
        Aggregator::Lehmer,
        Aggregator::Borda,
        Aggregator::TournamentGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Dictator => "dictator",
            Aggregator::Borda => "borda",
            Aggregator::Lehmer => "lehmer",
            Aggregator::Copeland => "copeland",
            Aggregator::AverageEncode => "average_encode",
            Aggregator::TournamentGreedy => "tournament_greedy",
        }
    }

    pub fn aggregate(self, profile: &VoterProfile) -> Result<Permutation> {
        Ok(match self {
            Aggregator::Dictator => dictator(profile),
            Aggregator::Borda => borda(profile),
            Aggregator::Lehmer => lehmer(profile),
            Aggregator::Copeland => copeland(profile),
            Aggregator::AverageEncode => average_encode(profile)?,
            Aggregator::TournamentGreedy => tournament_greedy(profile),
        })
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| domain(format!("unknown aggregator {s:?}")))
    }
}
