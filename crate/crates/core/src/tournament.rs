//! Weighted tournaments and the TournamentGreedy aggregator.
//!
//! `margin[i][j]` is the weighted net number of voters placing `i` before
//! `j`. An item beats every opponent it has a positive margin against.
//! The greedy pass repeatedly appends the remaining item with the highest
//! expected-cost score
//!
//! ```text
//! score(i) = sqrt(|S| / (|alive| - 1)) * (sum_{j in S} sqrt(margin[i][j]) - sum_{j in O} sqrt(-margin[i][j]))
//! ```
//!
//! where `S` / `O` are the alive opponents with positive / negative margin.
//! Zero margins count for neither set. Ties go to the smaller item id.

use crate::error::{check_dim, domain, Result};
use crate::perm::{Permutation, VoterProfile};

/// Antisymmetric pairwise-margin matrix, row-major `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TournamentGraph {
    m: usize,
    margin: Vec<f64>,
}

impl TournamentGraph {
    /// Builds the tournament of `profile` using its stored weights. `O(n m^2)`.
    pub fn build(profile: &VoterProfile) -> Self {
        let m = profile.m();
        let mut margin = vec![0.0; m * m];
        for voter in profile.voters() {
            add_voter(&mut margin, m, voter.perm.items(), voter.weight);
        }
        Self { m, margin }
    }

    /// Tournament where voter `k` contributes with weight `weights[k]`.
    pub fn build_with_weights(profile: &VoterProfile, weights: &[f64]) -> Result<Self> {
        check_dim(profile.n(), weights.len())?;
        let m = profile.m();
        let mut margin = vec![0.0; m * m];
        for (voter, &w) in profile.voters().iter().zip(weights) {
            add_voter(&mut margin, m, voter.perm.items(), w);
        }
        Ok(Self { m, margin })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn margin(&self, i: usize, j: usize) -> f64 {
        self.margin[i * self.m + j]
    }

    /// True iff voters net-prefer `i` before `j`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.margin(i, j) > 0.0
    }
}

fn add_voter(margin: &mut [f64], m: usize, items: &[usize], w: f64) {
    if w == 0.0 {
        return;
    }
    for (a, &i) in items.iter().enumerate() {
        for &j in &items[a + 1..] {
            margin[i * m + j] += w;
            margin[j * m + i] -= w;
        }
    }
}

/// Expected-cost score of `i` among the `alive` items.
pub fn greedy_score(graph: &TournamentGraph, alive: &[usize], i: usize) -> Result<f64> {
    if alive.len() < 2 {
        return Err(domain("greedy score needs at least two alive items"));
    }
    if !alive.contains(&i) {
        return Err(domain(format!("item {i} is not alive")));
    }
    Ok(score_row(&graph.margin[i * graph.m..(i + 1) * graph.m], alive, i))
}

fn score_row(row: &[f64], alive: &[usize], i: usize) -> f64 {
    let mut wins = 0usize;
    let mut support = 0.0;
    let mut opposition = 0.0;
    for &j in alive {
        if j == i {
            continue;
        }
        let w = row[j];
        if w > 0.0 {
            wins += 1;
            support += w.sqrt();
        } else if w < 0.0 {
            opposition += (-w).sqrt();
        }
    }
    ((wins as f64) / (alive.len() - 1) as f64).sqrt() * (support - opposition)
}

/// Scores this close count as tied. Sums of square roots that are equal in
/// exact arithmetic can differ in the last bits depending on summation order.
const TIE_EPS: f64 = 1e-12;

/// Index into `alive` of the best-scoring item, ties to the smallest id.
/// `alive` is kept sorted ascending so the first maximum wins.
fn select(margin: &[f64], m: usize, alive: &[usize]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (idx, &i) in alive.iter().enumerate() {
        let s = score_row(&margin[i * m..(i + 1) * m], alive, i);
        if idx == 0 || s > best_score + TIE_EPS * best_score.abs().max(1.0) {
            best_score = s;
            best = idx;
        }
    }
    best
}

/// Greedy front-to-back construction over a fixed tournament.
pub fn greedy_order(graph: &TournamentGraph) -> Permutation {
    let m = graph.m;
    let mut alive: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(m);
    while alive.len() > 1 {
        let idx = select(&graph.margin, m, &alive);
        out.push(alive.remove(idx));
    }
    out.extend(alive);
    Permutation::new(out).expect("greedy order visits every item once")
}

/// TournamentGreedy aggregation of `profile`.
pub fn tournament_greedy(profile: &VoterProfile) -> Permutation {
    greedy_order(&TournamentGraph::build(profile))
}

/// TournamentGreedy with per-voter positional decay: when choosing output
/// position `k` (1-based) voter `v` counts with weight `w_v * decay[v]^k`.
pub fn tournament_greedy_decayed(profile: &VoterProfile, decay: &[f64]) -> Result<Permutation> {
    check_dim(profile.n(), decay.len())?;
    if let Some(g) = decay.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(domain(format!("decay factor {g} outside (0, 1]")));
    }
    let m = profile.m();
    let positions: Vec<Vec<usize>> = profile.perms().map(Permutation::inverse).collect();
    let base: Vec<f64> = profile.weights();
    let mut eff = base.clone();
    let mut margin = vec![0.0; m * m];
    let mut alive: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(m);
    let mut k = 1i32;
    while alive.len() > 1 {
        for ((e, &w), &g) in eff.iter_mut().zip(&base).zip(decay) {
            *e = w * g.powi(k);
        }
        for (a, &i) in alive.iter().enumerate() {
            for &j in &alive[a + 1..] {
                let mut d = 0.0;
                for (pos, &w) in positions.iter().zip(&eff) {
                    if pos[i] < pos[j] {
                        d += w;
                    } else {
                        d -= w;
                    }
                }
                margin[i * m + j] = d;
                margin[j * m + i] = -d;
            }
        }
        let idx = select(&margin, m, &alive);
        out.push(alive.remove(idx));
        k += 1;
    }
    out.extend(alive);
    Ok(Permutation::new(out).expect("greedy order visits every item once"))
}
