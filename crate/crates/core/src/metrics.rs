//! Kendall-tau quality metrics: Efficiency, Fairness, Diversity, and
//! Precision / Recall against the weak Pareto-optimal set of an observed pool.

use std::collections::BTreeSet;

use rand::Rng;

use crate::baselines::Aggregator;
use crate::error::{check_dim, domain, Result};
use crate::perm::{discordant_pairs, kendall_tau, Permutation, VoterProfile};

/// Distances `d(p, p_i)` of one candidate to every input permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct KtdVector(pub Vec<f64>);

impl KtdVector {
    pub fn new<'a>(inputs: impl IntoIterator<Item = &'a Permutation>, p: &Permutation) -> Result<Self> {
        inputs
            .into_iter()
            .map(|q| kendall_tau(p, q))
            .collect::<Result<Vec<_>>>()
            .map(KtdVector)
    }

    /// Strict coordinate-wise dominance: `<=` everywhere and `<` somewhere.
    pub fn dominates(&self, other: &KtdVector) -> bool {
        dominates(&self.0, &other.0)
    }
}

pub fn dominates<T: PartialOrd>(a: &[T], b: &[T]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

/// `(1/n) * sum_i w_i * d(p, p_i)` with the profile's stored weights.
pub fn efficiency(profile: &VoterProfile, p: &Permutation) -> Result<f64> {
    let mut total = 0.0;
    for v in profile.voters() {
        total += v.weight * kendall_tau(p, &v.perm)?;
    }
    Ok(total / profile.n() as f64)
}

/// `max_i w_i * d(p, p_i)` with weights normalized to sum to one.
pub fn fairness(profile: &VoterProfile, p: &Permutation) -> Result<f64> {
    Ok(weighted_distances(profile, p)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Per-voter `w_i * d(p, p_i)` with normalized weights.
pub fn weighted_distances(profile: &VoterProfile, p: &Permutation) -> Result<Vec<f64>> {
    profile
        .voters()
        .iter()
        .zip(profile.normalized_weights())
        .map(|(v, w)| Ok(w * kendall_tau(p, &v.perm)?))
        .collect()
}

/// Distinct outputs of an aggregator over random weight vectors.
#[derive(Debug, Clone)]
pub struct Diversity {
    pub outputs: BTreeSet<Permutation>,
    pub samples: usize,
}

impl Diversity {
    pub fn distinct(&self) -> usize {
        self.outputs.len()
    }

    /// Distinct count over the pool size when given, else over the sample count.
    pub fn ratio(&self, pool_size: Option<usize>) -> f64 {
        self.distinct() as f64 / pool_size.unwrap_or(self.samples) as f64
    }
}

/// Runs `aggregator` on `inputs` with `samples` weight vectors drawn
/// uniformly from `[0, 1]^n` and normalized.
pub fn diversity<R: Rng + ?Sized>(
    aggregator: Aggregator,
    inputs: &[Permutation],
    samples: usize,
    rng: &mut R,
) -> Result<Diversity> {
    if inputs.len() < 2 {
        return Err(domain("diversity needs at least two input permutations"));
    }
    let mut outputs = BTreeSet::new();
    let mut w = vec![0.0; inputs.len()];
    let mut profile = VoterProfile::uniform(inputs.to_vec())?;
    for _ in 0..samples {
        random_simplex_weights(rng, &mut w);
        profile = profile.reweighted(&w)?;
        outputs.insert(aggregator.aggregate(&profile)?);
    }
    Ok(Diversity { outputs, samples })
}

/// Fills `w` with i.i.d. uniform draws normalized to sum to one.
pub fn random_simplex_weights<R: Rng + ?Sized>(rng: &mut R, w: &mut [f64]) {
    loop {
        w.iter_mut().for_each(|x| *x = rng.random::<f64>());
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
            return;
        }
    }
}

/// The observed pool and its non-dominated subset.
#[derive(Debug, Clone)]
pub struct WeakPoSet {
    pub pool: Vec<Permutation>,
    pub pareto: BTreeSet<Permutation>,
}

impl WeakPoSet {
    pub fn contains(&self, p: &Permutation) -> bool {
        self.pareto.contains(p)
    }
}

/// Members of `pool` not strictly dominated, on their KTD vectors against
/// `inputs`, by any other pool member. Duplicates in `pool` are merged.
pub fn weak_po(inputs: &[Permutation], pool: impl IntoIterator<Item = Permutation>) -> Result<WeakPoSet> {
    let m = inputs
        .first()
        .ok_or_else(|| domain("weak PO needs at least one input permutation"))?
        .m();
    let pool: Vec<Permutation> = pool.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    // Raw discordant-pair counts order exactly like the normalized distances.
    let mut vectors = Vec::with_capacity(pool.len());
    for p in &pool {
        check_dim(m, p.m())?;
        let v = inputs
            .iter()
            .map(|q| discordant_pairs(p, q))
            .collect::<Result<Vec<u64>>>()?;
        vectors.push(v);
    }

    // Anything dominating a point has a strictly smaller coordinate sum, so
    // after sorting by sum it suffices to test against the skyline found so far.
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by_key(|&i| vectors[i].iter().sum::<u64>());
    let mut skyline: Vec<usize> = Vec::new();
    for &i in &order {
        if !skyline.iter().any(|&s| dominates(&vectors[s], &vectors[i])) {
            skyline.push(i);
        }
    }
    let pareto = skyline.into_iter().map(|i| pool[i].clone()).collect();
    Ok(WeakPoSet { pool, pareto })
}

/// `|S ∩ P| / |S|`, absent when `S` is empty.
pub fn precision(outputs: &BTreeSet<Permutation>, pareto: &BTreeSet<Permutation>) -> Option<f64> {
    (!outputs.is_empty()).then(|| outputs.intersection(pareto).count() as f64 / outputs.len() as f64)
}

/// `|S ∩ P| / |P|`, absent when `P` is empty.
pub fn recall(outputs: &BTreeSet<Permutation>, pareto: &BTreeSet<Permutation>) -> Option<f64> {
    (!pareto.is_empty()).then(|| outputs.intersection(pareto).count() as f64 / pareto.len() as f64)
}
