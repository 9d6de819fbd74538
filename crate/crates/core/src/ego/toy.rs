//! Toy reward landscape over the 2-simplex: the reward of a weight vector is
//! a fixed value attached to the permutation TournamentGreedy returns for
//! three fixed targets of five items.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;

use super::{check_simplex, ego_fit, Dataset, EgoConfig, Sample};
use crate::benchgen::{random_permutation, trial_rng};
use crate::error::{domain, Result};
use crate::experiments::simplex_lattice;
use crate::perm::{Permutation, VoterProfile};
use crate::tournament::tournament_greedy;

pub const TOY_M: usize = 5;
pub const TOY_GRID: usize = 200;
pub const TOY_SEED: u64 = 0;
pub const VERTEX_REWARDS: [f64; 3] = [0.3, 0.6, 0.4];

/// Reward of non-vertex regions falls linearly with centroid distance from
/// the peak region, reaching the floor at this distance.
const FALLOFF: f64 = 0.8;
const FLOOR: f64 = 0.05;

#[derive(Debug, Clone)]
struct Region {
    count: usize,
    centroid: [f64; 3],
    vertex: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ToyEnvironment {
    targets: Vec<Permutation>,
    rewards: BTreeMap<Permutation, f64>,
    peak: Permutation,
}

impl ToyEnvironment {
    /// The shared fixture built from [`TOY_SEED`] on a [`TOY_GRID`] lattice.
    pub fn fixture() -> &'static ToyEnvironment {
        static FIXTURE: OnceLock<ToyEnvironment> = OnceLock::new();
        FIXTURE.get_or_init(|| ToyEnvironment::build(TOY_SEED, TOY_GRID).expect("toy fixture builds"))
    }

    /// Draws three distinct targets from `seed`, enumerates the outputs over
    /// the `grid` lattice and assigns rewards: the vertex outputs get
    /// [`VERTEX_REWARDS`], the largest region touching no vertex gets 1.0 and
    /// every other region decays with distance from it.
    pub fn build(seed: u64, grid: usize) -> Result<Self> {
        if grid < 2 {
            return Err(domain("toy grid needs at least two divisions"));
        }
        let mut rng = trial_rng(seed, 0);
        let mut targets: Vec<Permutation> = Vec::with_capacity(3);
        while targets.len() < 3 {
            let p = random_permutation(TOY_M, &mut rng);
            if !targets.contains(&p) {
                targets.push(p);
            }
        }

        let mut regions: BTreeMap<Permutation, Region> = BTreeMap::new();
        for point in simplex_lattice(grid) {
            let out = tournament_greedy(&VoterProfile::from_parts(targets.clone(), &point)?);
            let r = regions.entry(out).or_insert(Region {
                count: 0,
                centroid: [0.0; 3],
                vertex: None,
            });
            r.count += 1;
            for (c, x) in r.centroid.iter_mut().zip(point) {
                *c += x;
            }
            if let Some(v) = point.iter().position(|&x| x == 1.0) {
                r.vertex = Some(v);
            }
        }
        for r in regions.values_mut() {
            let n = r.count as f64;
            r.centroid.iter_mut().for_each(|c| *c /= n);
        }

        let (peak, peak_region) = regions
            .iter()
            .filter(|(_, r)| r.vertex.is_none())
            .max_by(|a, b| a.1.count.cmp(&b.1.count).then(b.0.cmp(a.0)))
            .ok_or_else(|| domain("every output region touches a vertex"))?;
        let (peak, center) = (peak.clone(), peak_region.centroid);

        let rewards = regions
            .iter()
            .map(|(p, r)| {
                let value = match r.vertex {
                    Some(v) => VERTEX_REWARDS[v],
                    None if *p == peak => 1.0,
                    None => {
                        let d = r.centroid.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        let v = 0.95 - (0.95 - FLOOR) * (d / FALLOFF).min(1.0);
                        (v * 1000.0).round() / 1000.0
                    }
                };
                (p.clone(), value)
            })
            .collect();
        Ok(Self { targets, rewards, peak })
    }

    pub fn targets(&self) -> &[Permutation] {
        &self.targets
    }

    /// Reward table over every output reachable on the build lattice.
    pub fn rewards(&self) -> &BTreeMap<Permutation, f64> {
        &self.rewards
    }

    /// The output carrying the global maximum.
    pub fn peak(&self) -> &Permutation {
        &self.peak
    }

    pub fn output(&self, weights: &[f64]) -> Result<Permutation> {
        if weights.len() != 3 {
            return Err(domain(format!("toy weights need 3 entries, got {}", weights.len())));
        }
        check_simplex(weights)?;
        Ok(tournament_greedy(&VoterProfile::from_parts(self.targets.clone(), weights)?))
    }

    /// Outputs never reached on the build lattice score 0.
    pub fn reward(&self, weights: &[f64]) -> Result<f64> {
        Ok(self.rewards.get(&self.output(weights)?).copied().unwrap_or(0.0))
    }

    /// Mean reward of the three vertices; labels are measured against it.
    pub fn baseline(&self) -> f64 {
        VERTEX_REWARDS.iter().sum::<f64>() / 3.0
    }

    /// CSV `permutation,reward` with the permutation in its `a,b,c` text form.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("permutation,reward\n");
        for (p, r) in &self.rewards {
            writeln!(s, "\"{p}\",{r}").unwrap();
        }
        s
    }
}

/// One queried point of the toy loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStep {
    pub round: usize,
    pub weights: Vec<f64>,
    pub reward: f64,
}

/// Settings used by the toy loop: no holdout (the dataset starts at three
/// points) and otherwise the module defaults.
pub fn toy_config(alpha: f64) -> EgoConfig {
    EgoConfig {
        alpha,
        epochs: 300,
        evaluator_lr: 3e-3,
        generator_steps: 300,
        generator_lr: 1e-2,
        holdout_fraction: 0.0,
        ..EgoConfig::default()
    }
}

/// Seeds the dataset with the three vertices, then per round refits the
/// generator, queries the landscape at its output and logs the result.
pub fn run_toy_loop<R: Rng + ?Sized>(
    env: &ToyEnvironment,
    config: &EgoConfig,
    rounds: usize,
    rng: &mut R,
) -> Result<Vec<ToyStep>> {
    let base = env.baseline();
    let label = |r: f64| (r - base).clamp(-1.0, 1.0);
    let mut data = Dataset::new();
    for v in 0..3 {
        let mut w = vec![0.0; 3];
        w[v] = 1.0;
        let r = env.reward(&w)?;
        data.push(Sample::new(Vec::new(), w, Vec::new(), label(r), 1)?)?;
    }
    let mut trace = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let fit = ego_fit(&data, config, rng)?;
        let weights = fit.policy.act(&[])?.weights;
        let reward = env.reward(&weights)?;
        data.push(Sample::new(Vec::new(), weights.clone(), Vec::new(), label(reward), 1)?)?;
        trace.push(ToyStep { round, weights, reward });
    }
    Ok(trace)
}

pub fn best_reward(trace: &[ToyStep]) -> f64 {
    trace.iter().map(|s| s.reward).fold(f64::NEG_INFINITY, f64::max)
}

/// CSV `seed,alpha,round,x,y,z,reward`.
pub fn toy_trace_csv(runs: &[(u64, f64, Vec<ToyStep>)]) -> String {
    let mut s = String::from("seed,alpha,round,x,y,z,reward\n");
    for (seed, alpha, trace) in runs {
        for t in trace {
            writeln!(
                s,
                "{seed},{alpha},{},{:.9},{:.9},{:.9},{}",
                t.round, t.weights[0], t.weights[1], t.weights[2], t.reward
            )
            .unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_rewards() {
        let env = ToyEnvironment::fixture();
        assert_eq!(env.reward(&[0.0, 1.0, 0.0]).unwrap(), 0.6);
        assert_eq!(env.reward(&[1.0, 0.0, 0.0]).unwrap(), 0.3);
        assert_eq!(env.reward(&[0.0, 0.0, 1.0]).unwrap(), 0.4);
        assert!(env.reward(&[0.5, 0.6, 0.0]).is_err());
        assert!(env.reward(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn grid_maximum_is_interior() {
        let env = ToyEnvironment::fixture();
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for p in simplex_lattice(TOY_GRID) {
            let r = env.reward(&p).unwrap();
            if r > best.0 {
                best = (r, p);
            }
        }
        assert_eq!(best.0, 1.0);
        assert!(best.1.iter().all(|&x| x < 1.0));
        assert!(env.rewards().values().all(|r| (0.0..=1.0).contains(r)));
        assert_eq!(env.rewards().values().filter(|&&r| r == 1.0).count(), 1);
    }

    #[test]
    fn reward_depends_only_on_output() {
        let env = ToyEnvironment::fixture();
        let a = [0.1, 0.8, 0.1];
        let b = [0.2, 0.7, 0.1];
        assert_eq!(env.output(&a).unwrap(), env.output(&b).unwrap());
        assert_eq!(env.reward(&a).unwrap(), env.reward(&b).unwrap());
    }

    #[test]
    fn fixture_is_reproducible() {
        let again = ToyEnvironment::build(TOY_SEED, TOY_GRID).unwrap();
        assert_eq!(again.rewards(), ToyEnvironment::fixture().rewards());
    }
}
