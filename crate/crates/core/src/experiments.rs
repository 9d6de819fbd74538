//! Seeded offline experiments: efficiency/fairness benchmarks, weak-PO
//! diversity analysis, simplex sweeps and the ratings-dataset protocol.
//!
//! Trials run in parallel on per-trial RNG streams and are reduced in trial
//! order, so results do not depend on the thread count.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Aggregator;
use crate::benchgen::{gen_profile, random_permutation, sample_voters, trial_rng, BenchmarkConfig, WeightMode};
use crate::error::{domain, Result};
use crate::metrics::{diversity, precision, recall, weak_po, weighted_distances};
use crate::perm::{factorial, kendall_tau, Permutation, VoterProfile};

pub const METRICS_CSV_HEADER: &str =
    "aggregator,n,m,weight_mode,efficiency_mean,fairness_mean,diversity,precision,recall,samples,seed";

/// One row of the metrics CSV. Columns an experiment does not measure stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub aggregator: Aggregator,
    pub n: usize,
    pub m: usize,
    pub weight_mode: String,
    pub efficiency_mean: Option<f64>,
    pub fairness_mean: Option<f64>,
    pub diversity: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.aggregator,
            r.n,
            r.m,
            r.weight_mode,
            opt(r.efficiency_mean),
            opt(r.fairness_mean),
            opt(r.diversity),
            opt(r.precision),
            opt(r.recall),
            r.samples,
            r.seed
        )
        .unwrap();
    }
    out
}

/// Running means for one aggregator across trials.
///
/// Efficiency is the unweighted mean distance to the inputs. Fairness is
/// reported as the largest, over voter slots, of the trial-averaged
/// normalized-weight distance `w_i * d(p, p_i)`.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    trials: usize,
    efficiency_sum: f64,
    slot_sums: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            trials: 0,
            efficiency_sum: 0.0,
            slot_sums: vec![0.0; n],
        }
    }

    pub fn add(&mut self, efficiency: f64, weighted: &[f64]) {
        self.trials += 1;
        self.efficiency_sum += efficiency;
        for (s, &x) in self.slot_sums.iter_mut().zip(weighted) {
            *s += x;
        }
    }

    pub fn efficiency_mean(&self) -> f64 {
        self.efficiency_sum / self.trials as f64
    }

    pub fn fairness_mean(&self) -> f64 {
        self.slot_sums
            .iter()
            .map(|s| s / self.trials as f64)
            .fold(0.0, f64::max)
    }
}

/// Unweighted mean KTD from `p` to the profile's permutations.
pub fn unweighted_efficiency(profile: &VoterProfile, p: &Permutation) -> Result<f64> {
    let mut total = 0.0;
    for q in profile.perms() {
        total += kendall_tau(p, q)?;
    }
    Ok(total / profile.n() as f64)
}

struct TrialScore {
    efficiency: f64,
    weighted: Vec<f64>,
}

fn score_profile(profile: &VoterProfile, algos: &[Aggregator]) -> Result<Vec<TrialScore>> {
    algos
        .iter()
        .map(|a| {
            let out = a.aggregate(profile)?;
            Ok(TrialScore {
                efficiency: unweighted_efficiency(profile, &out)?,
                weighted: weighted_distances(profile, &out)?,
            })
        })
        .collect()
}

fn reduce_scores(n: usize, algos: &[Aggregator], per_trial: Vec<Vec<TrialScore>>) -> Vec<MetricAccumulator> {
    let mut acc = vec![MetricAccumulator::new(n); algos.len()];
    for trial in per_trial {
        for (a, s) in acc.iter_mut().zip(trial) {
            a.add(s.efficiency, &s.weighted);
        }
    }
    acc
}

/// Efficiency / fairness benchmark on random profiles.
pub fn run_bench(config: &BenchmarkConfig, algos: &[Aggregator]) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let profile = gen_profile(config, &mut config.trial_rng(t))?;
            score_profile(&profile, algos)
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = reduce_scores(config.n, algos, per_trial);
    Ok(algos
        .iter()
        .zip(acc)
        .map(|(&aggregator, a)| MetricsRow {
            aggregator,
            n: config.n,
            m: config.m,
            weight_mode: config.weight_mode.name().to_string(),
            efficiency_mean: Some(a.efficiency_mean()),
            fairness_mean: Some(a.fairness_mean()),
            diversity: None,
            precision: None,
            recall: None,
            samples: config.trials,
            seed: config.seed,
        })
        .collect())
}

/// Settings for the diversity / weak-PO precision-recall experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPoConfig {
    pub m: usize,
    pub n: usize,
    /// Weight vectors sampled per aggregator.
    pub samples: usize,
    /// Extra uniformly random permutations added to the pool. `None` means
    /// `10 * samples`. Ignored for `m <= 7`, where the pool is every permutation.
    pub pool_extra: Option<usize>,
    /// Independent input profiles; rows report means over them.
    pub instances: usize,
    pub seed: u64,
}

/// Per-aggregator outcome on one input profile.
#[derive(Debug, Clone)]
pub struct WeakPoOutcome {
    pub aggregator: Aggregator,
    pub distinct: usize,
    pub diversity: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Result of one weak-PO instance.
#[derive(Debug, Clone)]
pub struct WeakPoInstance {
    pub inputs: Vec<Permutation>,
    pub pool_size: usize,
    pub pareto_size: usize,
    pub outcomes: Vec<WeakPoOutcome>,
}

/// Pool: every sampled output of every aggregator, the inputs, and random
/// permutations (all `m!` permutations when `m <= 7`).
pub fn run_weakpo_instance(
    config: &WeakPoConfig,
    inputs: &[Permutation],
    algos: &[Aggregator],
    instance: u64,
) -> Result<WeakPoInstance> {
    let m = config.m;
    let stream = |k: u64| trial_rng(config.seed, (instance << 8) | k);
    let diversities = algos
        .par_iter()
        .enumerate()
        .map(|(k, &a)| diversity(a, inputs, config.samples, &mut stream(k as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut pool: BTreeSet<Permutation> = inputs.iter().cloned().collect();
    for d in &diversities {
        pool.extend(d.outputs.iter().cloned());
    }
    if m <= 7 {
        pool.extend((0..factorial(m)).map(|c| Permutation::cantor_decode(c, m).expect("code < m!")));
    } else {
        let extra = config.pool_extra.unwrap_or(10 * config.samples);
        let mut rng = stream(255);
        pool.extend((0..extra).map(|_| random_permutation(m, &mut rng)));
    }
    let set = weak_po(inputs, pool)?;
    let pool_size = set.pool.len();
    let outcomes = algos
        .iter()
        .zip(diversities)
        .map(|(&aggregator, d)| WeakPoOutcome {
            aggregator,
            distinct: d.distinct(),
            diversity: d.ratio(Some(pool_size)),
            precision: precision(&d.outputs, &set.pareto),
            recall: recall(&d.outputs, &set.pareto),
        })
        .collect();
    Ok(WeakPoInstance {
        inputs: inputs.to_vec(),
        pool_size,
        pareto_size: set.pareto.len(),
        outcomes,
    })
}

/// Draws `instances` random uniform-weight profiles and averages the
/// per-aggregator diversity ratio, precision and recall over them.
pub fn run_weakpo(config: &WeakPoConfig, algos: &[Aggregator]) -> Result<(Vec<MetricsRow>, Vec<WeakPoInstance>)> {
    if config.samples == 0 || config.instances == 0 || config.n < 2 {
        return Err(domain("weak-PO experiment needs samples >= 1, instances >= 1 and n >= 2"));
    }
    let bench = BenchmarkConfig {
        m: config.m,
        n: config.n,
        weight_mode: WeightMode::Uniform,
        trials: config.instances,
        seed: config.seed,
    };
    bench.validate()?;
    let mut instances = Vec::with_capacity(config.instances);
    for t in 0..config.instances {
        let profile = gen_profile(&bench, &mut bench.trial_rng(t))?;
        let inputs: Vec<Permutation> = profile.perms().cloned().collect();
        instances.push(run_weakpo_instance(config, &inputs, algos, t as u64)?);
    }
    let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
        let vals: Vec<f64> = xs.into_iter().flatten().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let rows = algos
        .iter()
        .enumerate()
        .map(|(k, &aggregator)| MetricsRow {
            aggregator,
            n: config.n,
            m: config.m,
            weight_mode: "random".to_string(),
            efficiency_mean: None,
            fairness_mean: None,
            diversity: mean(instances.iter().map(|i| Some(i.outcomes[k].diversity)).collect()),
            precision: mean(instances.iter().map(|i| i.outcomes[k].precision).collect()),
            recall: mean(instances.iter().map(|i| i.outcomes[k].recall).collect()),
            samples: config.samples,
            seed: config.seed,
        })
        .collect();
    Ok((rows, instances))
}

/// Barycentric lattice `{(i, j, k) / grid : i + j + k = grid}` in
/// lexicographic order of `(i, j)`.
pub fn simplex_lattice(grid: usize) -> Vec<[f64; 3]> {
    let g = grid as f64;
    let mut out = Vec::with_capacity((grid + 1) * (grid + 2) / 2);
    for i in (0..=grid).rev() {
        for j in (0..=grid - i).rev() {
            let k = grid - i - j;
            out.push([i as f64 / g, j as f64 / g, k as f64 / g]);
        }
    }
    out
}

/// Cantor code of every aggregator's output at every lattice point, as CSV
/// `x,y,z,<aggregator>...`.
pub fn simplex_table(targets: &[Permutation], grid: usize, algos: &[Aggregator]) -> Result<String> {
    if targets.len() != 3 {
        return Err(domain(format!("simplex sweep needs 3 target permutations, got {}", targets.len())));
    }
    if grid == 0 {
        return Err(domain("grid must be positive"));
    }
    let base = VoterProfile::uniform(targets.to_vec())?;
    let mut out = String::from("x,y,z");
    for a in algos {
        write!(out, ",{a}").unwrap();
    }
    out.push('\n');
    for w in simplex_lattice(grid) {
        let profile = base.reweighted(&w)?;
        write!(out, "{:.6},{:.6},{:.6}", w[0], w[1], w[2]).unwrap();
        for a in algos {
            write!(out, ",{}", a.aggregate(&profile)?.cantor_encode()?).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Ratings-dataset protocol: average unweighted efficiency over `trials`
/// uniform-weight samples of `voters` permutations.
pub fn run_dataset(
    perms: &[Permutation],
    voters: usize,
    trials: usize,
    seed: u64,
    algos: &[Aggregator],
) -> Result<Vec<MetricsRow>> {
    if trials == 0 {
        return Err(domain("need trials >= 1"));
    }
    let m = perms
        .first()
        .ok_or_else(|| domain("dataset has no complete voters"))?
        .m();
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let profile = sample_voters(perms, voters, &mut trial_rng(seed, t as u64))?;
            score_profile(&profile, algos)
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = reduce_scores(voters, algos, per_trial);
    Ok(algos
        .iter()
        .zip(acc)
        .map(|(&aggregator, a)| MetricsRow {
            aggregator,
            n: voters,
            m,
            weight_mode: "uniform".to_string(),
            efficiency_mean: Some(a.efficiency_mean()),
            fairness_mean: Some(a.fairness_mean()),
            diversity: None,
            precision: None,
            recall: None,
            samples: trials,
            seed,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dominates;

    #[test]
    fn lattice_counts_and_order() {
        let pts = simplex_lattice(3);
        assert_eq!(pts.len(), 10);
        assert_eq!(pts[0], [1.0, 0.0, 0.0]);
        assert_eq!(pts[9], [0.0, 0.0, 1.0]);
        assert!(pts.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(simplex_lattice(200).len(), 201 * 202 / 2);
    }

    #[test]
    fn simplex_table_shape() {
        let targets: Vec<Permutation> = ["0,1,2", "2,1,0", "1,0,2"].iter().map(|s| s.parse().unwrap()).collect();
        let table = simplex_table(&targets, 3, &[Aggregator::Dictator, Aggregator::TournamentGreedy]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "x,y,z,dictator,tournament_greedy");
        assert_eq!(lines.len(), 11);
        // Vertex (1,0,0): every rule returns the first target, Cantor code 0.
        assert_eq!(lines[1], "1.000000,0.000000,0.000000,0,0");
        assert!(simplex_table(&targets[..2], 3, &[Aggregator::Borda]).is_err());
    }

    #[test]
    fn bench_does_not_depend_on_thread_count() {
        let config = BenchmarkConfig {
            m: 6,
            n: 4,
            weight_mode: WeightMode::Random,
            trials: 300,
            seed: 9,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_bench(&config, &Aggregator::BENCHMARKED).unwrap())
        };
        assert_eq!(run(1), run(4));
        let csv = metrics_csv(&run(2));
        assert!(csv.starts_with(METRICS_CSV_HEADER));
        assert!(csv.lines().nth(1).unwrap().contains(",,,,300,9"));
    }

    #[test]
    fn weakpo_recall_matches_exhaustive_oracle() {
        let config = WeakPoConfig {
            m: 4,
            n: 3,
            samples: 300,
            pool_extra: None,
            instances: 4,
            seed: 5,
        };
        let algos = Aggregator::BENCHMARKED;
        let (rows, instances) = run_weakpo(&config, &algos).unwrap();
        let all: Vec<Permutation> = (0..24).map(|c| Permutation::cantor_decode(c, 4).unwrap()).collect();
        let mut recall_sum = vec![0.0; algos.len()];
        for (t, inst) in instances.iter().enumerate() {
            assert_eq!(inst.pool_size, 24);
            let counts = |p: &Permutation| -> Vec<usize> {
                inst.inputs
                    .iter()
                    .map(|q| {
                        let (pp, qq) = (p.inverse(), q.inverse());
                        (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j)))
                            .filter(|&(i, j)| (pp[i] < pp[j]) != (qq[i] < qq[j]))
                            .count()
                    })
                    .collect()
            };
            let pareto: BTreeSet<Permutation> = all
                .iter()
                .filter(|p| !all.iter().any(|q| dominates(&counts(q), &counts(p))))
                .cloned()
                .collect();
            assert_eq!(inst.pareto_size, pareto.len());
            for (k, &a) in algos.iter().enumerate() {
                let mut rng = trial_rng(config.seed, ((t as u64) << 8) | k as u64);
                let outputs = diversity(a, &inst.inputs, config.samples, &mut rng).unwrap().outputs;
                let hits = outputs.intersection(&pareto).count() as f64;
                assert_eq!(inst.outcomes[k].recall, Some(hits / pareto.len() as f64));
                recall_sum[k] += hits / pareto.len() as f64;
            }
        }
        for (row, sum) in rows.iter().zip(recall_sum) {
            assert!((row.recall.unwrap() - sum / 4.0).abs() < 1e-12);
            assert_eq!(row.precision.map(|p| p <= 1.0), Some(true));
        }
        let dictator = rows.iter().find(|r| r.aggregator == Aggregator::Dictator).unwrap();
        assert_eq!(dictator.precision, Some(1.0));
    }

    #[test]
    fn dataset_protocol_on_fixture() {
        let table = crate::benchgen::synthetic_ratings(200, 10, 0);
        let perms: Vec<Permutation> = crate::benchgen::ratings_to_permutations(&table)
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let rows = run_dataset(&perms, 50, 50, 0, &[Aggregator::Borda, Aggregator::TournamentGreedy]).unwrap();
        assert_eq!(rows[0].m, 10);
        assert!(rows[1].efficiency_mean.unwrap() <= rows[0].efficiency_mean.unwrap());
        assert!(run_dataset(&perms, perms.len() + 1, 2, 0, &[Aggregator::Borda]).is_err());
        assert!(run_dataset(&[], 1, 2, 0, &[Aggregator::Borda]).is_err());
    }
}
