//! Subcommand arguments and their implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use raego::benchgen::{parse_permutation_list, ratings_to_permutations, trial_rng, RatingsTable};
use raego::ego::toy::{best_reward, run_toy_loop, toy_config, toy_trace_csv, ToyEnvironment};
use raego::experiments::{metrics_csv, run_bench, run_dataset, run_weakpo, simplex_table, WeakPoConfig};
use raego::sim::{policy_rng, report, report_csv, run_comparison, ComparisonConfig, Trace, WarmStartConfig};
use raego::{
    tournament_greedy_decayed, Aggregator, BenchmarkConfig, Policy, SimConfig, SimEnvironment, VoterProfile,
    WeightMode,
};

use crate::manifest::{
    Output, METRICS, PERMUTATION, SIMPLEX, SIM_REPORT, SIM_TRACE, TOY_SUMMARY, TOY_TRACE,
};

/// What a command produced plus the resolved configuration for its manifest.
pub struct Run {
    pub config: serde_json::Value,
    pub outputs: Vec<Output>,
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    s.parse().map_err(|e: raego::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: raego::Error| e.to_string())
}

fn parse_weight_mode(s: &str) -> Result<WeightMode, String> {
    s.parse().map_err(|e: raego::Error| e.to_string())
}

fn read_text(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

fn primary(schema: crate::manifest::Schema, content: String) -> Output {
    Output {
        suffix: None,
        schema,
        content,
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// Permutation-list file, one voter per line; stdin when absent or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "tournament_greedy", value_parser = parse_aggregator)]
    pub algo: Aggregator,
    /// Comma-separated voter weights; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Comma-separated per-voter position decay (tournament_greedy only).
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
}

pub fn aggregate(args: &AggregateArgs) -> Result<Run> {
    let perms = parse_permutation_list(&read_text(args.input.as_deref())?)?;
    ensure!(!perms.is_empty(), "the profile has no voters");
    let weights = args.weights.clone().unwrap_or_else(|| vec![1.0; perms.len()]);
    let profile = VoterProfile::from_parts(perms, &weights)?;
    let out = match &args.gamma {
        Some(gamma) if args.algo == Aggregator::TournamentGreedy => tournament_greedy_decayed(&profile, gamma)?,
        Some(_) => bail!("--gamma applies to tournament_greedy only"),
        None => args.algo.aggregate(&profile)?,
    };
    Ok(Run {
        config: serde_json::to_value(args)?,
        outputs: vec![primary(PERMUTATION, format!("{out}\n"))],
    })
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value = "uniform", value_parser = parse_weight_mode)]
    pub weights: WeightMode,
    #[arg(long, default_value_t = 50_000)]
    pub trials: usize,
    /// Comma-separated aggregator names.
    #[arg(long, value_delimiter = ',', value_parser = parse_aggregator, default_value = "dictator,copeland,lehmer,borda,tournament_greedy")]
    pub algos: Vec<Aggregator>,
}

pub fn bench(args: &BenchArgs, seed: u64) -> Result<Run> {
    let config = BenchmarkConfig {
        m: args.m,
        n: args.n,
        weight_mode: args.weights,
        trials: args.trials,
        seed,
    };
    let rows = run_bench(&config, &args.algos)?;
    Ok(Run {
        config: json!({ "benchmark": config, "algos": args.algos }),
        outputs: vec![primary(METRICS, metrics_csv(&rows))],
    })
}

#[derive(Debug, Args, Serialize)]
pub struct WeakPoArgs {
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Random weight vectors per aggregator.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    /// Random permutations added to the pool when m > 7 (default 10 x samples).
    #[arg(long)]
    pub pool_extra: Option<usize>,
    /// Independent input profiles to average over.
    #[arg(long, default_value_t = 1)]
    pub instances: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_aggregator, default_value = "dictator,copeland,lehmer,borda,tournament_greedy")]
    pub algos: Vec<Aggregator>,
}

pub fn weakpo(args: &WeakPoArgs, seed: u64) -> Result<Run> {
    let config = WeakPoConfig {
        m: args.m,
        n: args.n,
        samples: args.samples,
        pool_extra: args.pool_extra,
        instances: args.instances,
        seed,
    };
    let (rows, _) = run_weakpo(&config, &args.algos)?;
    Ok(Run {
        config: json!({ "weakpo": config, "algos": args.algos }),
        outputs: vec![primary(METRICS, metrics_csv(&rows))],
    })
}

#[derive(Debug, Args, Serialize)]
pub struct SimplexArgs {
    /// Permutation-list file with exactly three permutations.
    #[arg(long)]
    pub targets: PathBuf,
    /// Lattice divisions per edge; `grid` = g gives (g+1)(g+2)/2 points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_aggregator, default_value = "dictator,copeland,lehmer,borda,tournament_greedy")]
    pub algos: Vec<Aggregator>,
}

pub fn simplex(args: &SimplexArgs) -> Result<Run> {
    let targets = parse_permutation_list(&read_text(Some(&args.targets))?)?;
    let table = simplex_table(&targets, args.grid, &args.algos)?;
    Ok(Run {
        config: json!({ "args": args, "targets": targets.iter().map(|p| p.to_string()).collect::<Vec<_>>() }),
        outputs: vec![primary(SIMPLEX, table)],
    })
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Ratings CSV (`voter,item,rating`) or permutation-list file.
    #[arg(long)]
    pub file: PathBuf,
    /// Voters sampled per trial.
    #[arg(long, default_value_t = 50)]
    pub voters: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_aggregator, default_value = "dictator,copeland,lehmer,borda,tournament_greedy")]
    pub algos: Vec<Aggregator>,
}

pub fn dataset(args: &DatasetArgs, seed: u64) -> Result<Run> {
    let text = read_text(Some(&args.file))?;
    let perms = if text.trim_start().starts_with("voter") {
        let table = RatingsTable::from_csv(text.as_bytes())?;
        ratings_to_permutations(&table).into_iter().map(|(_, p)| p).collect()
    } else {
        parse_permutation_list(&text)?
    };
    let rows = run_dataset(&perms, args.voters, args.trials, seed, &args.algos)?;
    Ok(Run {
        config: json!({ "args": args, "complete_voters": perms.len() }),
        outputs: vec![primary(METRICS, metrics_csv(&rows))],
    })
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    /// Comma-separated exploration weights; every seed runs each of them.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub rounds: usize,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
}

pub fn toy(args: &ToyArgs, seed: u64) -> Result<Run> {
    ensure!(!args.alpha.is_empty(), "need at least one --alpha");
    let env = ToyEnvironment::fixture();
    let jobs: Vec<(u64, f64)> = (seed..seed + args.seeds)
        .flat_map(|s| args.alpha.iter().map(move |&a| (s, a)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(s, a)| Ok((s, a, run_toy_loop(env, &toy_config(a), args.rounds, &mut trial_rng(s, 0))?)))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = String::from("seed,alpha,best_reward\n");
    for (s, a, trace) in &runs {
        writeln!(summary, "{s},{a},{}", best_reward(trace))?;
    }
    if let [a0, a1] = args.alpha[..] {
        let k = args.alpha.len();
        let (mut ge, mut gt) = (0, 0);
        for pair in runs.chunks(k) {
            let (b0, b1) = (best_reward(&pair[0].2), best_reward(&pair[1].2));
            ge += usize::from(b1 >= b0);
            gt += usize::from(b1 > b0);
        }
        eprintln!("alpha {a1} vs {a0}: best reward >= in {ge}/{}, > in {gt}/{}", args.seeds, args.seeds);
    }
    Ok(Run {
        config: json!({ "args": args, "toy": { "targets": env.targets().iter().map(|p| p.to_string()).collect::<Vec<_>>() } }),
        outputs: vec![
            primary(TOY_TRACE, toy_trace_csv(&runs)),
            Output {
                suffix: Some("summary"),
                schema: TOY_SUMMARY,
                content: summary,
            },
        ],
    })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Four contexts from two binary features with generated utilities.
    Default,
    /// Two contexts whose best sub-models are opposite.
    TwoContext,
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    /// Environment JSON; overrides `--preset`.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Evaluation pages per policy.
    #[arg(long, default_value_t = 10_000)]
    pub pages: u64,
    /// Shared cold-start pages before the evaluation pages.
    #[arg(long, default_value_t = 2_000)]
    pub cold_pages: u64,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy, default_value = "ra-re,ra-be,ra-ego")]
    pub policy: Vec<Policy>,
    /// Exploration weight of the warm-start generator.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pages between generator refits.
    #[arg(long)]
    pub refresh: Option<u64>,
    /// Let the generator also emit per-sub-model position decay.
    #[arg(long)]
    pub with_decay: bool,
    /// Bootstrap resamples for the report intervals.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

pub fn sim(args: &SimArgs, seed: u64) -> Result<Run> {
    let env = match &args.env {
        Some(path) => SimEnvironment::from_json(&read_text(Some(path))?)?,
        None => SimEnvironment::new(match args.preset {
            Preset::Default => SimConfig::default(),
            Preset::TwoContext => SimConfig::two_context(),
        })?,
    };
    let mut warm = WarmStartConfig::default();
    if let Some(a) = args.alpha {
        warm.ego.alpha = a;
    }
    if let Some(r) = args.refresh {
        warm.refresh = r;
    }
    warm.ego.with_decay = args.with_decay;
    let config = ComparisonConfig {
        cold_pages: args.cold_pages,
        pages: args.pages,
        warm,
    };
    let traces = run_comparison(&env, &config, &args.policy, seed)?;

    let mut trace_csv = Vec::new();
    Trace::write_csv(&traces.iter().collect::<Vec<_>>(), &mut trace_csv)?;
    let mut outputs = vec![primary(SIM_TRACE, String::from_utf8(trace_csv)?)];
    if traces.len() >= 2 {
        let base = args.policy.iter().position(|&p| p == Policy::RaRe).unwrap_or(0);
        let rows = report(&traces, base, args.resamples, &mut policy_rng(seed, 3))?;
        outputs.push(Output {
            suffix: Some("report"),
            schema: SIM_REPORT,
            content: report_csv(&rows),
        });
    }
    Ok(Run {
        config: json!({ "args": args, "env": env.config(), "comparison": config }),
        outputs,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Trace CSV files.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Policy the improvements are measured against.
    #[arg(long, default_value = "ra-re", value_parser = parse_policy)]
    pub baseline: Policy,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

pub fn report_cmd(args: &ReportArgs, seed: u64) -> Result<Run> {
    let mut traces: Vec<Trace> = Vec::new();
    for path in &args.traces {
        let text = read_text(Some(path))?;
        traces.extend(Trace::read_csv(text.as_bytes()).with_context(|| format!("parsing {}", path.display()))?);
    }
    let base = traces
        .iter()
        .position(|t| t.policy == args.baseline)
        .with_context(|| format!("no trace for baseline policy {}", args.baseline))?;
    let rows = report(&traces, base, args.resamples, &mut policy_rng(seed, 3))?;
    Ok(Run {
        config: serde_json::to_value(args)?,
        outputs: vec![primary(SIM_REPORT, report_csv(&rows))],
    })
}
