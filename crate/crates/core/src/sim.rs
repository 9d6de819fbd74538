//! Simulated ranking service for end-to-end weight tuning.
//!
//! Each page draws a context, asks `n` noisy sub-models to rank `m` items,
//! merges their rankings with the decayed TournamentGreedy rule and samples a
//! conversion from a cascade click model. Three serving policies are
//! provided: random expert weights (`ra-re`), the best expert set by observed
//! conversion (`ra-be`) and the evaluator-generator policy (`ra-ego`).
//!
//! Environment randomness for page `p` comes from its own stream, so
//! different policies run with the same seed see the same contexts, scorer
//! noise and click draws.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::benchgen::trial_rng;
use crate::ego::{check_simplex, ego_fit, fnv1a, Action, ContextSchema, Dataset, EgoConfig, Feature, Sample};
use crate::error::{check_dim, domain, Error, Result};
use crate::perm::{kendall_tau, Permutation, VoterProfile};
use crate::tournament::tournament_greedy_decayed;

/// Default geometric examination decay.
pub const EXAMINATION_DECAY: f64 = 0.85;

/// Environment description as read from JSON. Absent utilities and slopes
/// are drawn from `utility_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Cardinality of each categorical context feature.
    pub features: Vec<usize>,
    #[serde(default)]
    pub context_probs: Option<Vec<f64>>,
    pub items: usize,
    /// Score noise per sub-model.
    pub noise: Vec<f64>,
    /// `slopes[c][j]`: how strongly sub-model `j` tracks utility in context `c`.
    #[serde(default)]
    pub slopes: Option<Vec<Vec<f64>>>,
    /// `utilities[c][i]` in `[0, 1]`.
    #[serde(default)]
    pub utilities: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub utility_seed: u64,
    /// Examination probability per position; geometric when absent.
    #[serde(default)]
    pub examination: Option<Vec<f64>>,
    /// Conversion probability of an examined item is `conversion * utility`.
    pub conversion: f64,
    pub experts: Vec<Vec<f64>>,
}

impl Default for SimConfig {
    /// Four contexts from two binary features, ten items, five sub-models.
    fn default() -> Self {
        Self {
            features: vec![2, 2],
            context_probs: None,
            items: 10,
            noise: vec![0.1, 0.3, 0.5, 1.0, 2.0],
            slopes: None,
            utilities: None,
            utility_seed: 0,
            examination: None,
            conversion: 0.25,
            experts: default_experts(5),
        }
    }
}

impl SimConfig {
    /// Two contexts with opposite best sub-models: the two most accurate
    /// scorers each invert the utility order in one of the contexts. A few
    /// items carry most of the utility, so ranking quality matters.
    pub fn two_context() -> Self {
        Self {
            features: vec![2],
            slopes: Some(vec![vec![1.0, -1.0, 0.3, 0.3, 0.3], vec![-1.0, 1.0, 0.3, 0.3, 0.3]]),
            noise: vec![0.05, 0.05, 0.5, 1.0, 2.0],
            utilities: Some(vec![
                vec![0.9, 0.05, 0.7, 0.05, 0.1, 0.02, 0.3, 0.02, 0.05, 0.02],
                vec![0.02, 0.3, 0.05, 0.8, 0.02, 0.6, 0.05, 0.1, 0.02, 0.95],
            ]),
            conversion: 0.5,
            ..Self::default()
        }
    }
}

/// The five vertices, the barycenter and two pairwise mixtures.
fn default_experts(n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|k| if k == j { 1.0 } else { 0.0 }).collect())
        .collect();
    out.push(vec![1.0 / n as f64; n]);
    let pair = |a: usize, b: usize| (0..n).map(|k| if k == a || k == b { 0.5 } else { 0.0 }).collect();
    out.push(pair(0, 1));
    out.push(pair(n.saturating_sub(2), n - 1));
    out
}

/// Non-empty list of simplex weight vectors proposed by experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertWeightSet(Vec<Vec<f64>>);

impl ExpertWeightSet {
    pub fn new(sets: Vec<Vec<f64>>) -> Result<Self> {
        let n = sets.first().ok_or_else(|| domain("need at least one expert weight set"))?.len();
        for w in &sets {
            check_dim(n, w.len())?;
            check_simplex(w)?;
        }
        Ok(Self(sets))
    }

    pub fn sets(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

/// A resolved environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEnvironment {
    config: SimConfig,
    probs: Vec<f64>,
    utilities: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    examination: Vec<f64>,
    experts: ExpertWeightSet,
    schema: ContextSchema,
    id: u64,
}

impl SimEnvironment {
    pub fn new(config: SimConfig) -> Result<Self> {
        if config.features.is_empty() || config.features.contains(&0) {
            return Err(domain("context features need positive cardinalities"));
        }
        let contexts: usize = config.features.iter().product();
        let (m, n) = (config.items, config.noise.len());
        if m < 2 || n == 0 {
            return Err(domain("need at least two items and one sub-model"));
        }
        if config.noise.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(domain("noise levels must be finite and non-negative"));
        }
        if !(config.conversion > 0.0 && config.conversion <= 1.0) {
            return Err(domain("conversion scale must lie in (0, 1]"));
        }
        let probs = match &config.context_probs {
            Some(p) => {
                check_dim(contexts, p.len())?;
                check_simplex(p)?;
                p.clone()
            }
            None => vec![1.0 / contexts as f64; contexts],
        };

        let mut rng = trial_rng(config.utility_seed, 0);
        let utilities = match &config.utilities {
            Some(u) => u.clone(),
            None => (0..contexts)
                .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
                .collect(),
        };
        let slopes = match &config.slopes {
            Some(s) => s.clone(),
            None => (0..contexts)
                .map(|_| (0..n).map(|_| rng.random_range(-0.5..1.5)).collect())
                .collect(),
        };
        check_dim(contexts, utilities.len())?;
        check_dim(contexts, slopes.len())?;
        for (u, s) in utilities.iter().zip(&slopes) {
            check_dim(m, u.len())?;
            check_dim(n, s.len())?;
            if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(domain("utilities must lie in [0, 1]"));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("slope".into()));
            }
        }

        let examination = match &config.examination {
            Some(e) => e.clone(),
            None => (0..m).map(|k| EXAMINATION_DECAY.powi(k as i32)).collect(),
        };
        check_dim(m, examination.len())?;
        if examination.iter().any(|e| !(0.0..=1.0).contains(e)) || examination.windows(2).any(|w| w[1] > w[0]) {
            return Err(domain("examination probabilities must lie in [0, 1] and not increase"));
        }

        let experts = ExpertWeightSet::new(config.experts.clone())?;
        check_dim(n, experts.sets()[0].len())?;
        let schema = ContextSchema::new(
            config
                .features
                .iter()
                .enumerate()
                .map(|(f, &card)| Feature::Categorical {
                    name: format!("f{f}"),
                    levels: (0..card).map(|l| l.to_string()).collect(),
                })
                .collect(),
        )?;

        let mut env = Self {
            config,
            probs,
            utilities,
            slopes,
            examination,
            experts,
            schema,
            id: 0,
        };
        let fingerprint = serde_json::to_vec(&(
            &env.probs,
            &env.utilities,
            &env.slopes,
            &env.examination,
            &env.config.noise,
            env.config.conversion,
            env.experts.sets(),
        ))?;
        env.id = fnv1a(fingerprint);
        Ok(env)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn contexts(&self) -> usize {
        self.probs.len()
    }

    pub fn items(&self) -> usize {
        self.config.items
    }

    pub fn sub_models(&self) -> usize {
        self.config.noise.len()
    }

    pub fn experts(&self) -> &ExpertWeightSet {
        &self.experts
    }

    pub fn schema(&self) -> &ContextSchema {
        &self.schema
    }

    pub fn utilities(&self, context: usize) -> &[f64] {
        &self.utilities[context]
    }

    pub fn examination(&self) -> &[f64] {
        &self.examination
    }

    /// Fingerprint of everything that determines rewards.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// One-hot encoding of a context index (mixed radix, first feature
    /// most significant).
    pub fn encode_context(&self, context: usize) -> Vec<f64> {
        let mut levels = Vec::with_capacity(self.config.features.len());
        let mut rest = context;
        for &card in self.config.features.iter().rev() {
            levels.push(rest % card);
            rest /= card;
        }
        levels.reverse();
        let mut out = Vec::with_capacity(self.schema.dim());
        for (&card, &l) in self.config.features.iter().zip(&levels) {
            out.extend((0..card).map(|k| if k == l { 1.0 } else { 0.0 }));
        }
        out
    }

    /// `1 - prod_k (1 - e_k * conversion * u(item_k))`.
    pub fn expected_reward(&self, context: usize, page: &Permutation) -> f64 {
        let u = &self.utilities[context];
        let miss: f64 = page
            .items()
            .iter()
            .zip(&self.examination)
            .map(|(&i, e)| 1.0 - e * self.config.conversion * u[i])
            .product();
        1.0 - miss
    }

    /// Draws page `index`'s context, scorer noise and click uniforms.
    pub fn draw_page(&self, seed: u64, index: u64) -> PageDraw {
        let mut rng = trial_rng(seed, index);
        let r: f64 = rng.random();
        let mut context = self.contexts() - 1;
        let mut acc = 0.0;
        for (c, p) in self.probs.iter().enumerate() {
            acc += p;
            if r < acc {
                context = c;
                break;
            }
        }
        let (m, n) = (self.items(), self.sub_models());
        let noise = (0..n * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let clicks = (0..2 * m).map(|_| rng.random()).collect();
        PageDraw {
            index,
            context,
            noise,
            clicks,
        }
    }

    /// Each sub-model's ranking for a drawn page, best item first.
    pub fn sub_model_rankings(&self, draw: &PageDraw) -> Vec<Permutation> {
        let (m, u, slopes) = (self.items(), &self.utilities[draw.context], &self.slopes[draw.context]);
        (0..self.sub_models())
            .map(|j| {
                let score: Vec<f64> = (0..m)
                    .map(|i| slopes[j] * u[i] + self.config.noise[j] * draw.noise[j * m + i])
                    .collect();
                let mut items: Vec<usize> = (0..m).collect();
                items.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
                Permutation::new(items).expect("sorted ids form a permutation")
            })
            .collect()
    }

    /// Position `k` is examined when `clicks[2k] < e_k` and converts when
    /// additionally `clicks[2k + 1] < conversion * u`.
    pub fn sample_reward(&self, draw: &PageDraw, page: &Permutation) -> f64 {
        let u = &self.utilities[draw.context];
        for (k, &item) in page.items().iter().enumerate() {
            if draw.clicks[2 * k] < self.examination[k] && draw.clicks[2 * k + 1] < self.config.conversion * u[item] {
                return 1.0;
            }
        }
        0.0
    }

    /// Serves one page: aggregates the sub-model rankings and samples a
    /// conversion. An empty `decay` means no position decay.
    pub fn serve_page(&self, draw: &PageDraw, weights: &[f64], decay: &[f64]) -> Result<PageOutcome> {
        let n = self.sub_models();
        check_dim(n, weights.len())?;
        let rankings = self.sub_model_rankings(draw);
        let profile = VoterProfile::from_parts(rankings.clone(), weights)?;
        let ones;
        let decay = if decay.is_empty() {
            ones = vec![1.0; n];
            &ones
        } else {
            decay
        };
        let page = tournament_greedy_decayed(&profile, decay)?;
        let reward = self.sample_reward(draw, &page);
        let ktd = rankings.iter().map(|r| kendall_tau(&page, r)).collect::<Result<Vec<_>>>()?;
        Ok(PageOutcome { page, reward, ktd })
    }
}

/// Environment randomness for one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PageDraw {
    pub index: u64,
    pub context: usize,
    noise: Vec<f64>,
    clicks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageOutcome {
    pub page: Permutation,
    pub reward: f64,
    /// Distance of the served page to each sub-model's ranking.
    pub ktd: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    RaRe,
    RaBe,
    RaEgo,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::RaRe, Policy::RaBe, Policy::RaEgo];

    pub fn name(self) -> &'static str {
        match self {
            Policy::RaRe => "ra-re",
            Policy::RaBe => "ra-be",
            Policy::RaEgo => "ra-ego",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| domain(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub page: u64,
    pub context: usize,
    pub weights: Vec<f64>,
    pub decay: Vec<f64>,
    pub reward: f64,
    pub ktd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub policy: Policy,
    /// [`SimEnvironment::id`] of the producing environment, when known.
    pub env_id: Option<u64>,
    pub records: Vec<PageRecord>,
}

pub const TRACE_CSV_HEADER: &str = "page,context,policy,weights,reward,ktd";

impl Trace {
    fn new(policy: Policy, env: &SimEnvironment) -> Self {
        Self {
            policy,
            env_id: Some(env.id()),
            records: Vec::new(),
        }
    }

    fn log(&mut self, draw: &PageDraw, action: &Action, outcome: &PageOutcome) {
        self.records.push(PageRecord {
            page: draw.index,
            context: draw.context,
            weights: action.weights.clone(),
            decay: action.decay.clone(),
            reward: outcome.reward,
            ktd: outcome.ktd.clone(),
        });
    }

    pub fn mean_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len().max(1) as f64
    }

    /// CSV with `;`-separated weight (then decay) and distance lists.
    pub fn write_csv<W: Write>(traces: &[&Trace], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_CSV_HEADER.split(','))?;
        let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
        for t in traces {
            for r in &t.records {
                w.write_record([
                    r.page.to_string(),
                    r.context.to_string(),
                    t.policy.name().to_string(),
                    join(&mut r.weights.iter().chain(&r.decay)),
                    format!("{:?}", r.reward),
                    join(&mut r.ktd.iter()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`Trace::write_csv`] output, one trace per policy in first-seen
    /// order. Weight and decay lists are kept together in `weights`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Trace>> {
        let mut r = csv::Reader::from_reader(reader);
        let mut out: Vec<Trace> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let perr = |msg: String| Error::Parse { line, msg };
            if rec.len() != 6 {
                return Err(perr(format!("expected 6 fields, got {}", rec.len())));
            }
            let list = |s: &str| -> Result<Vec<f64>> {
                if s.is_empty() {
                    return Ok(Vec::new());
                }
                s.split(';')
                    .map(|v| v.parse::<f64>().map_err(|e| perr(format!("{v:?}: {e}"))))
                    .collect()
            };
            let policy: Policy = rec[2].parse().map_err(|e: Error| perr(e.to_string()))?;
            let record = PageRecord {
                page: rec[0].parse().map_err(|e| perr(format!("page: {e}")))?,
                context: rec[1].parse().map_err(|e| perr(format!("context: {e}")))?,
                weights: list(&rec[3])?,
                decay: Vec::new(),
                reward: rec[4].parse().map_err(|e| perr(format!("reward: {e}")))?,
                ktd: list(&rec[5])?,
            };
            match out.iter_mut().find(|t| t.policy == policy) {
                Some(t) => t.records.push(record),
                None => out.push(Trace {
                    policy,
                    env_id: None,
                    records: vec![record],
                }),
            }
        }
        Ok(out)
    }
}

/// Running mean conversion used as the label baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Baseline {
    pub sum: f64,
    pub pages: u64,
}

impl Baseline {
    pub fn add(&mut self, reward: f64) {
        self.sum += reward;
        self.pages += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.pages == 0 {
            0.0
        } else {
            self.sum / self.pages as f64
        }
    }
}

fn sample_for(env: &SimEnvironment, context: usize, action: &Action, reward: f64, baseline: f64) -> Result<Sample> {
    Sample::new(
        env.encode_context(context),
        action.weights.clone(),
        action.decay.clone(),
        (reward - baseline).clamp(-1.0, 1.0),
        1,
    )
}

/// Cold-start output: the logged dataset, the trace and the label baseline.
#[derive(Debug, Clone)]
pub struct ColdStart {
    pub dataset: Dataset,
    pub trace: Trace,
    pub baseline: Baseline,
    /// Per expert set: (pages served, conversions).
    pub arms: Vec<(u64, f64)>,
}

/// Serves `pages` pages starting at page index `first` with a uniformly
/// random expert set each; labels use the running mean conversion.
pub fn run_cold_start<R: Rng + ?Sized>(
    env: &SimEnvironment,
    seed: u64,
    first: u64,
    pages: u64,
    rng: &mut R,
) -> Result<ColdStart> {
    let mut out = ColdStart {
        dataset: Dataset::new(),
        trace: Trace::new(Policy::RaRe, env),
        baseline: Baseline::default(),
        arms: vec![(0, 0.0); env.experts().k()],
    };
    for index in first..first + pages {
        let arm = rng.random_range(0..env.experts().k());
        let action = Action {
            weights: env.experts().sets()[arm].clone(),
            decay: Vec::new(),
        };
        let draw = env.draw_page(seed, index);
        let outcome = env.serve_page(&draw, &action.weights, &[])?;
        out.baseline.add(outcome.reward);
        out.arms[arm].0 += 1;
        out.arms[arm].1 += outcome.reward;
        out.dataset
            .push(sample_for(env, draw.context, &action, outcome.reward, out.baseline.mean())?)?;
        out.trace.log(&draw, &action, &outcome);
    }
    Ok(out)
}

/// Greedy on the empirical conversion of each expert set, ignoring context.
/// `prior` carries (pages, conversions) per set from earlier traffic; every
/// set additionally starts from one success in two pages. Ties go to the
/// lowest index.
pub fn run_bandit(
    env: &SimEnvironment,
    seed: u64,
    first: u64,
    pages: u64,
    prior: Option<&[(u64, f64)]>,
) -> Result<Trace> {
    let k = env.experts().k();
    let mut arms: Vec<(f64, f64)> = vec![(2.0, 1.0); k];
    if let Some(p) = prior {
        check_dim(k, p.len())?;
        for (a, &(n, s)) in arms.iter_mut().zip(p) {
            a.0 += n as f64;
            a.1 += s;
        }
    }
    let mut trace = Trace::new(Policy::RaBe, env);
    for index in first..first + pages {
        let mut best = 0;
        for a in 1..k {
            if arms[a].1 / arms[a].0 > arms[best].1 / arms[best].0 {
                best = a;
            }
        }
        let action = Action {
            weights: env.experts().sets()[best].clone(),
            decay: Vec::new(),
        };
        let draw = env.draw_page(seed, index);
        let outcome = env.serve_page(&draw, &action.weights, &[])?;
        arms[best].0 += 1.0;
        arms[best].1 += outcome.reward;
        trace.log(&draw, &action, &outcome);
    }
    Ok(trace)
}

/// Settings for the warm-start policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartConfig {
    pub ego: EgoConfig,
    /// Pages between generator refits.
    pub refresh: u64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            ego: EgoConfig {
                alpha: 0.1,
                holdout_fraction: 0.0,
                ..EgoConfig::default()
            },
            refresh: 1000,
        }
    }
}

/// Fits the generator on `dataset`, serves `pages` pages with its output
/// for each page's context, logs every page into `dataset` and refits every
/// `refresh` pages.
pub fn run_warm_start<R: Rng + ?Sized>(
    env: &SimEnvironment,
    dataset: &mut Dataset,
    baseline: f64,
    seed: u64,
    first: u64,
    pages: u64,
    config: &WarmStartConfig,
    rng: &mut R,
) -> Result<Trace> {
    if dataset.is_empty() {
        return Err(domain("warm start needs a non-empty cold-start dataset"));
    }
    if config.refresh == 0 {
        return Err(domain("refresh interval must be positive"));
    }
    let mut trace = Trace::new(Policy::RaEgo, env);
    let mut actions: Vec<Action> = Vec::new();
    for (offset, index) in (first..first + pages).enumerate() {
        if offset as u64 % config.refresh == 0 {
            let fit = ego_fit(dataset, &config.ego, rng)?;
            actions = (0..env.contexts())
                .map(|c| fit.policy.act(&env.encode_context(c)))
                .collect::<Result<_>>()?;
        }
        let draw = env.draw_page(seed, index);
        let action = &actions[draw.context];
        let outcome = env.serve_page(&draw, &action.weights, &action.decay)?;
        dataset.push(sample_for(env, draw.context, action, outcome.reward, baseline)?)?;
        trace.log(&draw, action, &outcome);
    }
    Ok(trace)
}

/// Page budget for [`run_comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub cold_pages: u64,
    pub pages: u64,
    pub warm: WarmStartConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            cold_pages: 2000,
            pages: 10_000,
            warm: WarmStartConfig::default(),
        }
    }
}

/// Policy-side RNG of [`run_comparison`]: stream 0 drives the shared cold
/// start, 1 the random policy and 2 the warm start. Kept apart from the page
/// streams so every policy sees the same pages.
pub fn policy_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(u64::MAX - stream);
    r
}

/// Runs a shared cold-start phase, then each requested policy over the same
/// `pages` evaluation pages. `ra-re` keeps drawing random expert sets,
/// `ra-be` starts from the cold-start arm statistics and `ra-ego` from the
/// cold-start dataset.
pub fn run_comparison(
    env: &SimEnvironment,
    config: &ComparisonConfig,
    policies: &[Policy],
    seed: u64,
) -> Result<Vec<Trace>> {
    if config.cold_pages == 0 {
        return Err(domain("the comparison needs at least one cold-start page"));
    }
    let policy_rng = |p: u64| policy_rng(seed, p);
    let cold = run_cold_start(env, seed, 0, config.cold_pages, &mut policy_rng(0))?;
    let first = config.cold_pages;
    policies
        .iter()
        .map(|&p| match p {
            Policy::RaRe => {
                let mut rng = policy_rng(1);
                Ok(run_cold_start(env, seed, first, config.pages, &mut rng)?.trace)
            }
            Policy::RaBe => run_bandit(env, seed, first, config.pages, Some(&cold.arms)),
            Policy::RaEgo => {
                let mut data = cold.dataset.clone();
                let mut rng = policy_rng(2);
                run_warm_start(
                    env,
                    &mut data,
                    cold.baseline.mean(),
                    seed,
                    first,
                    config.pages,
                    &config.warm,
                    &mut rng,
                )
            }
        })
        .collect()
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub pages: usize,
    pub mean_reward: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Percent change of the mean against the baseline trace.
    pub improvement_pct: f64,
    /// Mean distance of served pages to each sub-model's ranking.
    pub ktd: Vec<f64>,
}

pub const REPORT_CSV_HEADER: &str = "policy,pages,mean_reward,ci_low,ci_high,improvement_pct,ktd";

/// Summarizes traces against `traces[baseline]` with `resamples` bootstrap
/// draws for the 95% interval of each mean.
pub fn report<R: Rng + ?Sized>(
    traces: &[Trace],
    baseline: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<Vec<PolicySummary>> {
    if traces.len() < 2 {
        return Err(domain("a report needs at least two traces"));
    }
    let base = traces.get(baseline).ok_or_else(|| domain("baseline index out of range"))?;
    if base.records.is_empty() {
        return Err(domain("empty baseline trace"));
    }
    let ids: Vec<u64> = traces.iter().filter_map(|t| t.env_id).collect();
    if ids.windows(2).any(|w| w[0] != w[1]) {
        return Err(domain("traces come from different environments"));
    }
    let sub_models = base.records[0].ktd.len();
    for t in traces {
        if t.records.iter().any(|r| r.ktd.len() != sub_models) {
            return Err(domain("traces disagree on the number of sub-models"));
        }
    }
    let base_mean = base.mean_reward();
    traces
        .iter()
        .map(|t| {
            let rewards: Vec<f64> = t.records.iter().map(|r| r.reward).collect();
            let (ci_low, ci_high) = bootstrap_ci(&rewards, resamples, rng);
            let mean = t.mean_reward();
            let pages = t.records.len();
            let mut ktd = vec![0.0; sub_models];
            for r in &t.records {
                for (a, d) in ktd.iter_mut().zip(&r.ktd) {
                    *a += d;
                }
            }
            ktd.iter_mut().for_each(|a| *a /= pages.max(1) as f64);
            Ok(PolicySummary {
                policy: t.policy,
                pages,
                mean_reward: mean,
                ci_low,
                ci_high,
                improvement_pct: if base_mean == 0.0 { 0.0 } else { 100.0 * (mean - base_mean) / base_mean },
                ktd,
            })
        })
        .collect()
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], resamples: usize, rng: &mut R) -> (f64, f64) {
    if values.is_empty() || resamples == 0 {
        let m = values.iter().sum::<f64>() / values.len().max(1) as f64;
        return (m, m);
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

pub fn report_csv(rows: &[PolicySummary]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let ktd: Vec<String> = r.ktd.iter().map(|d| format!("{d:.6}")).collect();
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.4},{}\n",
            r.policy,
            r.pages,
            r.mean_reward,
            r.ci_low,
            r.ci_high,
            r.improvement_pct,
            ktd.join(";")
        ));
    }
    s
}

/// Exact two-sided sign test: probability under a fair coin of a split at
/// least as lopsided as `wins` of `trials`.
pub fn sign_test(wins: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let k = wins.max(trials - wins);
    let mut tail = 0.0;
    let mut c = 1.0f64;
    // c walks through C(trials, j) for j = 0..=trials.
    for j in 0..=trials {
        if j >= k {
            tail += c;
        }
        c = c * (trials - j) as f64 / (j + 1) as f64;
    }
    (2.0 * tail / 2f64.powi(trials as i32)).min(1.0)
}
