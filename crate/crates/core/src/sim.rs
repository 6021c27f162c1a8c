//! A fully observable bandit environment for the retrieval policy.
//!
//! Tasks require a set of skills and have a base success probability `b`.
//! Memories belong to one skill and carry a true gain. Retrieving memories
//! moves the success probability to `clamp(b + sum of relevant gains, 0, 1)`.
//! Environment draws replace model calls, so the Eq. 4/5 loop can be checked
//! against ground truth.

use crate::embedding::{cosine_sim, nearest_neighbors, EmbeddingVector};
use crate::error::{Error, Result};
use crate::feedback::{bayes_update, UpdateConfig};
use crate::model::{MemoryId, UtilityPosterior};
use crate::retrieval::{fuse, prior_from_neighbors, sample_utility, RetrievalConfig};
use crate::rng::{stream, StreamRng};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;

/// A memory with fixed skill, gain and insertion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedMemory {
    pub skill: usize,
    pub gain: f64,
    pub insert_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub skills: usize,
    pub dim: usize,
    pub initial_memories_per_skill: usize,
    pub initial_gain_range: (f64, f64),
    /// Memories inserted during the stream, each on a random skill.
    pub mid_stream_memories: usize,
    pub mid_stream_gain_range: (f64, f64),
    /// Insertion window as fractions of `horizon`.
    pub mid_stream_window: (f64, f64),
    /// Extra memories with fixed attributes, appended after the random ones.
    pub pinned: Vec<PinnedMemory>,
    pub base_mean: f64,
    /// `b` is uniform on `base_mean ± base_spread`, clamped to `[0, 1]`.
    pub base_spread: f64,
    pub max_skills_per_task: usize,
    /// Isotropic noise added to task embeddings before normalization.
    pub task_noise: f64,
    /// Isotropic noise added to memory embeddings before normalization.
    pub memory_noise: f64,
    pub horizon: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            skills: 8,
            dim: 32,
            initial_memories_per_skill: 4,
            initial_gain_range: (-0.3, 0.3),
            mid_stream_memories: 16,
            mid_stream_gain_range: (0.0, 0.4),
            mid_stream_window: (0.1, 0.6),
            pinned: Vec::new(),
            base_mean: 0.5,
            base_spread: 0.4,
            max_skills_per_task: 2,
            task_noise: 0.05,
            memory_noise: 0.01,
            horizon: 2000,
        }
    }
}

impl SimParams {
    /// Three modest incumbents per skill and one strong memory inserted
    /// halfway through on skill 0.
    pub fn cold_start() -> Self {
        Self {
            skills: 2,
            initial_memories_per_skill: 3,
            initial_gain_range: (0.1, 0.1),
            mid_stream_memories: 0,
            pinned: vec![PinnedMemory { skill: 0, gain: 0.4, insert_step: 500 }],
            max_skills_per_task: 1,
            horizon: 1000,
            ..Self::default()
        }
    }

    /// One gain-zero memory, always retrieved, under widely varying `b`.
    pub fn decoupling() -> Self {
        Self {
            skills: 2,
            initial_memories_per_skill: 0,
            mid_stream_memories: 0,
            pinned: vec![PinnedMemory { skill: 0, gain: 0.0, insert_step: 0 }],
            base_mean: 0.5,
            base_spread: 0.45,
            max_skills_per_task: 1,
            horizon: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.skills < 2 {
            return bad("at least two skills are required");
        }
        if self.dim == 0 || self.horizon == 0 {
            return bad("dim and horizon must be positive");
        }
        if self.max_skills_per_task == 0 || self.max_skills_per_task > self.skills {
            return bad("max_skills_per_task must lie in [1, skills]");
        }
        for (lo, hi) in [self.initial_gain_range, self.mid_stream_gain_range] {
            if !(-0.5..=0.5).contains(&lo) || !(-0.5..=0.5).contains(&hi) || lo > hi {
                return bad("gain ranges must be ordered within [-0.5, 0.5]");
            }
        }
        let (w0, w1) = self.mid_stream_window;
        if !(0.0..=1.0).contains(&w0) || !(0.0..=1.0).contains(&w1) || w0 > w1 {
            return bad("mid_stream_window must be ordered within [0, 1]");
        }
        if self.pinned.iter().any(|p| p.skill >= self.skills || !(-0.5..=0.5).contains(&p.gain)) {
            return bad("pinned memory has an unknown skill or a gain outside [-0.5, 0.5]");
        }
        if !(0.0..=1.0).contains(&self.base_mean) || self.base_spread.is_nan() || self.base_spread < 0.0 {
            return bad("base_mean must lie in [0, 1] and base_spread be >= 0");
        }
        if !(self.task_noise >= 0.0 && self.memory_noise >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMemory {
    pub skill: usize,
    pub gain: f64,
    pub insert_step: usize,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub skills: Vec<usize>,
    pub base: f64,
    pub embedding: EmbeddingVector,
    /// Uniform draws deciding the memory-augmented and base outcomes. Shared
    /// by every policy at the same step.
    pub u_mem: f64,
    pub u_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEnv {
    pub params: SimParams,
    pub seed: u64,
    pub skill_embeddings: Vec<EmbeddingVector>,
    /// Sorted by insertion step, then generation order; the index is the id.
    pub memories: Vec<SimMemory>,
}

fn noisy_unit(center: &[f64], noise: f64, rng: &mut StreamRng) -> Result<EmbeddingVector> {
    let v = center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + noise * z
        })
        .collect();
    EmbeddingVector::normalized(v)
}

fn uniform_in(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Builds the environment. Identical `(params, seed)` give identical envs.
pub fn generate_env(params: &SimParams, seed: u64) -> Result<SynthEnv> {
    params.validate()?;
    let mut rng = stream(seed, "sim/env");
    let origin = vec![0.0; params.dim];
    let skill_embeddings =
        (0..params.skills).map(|_| noisy_unit(&origin, 1.0, &mut rng)).collect::<Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for skill in 0..params.skills {
        for _ in 0..params.initial_memories_per_skill {
            specs.push(PinnedMemory { skill, gain: uniform_in(&mut rng, params.initial_gain_range), insert_step: 0 });
        }
    }
    let (w0, w1) = params.mid_stream_window;
    let lo = (w0 * params.horizon as f64) as usize;
    let hi = ((w1 * params.horizon as f64) as usize).max(lo + 1);
    for _ in 0..params.mid_stream_memories {
        let skill = rng.random_range(0..params.skills);
        let gain = uniform_in(&mut rng, params.mid_stream_gain_range);
        specs.push(PinnedMemory { skill, gain, insert_step: rng.random_range(lo..hi) });
    }
    specs.extend(params.pinned.iter().cloned());
    let mut memories = specs
        .into_iter()
        .map(|p| {
            let embedding = noisy_unit(skill_embeddings[p.skill].as_slice(), params.memory_noise, &mut rng)?;
            Ok(SimMemory { skill: p.skill, gain: p.gain, insert_step: p.insert_step, embedding })
        })
        .collect::<Result<Vec<_>>>()?;
    memories.sort_by_key(|m| m.insert_step);
    Ok(SynthEnv { params: params.clone(), seed, skill_embeddings, memories })
}

impl SynthEnv {
    /// SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("env serializes")))
    }

    /// The task at `step`; a pure function of seed and step.
    pub fn task(&self, step: usize) -> Result<SimTask> {
        let p = &self.params;
        let mut rng = stream(self.seed, &format!("sim/task/{step}"));
        let n = rng.random_range(1..=p.max_skills_per_task);
        let mut skills = rand::seq::index::sample(&mut rng, p.skills, n).into_vec();
        skills.sort_unstable();
        let base = (p.base_mean + p.base_spread * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0);
        let mut center = vec![0.0; p.dim];
        for &s in &skills {
            for (c, x) in center.iter_mut().zip(self.skill_embeddings[s].as_slice()) {
                *c += x;
            }
        }
        let embedding = noisy_unit(&center, p.task_noise, &mut rng)?;
        Ok(SimTask { skills, base, embedding, u_mem: rng.random(), u_base: rng.random() })
    }

    /// Success probability with `retrieved` memory indices.
    pub fn success_probability(&self, task: &SimTask, retrieved: &[usize]) -> f64 {
        let gain: f64 = retrieved
            .iter()
            .map(|&i| &self.memories[i])
            .filter(|m| task.skills.contains(&m.skill))
            .map(|m| m.gain)
            .sum();
        (task.base + gain).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Similarity only; utility weight forced to zero.
    SimilarityOnly,
    /// Fused score with the posterior mean in place of a sample. New memories
    /// start at mean 0.
    GreedyUtility,
    /// Fused score with a Thompson sample; Eq. 1 priors for new memories.
    SaCts,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::SimilarityOnly, Policy::GreedyUtility, Policy::SaCts];

    pub fn name(self) -> &'static str {
        match self {
            Self::SimilarityOnly => "similarity_only",
            Self::GreedyUtility => "greedy_utility",
            Self::SaCts => "sa_cts",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `y_mem - y_base`.
    Advantage,
    /// `y_mem` alone; the ablation that confounds difficulty with efficacy.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub retrieval: RetrievalConfig,
    pub update: UpdateConfig,
    pub reward: RewardMode,
    pub updates_enabled: bool,
    /// A trace point is kept every this many steps, and at the last step.
    pub trace_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            update: UpdateConfig::default(),
            reward: RewardMode::Advantage,
            updates_enabled: true,
            trace_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryOutcome {
    pub index: usize,
    pub skill: usize,
    pub gain: f64,
    pub insert_step: usize,
    pub retrievals: u64,
    /// Steps after insertion (inclusive) in which it was retrieved.
    pub exposure_rate: f64,
    pub posterior: UtilityPosterior,
    /// Mean expected advantage `p_mem - b` over the steps it was retrieved:
    /// the quantity its posterior mean tracks. Zero if never retrieved.
    pub attributed_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub cum_advantage: f64,
    pub exposure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub policy: Policy,
    pub seed: u64,
    pub steps: usize,
    /// Realized `sum(y_mem - y_base)`.
    pub cum_advantage: f64,
    /// `sum(p_mem - b)`.
    pub expected_cum_advantage: f64,
    /// Pooled exposure of mid-stream memories over the steps after their insertion.
    pub new_memory_exposure_rate: f64,
    /// Mean `b` over the streamed tasks.
    pub mean_base: f64,
    pub memories: Vec<MemoryOutcome>,
    pub trace: Vec<TracePoint>,
}

struct Arm {
    posterior: UtilityPosterior,
    retrievals: u64,
    attributed_sum: f64,
}

fn initial_posterior(
    policy: Policy,
    env: &SynthEnv,
    ids: &[MemoryId],
    arms: &[Arm],
    cfg: &RetrievalConfig,
) -> Result<UtilityPosterior> {
    if policy == Policy::GreedyUtility {
        return UtilityPosterior::new(0.0, cfg.prior_variance);
    }
    let index = arms.len();
    let live = (0..index).map(|j| (&ids[j], &env.memories[j].embedding));
    let neighbors = nearest_neighbors(&env.memories[index].embedding, live, cfg.n_init)?;
    let posteriors: Vec<UtilityPosterior> =
        neighbors.iter().map(|(id, _)| arms[ids.iter().position(|x| x == id).expect("live id")].posterior).collect();
    Ok(prior_from_neighbors(&posteriors, cfg))
}

/// Top-k live memory indices for `task` under `policy`.
///
/// Candidates are visited in index order and, for sampling policies, each
/// receives one utility draw, mirroring the engine's retrieval.
fn select(
    policy: Policy,
    env: &SynthEnv,
    arms: &[Arm],
    task: &SimTask,
    cfg: &RetrievalConfig,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    let mut scored = Vec::with_capacity(arms.len());
    for (i, arm) in arms.iter().enumerate() {
        let sim = cosine_sim(&task.embedding, &env.memories[i].embedding)?;
        let score = match policy {
            Policy::SimilarityOnly => fuse(sim, sample_utility(&arm.posterior, rng), 0.0),
            Policy::GreedyUtility => fuse(sim, arm.posterior.mean, cfg.lambda),
            Policy::SaCts => fuse(sim, sample_utility(&arm.posterior, rng), cfg.lambda),
        };
        scored.push((score, i));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.truncate(cfg.top_k);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Plays `steps` rounds of retrieve, Bernoulli outcome, reward, update.
pub fn run_policy(env: &SynthEnv, policy: Policy, steps: usize, config: &SimConfig) -> Result<PolicyMetrics> {
    if steps == 0 {
        return Err(Error::InvalidParams("steps must be at least 1".into()));
    }
    config.retrieval.validate()?;
    config.update.validate()?;
    let mut rng = stream(env.seed, &format!("sim/policy/{}", policy.name()));
    let ids: Vec<MemoryId> = (0..env.memories.len()).map(sim_memory_id).collect();
    let mut arms: Vec<Arm> = Vec::with_capacity(env.memories.len());
    let mut exposure = vec![0u64; env.memories.len()];
    let (mut cum, mut expected, mut base_sum) = (0.0, 0.0, 0.0);
    let mut trace = Vec::new();
    let mid_stream = |i: usize| env.memories[i].insert_step > 0;
    for step in 0..steps {
        while arms.len() < env.memories.len() && env.memories[arms.len()].insert_step <= step {
            let posterior = initial_posterior(policy, env, &ids, &arms, &config.retrieval)?;
            arms.push(Arm { posterior, retrievals: 0, attributed_sum: 0.0 });
        }
        let task = env.task(step)?;
        let chosen = select(policy, env, &arms, &task, &config.retrieval, &mut rng)?;
        let p_mem = env.success_probability(&task, &chosen);
        let y_mem = f64::from(u8::from(task.u_mem < p_mem));
        let y_base = f64::from(u8::from(task.u_base < task.base));
        cum += y_mem - y_base;
        expected += p_mem - task.base;
        base_sum += task.base;
        let r = match config.reward {
            RewardMode::Advantage => y_mem - y_base,
            RewardMode::Absolute => y_mem,
        };
        for &i in &chosen {
            let arm = &mut arms[i];
            if config.updates_enabled {
                arm.posterior = bayes_update(&arm.posterior, r, &config.update);
            }
            arm.retrievals += 1;
            arm.attributed_sum += p_mem - task.base;
            exposure[i] += 1;
        }
        let last = step + 1 == steps;
        if last || (config.trace_every > 0 && (step + 1) % config.trace_every == 0) {
            trace.push(TracePoint {
                step: step + 1,
                cum_advantage: cum,
                exposure_rate: pooled_exposure(env, &exposure, step + 1, &mid_stream),
            });
        }
    }
    let memories = arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let m = &env.memories[i];
            let live = steps.saturating_sub(m.insert_step).max(1);
            MemoryOutcome {
                index: i,
                skill: m.skill,
                gain: m.gain,
                insert_step: m.insert_step,
                retrievals: arm.retrievals,
                exposure_rate: exposure[i] as f64 / live as f64,
                posterior: arm.posterior,
                attributed_gain: if arm.retrievals == 0 { 0.0 } else { arm.attributed_sum / arm.retrievals as f64 },
            }
        })
        .collect();
    Ok(PolicyMetrics {
        policy,
        seed: env.seed,
        steps,
        cum_advantage: cum,
        expected_cum_advantage: expected,
        new_memory_exposure_rate: pooled_exposure(env, &exposure, steps, &mid_stream),
        mean_base: base_sum / steps as f64,
        memories,
        trace,
    })
}

fn pooled_exposure(env: &SynthEnv, exposure: &[u64], steps: usize, include: &dyn Fn(usize) -> bool) -> f64 {
    let (mut hits, mut live) = (0u64, 0u64);
    for (i, m) in env.memories.iter().enumerate() {
        if include(i) && m.insert_step < steps {
            hits += exposure[i];
            live += (steps - m.insert_step) as u64;
        }
    }
    if live == 0 {
        0.0
    } else {
        hits as f64 / live as f64
    }
}

/// The id a simulated memory would carry in a store.
pub fn sim_memory_id(index: usize) -> MemoryId {
    MemoryId::new(format!("sim-{index:08}"))
}

/// One-sided exact sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // log pmf(i) = log C(n, i) - n log 2, built incrementally.
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut tail = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= wins {
            tail += (ln_c - ln2n).exp();
        }
    }
    tail.min(1.0)
}

/// Pairwise comparison of two policies over matched seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingTest {
    pub better: Policy,
    pub worse: Policy,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub mean_difference: f64,
    pub p_value: f64,
}

/// Compares `better` against `worse` on per-seed cumulative advantage.
pub fn ordering_test(runs: &[(PolicyMetrics, PolicyMetrics)]) -> Option<OrderingTest> {
    let (first, _) = runs.first()?;
    let better = first.policy;
    let worse = runs[0].1.policy;
    let (mut wins, mut losses, mut ties, mut diff) = (0, 0, 0, 0.0);
    for (a, b) in runs {
        let d = a.cum_advantage - b.cum_advantage;
        diff += d;
        match d.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    Some(OrderingTest {
        better,
        worse,
        wins,
        losses,
        ties,
        mean_difference: diff / runs.len() as f64,
        p_value: sign_test(wins, losses),
    })
}

/// Runs every policy on each seed's environment.
pub fn run_seeds(
    params: &SimParams,
    seeds: std::ops::Range<u64>,
    steps: usize,
    config: &SimConfig,
) -> Result<Vec<Vec<PolicyMetrics>>> {
    seeds
        .map(|seed| {
            let env = generate_env(params, seed)?;
            Policy::ALL.iter().map(|&p| run_policy(&env, p, steps, config)).collect()
        })
        .collect()
}

pub const CSV_HEADER: &str = "seed,policy,step,cum_advantage,exposure_rate";

/// Trace rows as CSV with [`CSV_HEADER`].
pub fn write_csv<W: Write>(out: &mut W, metrics: &[PolicyMetrics]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for m in metrics {
        for t in &m.trace {
            writeln!(out, "{},{},{},{},{}", m.seed, m.policy.name(), t.step, t.cum_advantage, t.exposure_rate)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_memory, IdGenerator, MemoryContent, MemoryFields, MemoryKind, SourceLevel};
    use crate::retrieval::retrieve;
    use approx::assert_relative_eq;

    #[test]
    fn env_is_reproducible() {
        let p = SimParams::default();
        let a = generate_env(&p, 7).unwrap();
        assert_eq!(a.digest(), generate_env(&p, 7).unwrap().digest());
        assert_ne!(a.digest(), generate_env(&p, 8).unwrap().digest());
        assert_eq!(a.task(3).unwrap(), a.task(3).unwrap());
        let back: SynthEnv = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back.digest(), a.digest());
    }

    #[test]
    fn invalid_params() {
        let one = SimParams { skills: 1, max_skills_per_task: 1, ..Default::default() };
        assert!(matches!(generate_env(&one, 0), Err(Error::InvalidParams(_))));
        let gains = SimParams { initial_gain_range: (0.2, -0.2), ..Default::default() };
        assert!(matches!(generate_env(&gains, 0), Err(Error::InvalidParams(_))));
        let env = generate_env(&SimParams::default(), 0).unwrap();
        assert!(matches!(run_policy(&env, Policy::SaCts, 0, &SimConfig::default()), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn base_difficulty_matches_its_configured_mean() {
        let env = generate_env(&SimParams::default(), 3).unwrap();
        let mean = (0..10_000).map(|t| env.task(t).unwrap().base).sum::<f64>() / 10_000.0;
        assert!((mean - env.params.base_mean).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn mid_stream_memories_arrive_in_their_window() {
        let env = generate_env(&SimParams::default(), 1).unwrap();
        let late: Vec<_> = env.memories.iter().filter(|m| m.insert_step > 0).collect();
        assert_eq!(late.len(), 16);
        assert!(late.iter().all(|m| (200..1200).contains(&m.insert_step)));
        assert!(env.memories.windows(2).all(|w| w[0].insert_step <= w[1].insert_step));
    }

    #[test]
    fn no_update_ablation_freezes_every_mean() {
        let env = generate_env(&SimParams::default(), 2).unwrap();
        let off = SimConfig { updates_enabled: false, ..Default::default() };
        let frozen = run_policy(&env, Policy::SimilarityOnly, 300, &off).unwrap();
        let short = run_policy(&env, Policy::SimilarityOnly, 1, &off).unwrap();
        for m in frozen.memories.iter().filter(|m| m.insert_step == 0) {
            assert_eq!(m.posterior, short.memories[m.index].posterior);
        }
        assert!(frozen.memories.iter().any(|m| m.retrievals > 0));
    }

    #[test]
    fn policies_see_the_same_tasks() {
        let env = generate_env(&SimParams::default(), 4).unwrap();
        let cfg = SimConfig::default();
        let runs: Vec<_> = Policy::ALL.iter().map(|&p| run_policy(&env, p, 200, &cfg).unwrap()).collect();
        assert!(runs.windows(2).all(|w| w[0].mean_base == w[1].mean_base));
    }

    #[test]
    fn sacts_selection_matches_engine_retrieval() {
        let env = generate_env(&SimParams::default(), 5).unwrap();
        let cfg = RetrievalConfig::default();
        let ids = IdGenerator::new("unused", 0);
        let arms: Vec<Arm> = (0..32)
            .map(|i| Arm {
                posterior: UtilityPosterior::new((i as f64 * 0.37).sin() * 0.5, 0.05 + (i % 5) as f64 * 0.1).unwrap(),
                retrievals: 0,
                attributed_sum: 0.0,
            })
            .collect();
        let pool: Vec<_> = arms
            .iter()
            .enumerate()
            .map(|(i, arm)| {
                let mut m = make_memory(
                    &ids,
                    MemoryFields {
                        kind: MemoryKind::GlobalProcedural,
                        title: "t".into(),
                        description: "d".into(),
                        content: MemoryContent::Text("c".into()),
                        embedding: env.memories[i].embedding.clone(),
                        posterior: arm.posterior,
                        source_level: SourceLevel::SelfSuccess,
                        step: 0,
                    },
                )
                .unwrap();
                m.id = sim_memory_id(i);
                m
            })
            .collect();
        for step in 0..20 {
            let task = env.task(step).unwrap();
            let tag = format!("probe/{step}");
            let ours = select(Policy::SaCts, &env, &arms, &task, &cfg, &mut stream(9, &tag)).unwrap();
            let theirs = retrieve(&task.embedding, pool.iter(), &cfg, &mut stream(9, &tag)).unwrap();
            assert_eq!(ours.into_iter().map(sim_memory_id).collect::<Vec<_>>(), theirs.ids());
        }
    }

    #[test]
    fn greedy_never_samples_and_starts_at_zero() {
        let env = generate_env(&SimParams::cold_start(), 0).unwrap();
        let cfg = SimConfig { updates_enabled: false, ..Default::default() };
        let m = run_policy(&env, Policy::GreedyUtility, 600, &cfg).unwrap();
        assert!(m.memories.iter().all(|o| o.posterior.mean == 0.0));
        let twice = run_policy(&env, Policy::GreedyUtility, 600, &cfg).unwrap();
        assert_eq!(m, twice);
    }

    #[test]
    fn mu_tracks_attributed_gain() {
        let env = generate_env(&SimParams::default(), 6).unwrap();
        let m = run_policy(&env, Policy::SaCts, 2000, &SimConfig::default()).unwrap();
        let checked: Vec<_> = m.memories.iter().filter(|o| o.retrievals >= 100).collect();
        assert!(!checked.is_empty());
        let ok = checked
            .iter()
            .filter(|o| (o.posterior.mean - o.attributed_gain).abs() <= 3.0 * o.posterior.std_dev())
            .count();
        assert!(ok as f64 >= 0.95 * checked.len() as f64, "{ok}/{}", checked.len());
    }

    #[test]
    fn sign_test_matches_exact_binomial() {
        // Exact rational tails computed independently.
        for (w, l, p) in [
            (63, 37, 0.006016487862681739),
            (82, 18, 3.073903307523988e-11),
            (5, 5, 0.623046875),
            (10, 0, 0.0009765625),
            (0, 10, 1.0),
            (99, 1, 7.967495142732219e-29),
            (600, 400, 1.3642320780330092e-10),
        ] {
            assert_relative_eq!(sign_test(w, l), p, max_relative = 1e-9);
        }
        assert_eq!(sign_test(0, 0), 1.0);
    }

    #[test]
    fn csv_has_documented_columns() {
        let env = generate_env(&SimParams::default(), 0).unwrap();
        let m = run_policy(&env, Policy::SaCts, 250, &SimConfig::default()).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &[m]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "seed,policy,step,cum_advantage,exposure_rate");
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[1].starts_with("0,sa_cts,100,"));
        assert!(lines[3].starts_with("0,sa_cts,250,"));
    }
}
