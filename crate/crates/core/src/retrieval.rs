//! Semantic-aware Thompson sampling over memory utility posteriors.
//!
//! A retrieval scores every candidate in a bank as
//! `(1 - lambda) * cosine(query, memory) + lambda * u`, where `u` is one fresh
//! draw from the memory's utility posterior, and keeps the top `k`.
//! New memories get a prior transferred from their nearest neighbors plus an
//! exploration bump, so they are never locked out before receiving feedback.

use crate::embedding::{cosine_sim, nearest_neighbors, EmbeddingVector};
use crate::error::{Error, Result};
use crate::model::{Memory, MemoryId, UtilityPosterior};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Weight of the sampled utility in the fused score.
    pub lambda: f64,
    pub top_k: usize,
    /// Neighbors averaged when initializing a new memory's prior.
    pub n_init: usize,
    /// Variance added to every initialized prior.
    pub epsilon_explore: f64,
    /// Prior used when a bank has no neighbors yet.
    pub prior_mean: f64,
    pub prior_variance: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { lambda: 0.1, top_k: 3, n_init: 10, epsilon_explore: 0.1, prior_mean: 0.0, prior_variance: 1.0 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.n_init == 0 {
            return Err(Error::Config("n_init must be at least 1".into()));
        }
        if !(self.epsilon_explore >= 0.0 && self.epsilon_explore.is_finite()) {
            return Err(Error::Config(format!("epsilon_explore {} must be >= 0", self.epsilon_explore)));
        }
        UtilityPosterior::new(self.prior_mean, self.prior_variance)
            .map_err(|e| Error::Config(format!("default prior: {e}")))?;
        Ok(())
    }

    pub fn default_prior(&self) -> UtilityPosterior {
        UtilityPosterior::floored(self.prior_mean, self.prior_variance)
    }
}

/// Prior for a new memory from its `n_init` nearest neighbors in `pool`.
///
/// Mean is the neighbors' average mean; variance is the average of
/// `variance_j + (mean_j - mean)^2` plus `epsilon_explore`. With fewer than
/// `n_init` neighbors all of them are used; with none, the configured default
/// prior plus `epsilon_explore` is returned.
pub fn init_posterior<'a, I>(embedding: &EmbeddingVector, pool: I, config: &RetrievalConfig) -> Result<UtilityPosterior>
where
    I: IntoIterator<Item = &'a Memory>,
{
    let pool: Vec<&Memory> = pool.into_iter().collect();
    let neighbors = nearest_neighbors(embedding, pool.iter().map(|m| (&m.id, &m.embedding)), config.n_init)?;
    let posteriors: Vec<UtilityPosterior> = neighbors
        .iter()
        .map(|(id, _)| pool.iter().find(|m| &m.id == id).expect("neighbor comes from pool").posterior)
        .collect();
    Ok(prior_from_neighbors(&posteriors, config))
}

/// The averaging step of [`init_posterior`] for an already chosen, non-empty
/// neighborhood. An empty slice yields the default prior plus exploration.
pub fn prior_from_neighbors(posteriors: &[UtilityPosterior], config: &RetrievalConfig) -> UtilityPosterior {
    let Some(&first) = posteriors.first() else {
        let prior = config.default_prior();
        return UtilityPosterior::floored(prior.mean, prior.variance + config.epsilon_explore);
    };
    // Averages are taken as offsets from the first neighbor so that a
    // unanimous neighborhood reproduces its posterior bit for bit.
    let n = posteriors.len() as f64;
    let mean = first.mean + posteriors.iter().map(|p| p.mean - first.mean).sum::<f64>() / n;
    let spread = first.variance
        + posteriors.iter().map(|p| (p.variance - first.variance) + (p.mean - mean).powi(2)).sum::<f64>() / n;
    UtilityPosterior::floored(mean, spread + config.epsilon_explore)
}

/// One Gaussian draw from `posterior`. No clamping.
pub fn sample_utility<R: Rng + ?Sized>(posterior: &UtilityPosterior, rng: &mut R) -> f64 {
    Normal::new(posterior.mean, posterior.std_dev()).expect("posterior variance is finite and positive").sample(rng)
}

pub fn fuse(similarity: f64, sampled_utility: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * similarity + lambda * sampled_utility
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub id: MemoryId,
    pub similarity: f64,
    pub sampled_utility: f64,
    pub fused_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub items: Vec<RetrievedItem>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<MemoryId> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn by_fused_then_id(a: &RetrievedItem, b: &RetrievedItem) -> Ordering {
    b.fused_score.partial_cmp(&a.fused_score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
}

/// Top-`k` memories of `pool` for `query`.
///
/// Candidates are visited in ascending id order and each receives exactly one
/// utility draw, so the result is a pure function of the pool, query, config
/// and RNG state.
pub fn retrieve<'a, I, R>(
    query: &EmbeddingVector,
    pool: I,
    config: &RetrievalConfig,
    rng: &mut R,
) -> Result<RetrievalResult>
where
    I: IntoIterator<Item = &'a Memory>,
    R: Rng + ?Sized,
{
    let mut candidates: Vec<&Memory> = pool.into_iter().collect();
    candidates.sort_by(|a, b| a.id.cmp(&b.id));
    let mut items = Vec::with_capacity(candidates.len());
    for m in candidates {
        let similarity = cosine_sim(query, &m.embedding)?;
        let sampled_utility = sample_utility(&m.posterior, rng);
        items.push(RetrievedItem {
            id: m.id.clone(),
            similarity,
            sampled_utility,
            fused_score: fuse(similarity, sampled_utility, config.lambda),
        });
    }
    items.sort_by(by_fused_then_id);
    items.truncate(config.top_k);
    Ok(RetrievalResult { items })
}
