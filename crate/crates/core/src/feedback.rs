//! Advantage signals and the conjugate Gaussian utility update.

use crate::error::{Error, Result};
use crate::model::{MemoryId, UtilityPosterior};
use crate::store::MemoryStore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateConfig {
    /// Likelihood noise variance of one advantage observation.
    pub sigma_noise_sq: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self { sigma_noise_sq: 1.0 }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_noise_sq > 0.0 && self.sigma_noise_sq.is_finite()) {
            return Err(Error::Config(format!("sigma_noise_sq {} must be > 0", self.sigma_noise_sq)));
        }
        Ok(())
    }
}

/// Outcome of a pairwise comparison between memory-augmented and base output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairwiseOutcome {
    MemWins,
    BaseWins,
    Tie,
}

/// `s_mem - s_base` for binary scores.
pub fn advantage_verifiable(s_mem: u8, s_base: u8) -> i8 {
    debug_assert!(s_mem <= 1 && s_base <= 1);
    s_mem as i8 - s_base as i8
}

/// Indicator that the memory-augmented output won. Ties count as not winning.
pub fn advantage_pairwise(outcome: PairwiseOutcome) -> u8 {
    u8::from(outcome == PairwiseOutcome::MemWins)
}

/// Conjugate update of a Gaussian prior with one observation `r` of noise
/// variance `sigma_noise_sq`. The posterior variance is floored.
pub fn bayes_update(prior: &UtilityPosterior, r: f64, config: &UpdateConfig) -> UtilityPosterior {
    let s2 = prior.variance;
    let n2 = config.sigma_noise_sq;
    let mean = (s2 * r + n2 * prior.mean) / (s2 + n2);
    let variance = (s2 * n2) / (s2 + n2);
    UtilityPosterior::floored(mean, variance)
}

/// Applies one advantage observation to every retrieved memory.
///
/// All ids are checked before anything is written, so an unknown id leaves
/// the store untouched.
pub fn apply_feedback(
    store: &mut MemoryStore,
    retrieved: &[MemoryId],
    r_adv: f64,
    config: &UpdateConfig,
) -> Result<()> {
    if retrieved.is_empty() {
        return Ok(());
    }
    if store.is_frozen() {
        return Err(Error::FrozenStoreMutation);
    }
    if let Some(missing) = retrieved.iter().find(|id| !store.contains(id)) {
        return Err(Error::UnknownMemoryId(missing.clone()));
    }
    for id in retrieved {
        let m = store.get_mut(id)?;
        m.posterior = bayes_update(&m.posterior, r_adv, config);
        m.feedback_count += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::test_embed;
    use crate::model::{make_memory, MemoryContent, MemoryFields, MemoryKind, SourceLevel, VARIANCE_FLOOR};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn post(m: f64, v: f64) -> UtilityPosterior {
        UtilityPosterior::new(m, v).unwrap()
    }

    /// Closed-form posterior after `n` identical observations `r`.
    fn conjugate_oracle(prior: UtilityPosterior, r: f64, n: u32, noise: f64) -> UtilityPosterior {
        let n = f64::from(n);
        let denom = n * prior.variance + noise;
        UtilityPosterior {
            mean: (prior.variance * n * r + noise * prior.mean) / denom,
            variance: prior.variance * noise / denom,
        }
    }

    #[test]
    fn advantage_tables() {
        assert_eq!(advantage_verifiable(1, 0), 1);
        assert_eq!(advantage_verifiable(1, 1), 0);
        assert_eq!(advantage_verifiable(0, 1), -1);
        assert_eq!(advantage_pairwise(PairwiseOutcome::MemWins), 1);
        assert_eq!(advantage_pairwise(PairwiseOutcome::BaseWins), 0);
        assert_eq!(advantage_pairwise(PairwiseOutcome::Tie), 0);
    }

    #[test]
    fn single_updates() {
        let c = UpdateConfig::default();
        let p = bayes_update(&post(0.0, 1.0), 1.0, &c);
        assert_abs_diff_eq!(p.mean, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variance, 0.5, epsilon = 1e-15);
        let p = bayes_update(&p, 1.0, &c);
        assert_abs_diff_eq!(p.mean, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variance, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fifty_updates_match_closed_form() {
        let c = UpdateConfig::default();
        let mut p = post(0.0, 1.0);
        for _ in 0..50 {
            p = bayes_update(&p, 1.0, &c);
        }
        assert_abs_diff_eq!(p.mean, 50.0 / 51.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance, 1.0 / 51.0, epsilon = 1e-12);
        let o = conjugate_oracle(post(0.0, 1.0), 1.0, 50, 1.0);
        assert_abs_diff_eq!(p.mean, o.mean, epsilon = 1e-12);
    }

    #[test]
    fn variance_never_drops_below_floor() {
        let c = UpdateConfig { sigma_noise_sq: 1e-9 };
        let p = bayes_update(&post(0.0, 1e-6), 1.0, &c);
        assert_eq!(p.variance, VARIANCE_FLOOR);
    }

    fn store_with(priors: &[(f64, f64)]) -> (MemoryStore, Vec<MemoryId>) {
        let mut s = MemoryStore::new("fb", 64, "p");
        let mut ids = vec![];
        for (i, (m, v)) in priors.iter().enumerate() {
            let mem = make_memory(
                s.ids(),
                MemoryFields {
                    kind: MemoryKind::LocalCorrective,
                    title: format!("m{i}"),
                    description: "d".into(),
                    content: MemoryContent::Text("c".into()),
                    embedding: test_embed(&format!("m{i}")),
                    posterior: post(*m, *v),
                    source_level: SourceLevel::Teacher,
                    step: 0,
                },
            )
            .unwrap();
            ids.push(mem.id.clone());
            s.insert(mem).unwrap();
        }
        (s, ids)
    }

    #[test]
    fn apply_feedback_updates_only_retrieved() {
        let (mut s, ids) = store_with(&[(0.4, 0.2), (0.4, 0.2), (0.4, 0.2), (0.9, 0.3)]);
        let before = s.get(&ids[3]).unwrap().clone();
        apply_feedback(&mut s, &ids[..3], 0.0, &UpdateConfig::default()).unwrap();
        for id in &ids[..3] {
            let m = s.get(id).unwrap();
            assert_abs_diff_eq!(m.posterior.mean, 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m.posterior.variance, 1.0 / 6.0, epsilon = 1e-15);
            assert_eq!(m.feedback_count, 1);
        }
        assert_eq!(s.get(&ids[3]).unwrap(), &before);
    }

    #[test]
    fn apply_feedback_empty_is_noop() {
        let (mut s, _) = store_with(&[(0.1, 0.5)]);
        let d = s.digest();
        apply_feedback(&mut s, &[], 1.0, &UpdateConfig::default()).unwrap();
        assert_eq!(d, s.digest());
    }

    #[test]
    fn apply_feedback_unknown_id_is_atomic() {
        let (mut s, ids) = store_with(&[(0.1, 0.5)]);
        let d = s.digest();
        let err = apply_feedback(&mut s, &[ids[0].clone(), MemoryId::new("ghost")], 1.0, &UpdateConfig::default());
        assert!(matches!(err, Err(Error::UnknownMemoryId(_))));
        assert_eq!(d, s.digest());
    }

    #[test]
    fn repeated_feedback_matches_two_observation_posterior() {
        let (mut s, ids) = store_with(&[(0.4, 0.2)]);
        let c = UpdateConfig::default();
        apply_feedback(&mut s, &ids, 1.0, &c).unwrap();
        apply_feedback(&mut s, &ids, 1.0, &c).unwrap();
        let o = conjugate_oracle(post(0.4, 0.2), 1.0, 2, 1.0);
        let p = s.get(&ids[0]).unwrap().posterior;
        assert_abs_diff_eq!(p.mean, o.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance, o.variance, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn variance_strictly_decreases(m in -3.0f64..3.0, v in 1e-3f64..5.0, r in -1.0f64..1.0, n in 0.1f64..5.0) {
            let p = bayes_update(&post(m, v), r, &UpdateConfig { sigma_noise_sq: n });
            prop_assert!(p.variance < v);
        }

        #[test]
        fn mean_is_fixed_point_at_observation(r in -2.0f64..2.0, v in 1e-3f64..5.0) {
            let p = bayes_update(&post(r, v), r, &UpdateConfig::default());
            prop_assert!((p.mean - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }

        #[test]
        fn mean_stays_in_convex_hull(m in -3.0f64..3.0, v in 1e-3f64..5.0, r in -1.0f64..1.0) {
            let p = bayes_update(&post(m, v), r, &UpdateConfig::default());
            let (lo, hi) = if m < r { (m, r) } else { (r, m) };
            prop_assert!(p.mean >= lo - 1e-12 && p.mean <= hi + 1e-12);
        }

        #[test]
        fn identical_observation_order_is_irrelevant(
            m in -1.0f64..1.0, v in 0.01f64..3.0, r in -1.0f64..1.0, n in 1u32..30,
        ) {
            let c = UpdateConfig::default();
            let mut seq = post(m, v);
            for _ in 0..n {
                seq = bayes_update(&seq, r, &c);
            }
            let o = conjugate_oracle(post(m, v), r, n, 1.0);
            prop_assert!((seq.mean - o.mean).abs() < 1e-12);
            prop_assert!((seq.variance - o.variance).abs() < 1e-12);
        }
    }
}
