//! Ready-made enumerable training instances.
//!
//! A [`TabularInstance`] bundles everything the exact machinery needs —
//! enumeration, reference policy, demonstrations, regularization strength,
//! and optional reward clamp. The builders here are used by the oracle
//! battery, the test suite, and anyone wanting a known-answer problem:
//! [`point_demo_instance`] is the canonical one-prompt/three-continuation
//! problem whose optimum has a closed form, and [`random_instance`] draws
//! seeded small instances for gradient-hygiene sweeps.

use std::sync::Arc;

use crate::domain::{Continuation, DemoPair, DemoSet, Prompt, Vocab};
use crate::error::Result;
use crate::params::ParamVector;
use crate::policy::TabularPolicy;
use crate::reward::{Beta, TabularReward};
use crate::rng::Rng;
use crate::tabular::{single_token_index, TabularIndex};

/// An enumerable reward-learning problem: learn a reward (or policy) that
/// explains `demos` against `reference` at strength `beta`, optionally with
/// rewards confined to `[0, clamp_max]`.
#[derive(Debug, Clone)]
pub struct TabularInstance {
    pub index: Arc<TabularIndex>,
    pub reference: TabularPolicy,
    pub demos: DemoSet,
    pub beta: Beta,
    pub clamp_max: Option<f64>,
}

impl TabularInstance {
    /// Fresh all-zeros reward over this instance's enumeration, carrying
    /// the instance's clamp.
    pub fn zero_reward(&self) -> Result<TabularReward> {
        TabularReward::zeros(self.index.clone(), self.clamp_max)
    }
}

/// The canonical point-demonstration instance: one empty prompt, three
/// single-token continuations, uniform reference, every demonstration on
/// the last continuation, rewards clamped to `[0, r_max]`.
///
/// Its optimum is known in closed form (see `oracle::point_demo_optimum`):
/// supervised fine-tuning collapses onto the demonstrated continuation,
/// while the clamped reward-learning optimum keeps
/// `1 / (2 + exp(r_max/beta))` mass on each undemonstrated continuation.
pub fn point_demo_instance(r_max: f64, beta: f64) -> Result<TabularInstance> {
    let vocab = Vocab::with_size(3)?;
    let index = single_token_index(vocab.clone(), 1)?;
    let reference = TabularPolicy::uniform(index.clone());
    let demos = DemoSet::new(
        vocab,
        vec![DemoPair {
            prompt: Prompt::empty(),
            continuation: Continuation::new(vec![2])?,
        }],
    )?;
    Ok(TabularInstance {
        index,
        reference,
        demos,
        beta: Beta::new(beta)?,
        clamp_max: Some(r_max),
    })
}

/// Seeded random instance with at most `max_prompts` prompts and
/// `max_conts` continuations per prompt (ragged rows), plus a random
/// unclamped reward over the same enumeration. Reference logits are drawn
/// from `[-1, 1]`, reward values from `[-1, 1]`, and each prompt gets one
/// to three demonstration items (duplicates allowed, so empirical prompt
/// and conditional weights are both exercised).
pub fn random_instance(
    seed: u64,
    beta: f64,
    max_prompts: usize,
    max_conts: usize,
) -> Result<(TabularInstance, TabularReward)> {
    assert!(max_prompts >= 1 && max_conts >= 2);
    let mut rng = Rng::seed(seed);
    let n_prompts = 1 + rng.next_index(max_prompts);
    let vocab_size = max_conts.max(n_prompts).max(2);
    let vocab = Vocab::with_size(vocab_size)?;
    let prompts: Vec<Prompt> = if n_prompts == 1 {
        vec![Prompt::empty()]
    } else {
        (0..n_prompts).map(|t| Prompt::new(vec![t])).collect()
    };
    let rows: Vec<Vec<Continuation>> = (0..n_prompts)
        .map(|_| {
            let len = 2 + rng.next_index(max_conts - 1);
            (0..len)
                .map(|t| Continuation::new(vec![t]).expect("non-empty"))
                .collect()
        })
        .collect();
    let index = TabularIndex::new(vocab.clone(), prompts.clone(), rows.clone())?;

    let ref_logits: Vec<f64> = (0..index.total_cells())
        .map(|_| rng.next_f64() * 2.0 - 1.0)
        .collect();
    let reference = TabularPolicy::from_params(index.clone(), ParamVector::new(ref_logits)?)?;

    let reward_values: Vec<f64> = (0..index.total_cells())
        .map(|_| rng.next_f64() * 2.0 - 1.0)
        .collect();
    let reward = TabularReward::from_params(index.clone(), ParamVector::new(reward_values)?, None)?;

    let mut items = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let n_items = 1 + rng.next_index(3);
        for _ in 0..n_items {
            items.push(DemoPair {
                prompt: prompts[i].clone(),
                continuation: row[rng.next_index(row.len())].clone(),
            });
        }
    }
    let demos = DemoSet::new(vocab, items)?;

    Ok((
        TabularInstance {
            index,
            reference,
            demos,
            beta: Beta::new(beta)?,
            clamp_max: None,
        },
        reward,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyModel;
    use crate::reward::RewardModel;

    #[test]
    fn canonical_instance_shape() {
        let inst = point_demo_instance(1.0, 1.0).unwrap();
        assert_eq!(inst.index.n_prompts(), 1);
        assert_eq!(inst.index.row(0).len(), 3);
        assert_eq!(inst.demos.len(), 1);
        assert_eq!(inst.clamp_max, Some(1.0));
        let reward = inst.zero_reward().unwrap();
        assert_eq!(reward.clamp_max(), Some(1.0));
    }

    #[test]
    fn random_instances_are_seed_stable_and_in_bounds() {
        for seed in 0..20 {
            let (a, ra) = random_instance(seed, 1.0, 3, 5).unwrap();
            let (b, rb) = random_instance(seed, 1.0, 3, 5).unwrap();
            assert_eq!(a.reference.params(), b.reference.params());
            assert_eq!(ra.params(), rb.params());
            assert_eq!(a.demos.items(), b.demos.items());
            assert!(a.index.n_prompts() <= 3);
            for i in 0..a.index.n_prompts() {
                let len = a.index.row(i).len();
                assert!((2..=5).contains(&len));
            }
        }
    }

    #[test]
    fn random_instances_vary_with_seed() {
        let (a, _) = random_instance(1, 1.0, 3, 5).unwrap();
        let (b, _) = random_instance(2, 1.0, 3, 5).unwrap();
        let differ = a.index.total_cells() != b.index.total_cells()
            || a.reference.params() != b.reference.params();
        assert!(differ);
    }
}
