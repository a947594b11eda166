//! Ground-truth worlds: a hidden reward, the expert policy it induces, and
//! seeded samplers for demonstration and preference datasets. Because the
//! reward that generated the data is known, every downstream experiment
//! has checkable ground truth — learned rewards can be scored against the
//! hidden one, and learned policies against the expert.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, ModelCheckpoint};
use crate::domain::{Continuation, DemoPair, DemoSet, PrefSet, PrefTriple, Prompt, Vocab};
use crate::error::{CoreError, Result};
use crate::numerics::sigmoid;
use crate::policy::{PolicyModel, TabularPolicy};
use crate::reward::{induced_policy, Beta, FeaturizedReward, RewardModel, TabularReward};
use crate::rng::Rng;

/// Attempts at drawing a distinct continuation pair before giving up.
const DISTINCT_RETRIES: usize = 32;
/// Attempts at re-drawing a pair whose rewards tie exactly before the item
/// is skipped.
const TIE_RETRIES: usize = 32;

/// The hidden reward of a world.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Tabular(TabularReward),
    Featurized(FeaturizedReward),
}

impl GroundTruth {
    pub fn as_reward(&self) -> &dyn RewardModel {
        match self {
            GroundTruth::Tabular(r) => r,
            GroundTruth::Featurized(r) => r,
        }
    }
}

/// A fully specified synthetic environment: prompt distribution, hidden
/// reward, reference policy, and the strength at which the expert is
/// induced from them.
#[derive(Debug, Clone)]
pub struct World {
    vocab: Vocab,
    prompts: Vec<Prompt>,
    prompt_weights: Vec<f64>,
    pub gt_reward: GroundTruth,
    pub reference: TabularPolicy,
    pub beta_star: Beta,
}

impl World {
    pub fn new(
        prompts: Vec<Prompt>,
        prompt_weights: Vec<f64>,
        gt_reward: GroundTruth,
        reference: TabularPolicy,
        beta_star: Beta,
    ) -> Result<Self> {
        if prompts.is_empty() {
            return Err(CoreError::validation("world needs at least one prompt"));
        }
        if prompt_weights.len() != prompts.len() {
            return Err(CoreError::validation(format!(
                "{} weights for {} prompts",
                prompt_weights.len(),
                prompts.len()
            )));
        }
        let sum: f64 = prompt_weights.iter().sum();
        if prompt_weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-12
        {
            return Err(CoreError::validation(
                "prompt weights must be nonnegative and sum to 1",
            ));
        }
        for p in &prompts {
            if reference.index().prompt_index(p).is_none() {
                return Err(CoreError::mismatch(format!(
                    "world prompt {:?} is not in the reference's enumeration",
                    p.tokens()
                )));
            }
        }
        match &gt_reward {
            GroundTruth::Tabular(r) => {
                if r.index() != reference.index() {
                    return Err(CoreError::mismatch(
                        "ground-truth reward enumerates a different table than the reference",
                    ));
                }
            }
            GroundTruth::Featurized(r) => {
                if r.vocab_size() != reference.vocab_size() {
                    return Err(CoreError::mismatch(format!(
                        "ground-truth reward vocabulary ({}) differs from the reference's ({})",
                        r.vocab_size(),
                        reference.vocab_size()
                    )));
                }
            }
        }
        let vocab = reference.index().vocab().clone();
        Ok(World {
            vocab,
            prompts,
            prompt_weights,
            gt_reward,
            reference,
            beta_star,
        })
    }

    /// Equal weight on every prompt.
    pub fn with_uniform_prompts(
        prompts: Vec<Prompt>,
        gt_reward: GroundTruth,
        reference: TabularPolicy,
        beta_star: Beta,
    ) -> Result<Self> {
        let w = 1.0 / prompts.len().max(1) as f64;
        let weights = vec![w; prompts.len()];
        World::new(prompts, weights, gt_reward, reference, beta_star)
    }

    /// The expert: the policy the hidden reward induces from the reference
    /// at `beta_star`. Recomputed from stored fields, never cached, so a
    /// reloaded world reproduces it exactly.
    pub fn expert(&self) -> Result<TabularPolicy> {
        induced_policy(self.gt_reward.as_reward(), &self.reference, self.beta_star)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn prompt_weights(&self) -> &[f64] {
        &self.prompt_weights
    }

    fn draw_prompt(&self, rng: &mut Rng) -> &Prompt {
        &self.prompts[rng.categorical(&self.prompt_weights)]
    }
}

/// Draws `n` (prompt, continuation) pairs: prompts from the world's
/// weights, continuations from the expert. Item `i` consumes only
/// `rng.child(i)`, so items are independent and the set is reproducible.
pub fn synth_demo(world: &World, n: usize, rng: &Rng) -> Result<DemoSet> {
    if n < 1 {
        return Err(CoreError::validation("n must be at least 1"));
    }
    let expert = world.expert()?;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut stream = rng.child(i as u64);
        let prompt = world.draw_prompt(&mut stream).clone();
        let continuation = expert.sample(&prompt, &mut stream)?;
        items.push(DemoPair {
            prompt,
            continuation,
        });
    }
    DemoSet::new(world.vocab.clone(), items)
}

/// How preference labels are assigned once a pair is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// The higher ground-truth reward is chosen; exact ties are redrawn a
    /// bounded number of times, then the item is skipped.
    Deterministic,
    /// Chosen with probability `sigmoid(r(a) - r(b))` — noisy labels for
    /// robustness experiments.
    BradleyTerry,
}

/// Draws preference triples: two distinct continuations per item from
/// `sampler`, labeled by the world's hidden reward. Deterministic given
/// `rng`; item `i` consumes only `rng.child(i)`.
///
/// A sampler too concentrated to produce distinct pairs within the retry
/// budget is an error naming the prompt. Under deterministic labeling,
/// exact reward ties are redrawn and eventually skipped, so the result may
/// hold fewer than `n` items.
pub fn synth_pref(
    world: &World,
    sampler: &dyn PolicyModel,
    n: usize,
    rng: &Rng,
) -> Result<PrefSet> {
    synth_pref_labeled(world, sampler, n, rng, Labeling::Deterministic)
}

/// [`synth_pref`] with an explicit labeling mode.
pub fn synth_pref_labeled(
    world: &World,
    sampler: &dyn PolicyModel,
    n: usize,
    rng: &Rng,
    labeling: Labeling,
) -> Result<PrefSet> {
    if n < 1 {
        return Err(CoreError::validation("n must be at least 1"));
    }
    if sampler.vocab_size() != world.vocab.size() {
        return Err(CoreError::mismatch(format!(
            "sampler vocabulary ({}) differs from the world's ({})",
            sampler.vocab_size(),
            world.vocab.size()
        )));
    }
    let gt = world.gt_reward.as_reward();
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut stream = rng.child(i as u64);
        let prompt = world.draw_prompt(&mut stream).clone();
        let mut labeled = None;
        for _ in 0..TIE_RETRIES {
            let (a, b) = draw_distinct(sampler, &prompt, &mut stream)?;
            let ra = gt.value(&prompt, &a)?;
            let rb = gt.value(&prompt, &b)?;
            match labeling {
                Labeling::Deterministic => {
                    if ra > rb {
                        labeled = Some((a, b));
                    } else if rb > ra {
                        labeled = Some((b, a));
                    } else {
                        continue; // exact tie: redraw the pair
                    }
                }
                Labeling::BradleyTerry => {
                    labeled = if stream.next_f64() < sigmoid(ra - rb) {
                        Some((a, b))
                    } else {
                        Some((b, a))
                    };
                }
            }
            break;
        }
        if let Some((chosen, rejected)) = labeled {
            items.push(PrefTriple {
                prompt,
                chosen,
                rejected,
            });
        }
        // else: every redraw tied — skip the item.
    }
    if items.is_empty() {
        return Err(CoreError::validation(
            "every drawn pair tied under the ground-truth reward; no preference items produced",
        ));
    }
    PrefSet::new(world.vocab.clone(), items)
}

fn draw_distinct(
    sampler: &dyn PolicyModel,
    prompt: &Prompt,
    rng: &mut Rng,
) -> Result<(Continuation, Continuation)> {
    for _ in 0..DISTINCT_RETRIES {
        let a = sampler.sample(prompt, rng)?;
        let b = sampler.sample(prompt, rng)?;
        if a != b {
            return Ok((a, b));
        }
    }
    Err(CoreError::validation(format!(
        "sampler produced no distinct continuation pair for prompt {:?} in {DISTINCT_RETRIES} attempts",
        prompt.tokens()
    )))
}

/// On-disk form: a JSON descriptor holding the prompt distribution and the
/// strength, with the two models stored as checkpoint files next to it.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDescriptor {
    prompts: Vec<Vec<usize>>,
    prompt_weights: Vec<f64>,
    beta_star: f64,
    gt_reward_file: String,
    reference_file: String,
}

/// Writes `world.json`, `gt_reward.ckpt`, and `reference.ckpt` into `dir`;
/// returns the descriptor path.
pub fn save_world(world: &World, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let gt_file = "gt_reward.ckpt";
    let ref_file = "reference.ckpt";
    let gt_model = match &world.gt_reward {
        GroundTruth::Tabular(r) => ModelCheckpoint::TabularReward(r.clone()),
        GroundTruth::Featurized(r) => ModelCheckpoint::FeaturizedReward(r.clone()),
    };
    checkpoint::save_to_path(&gt_model, &dir.join(gt_file))?;
    checkpoint::save_to_path(
        &ModelCheckpoint::TabularPolicy(world.reference.clone()),
        &dir.join(ref_file),
    )?;
    let descriptor = WorldDescriptor {
        prompts: world.prompts.iter().map(|p| p.tokens().to_vec()).collect(),
        prompt_weights: world.prompt_weights.clone(),
        beta_star: world.beta_star.value(),
        gt_reward_file: gt_file.to_string(),
        reference_file: ref_file.to_string(),
    };
    let path = dir.join("world.json");
    std::fs::write(&path, serde_json::to_string_pretty(&descriptor)? + "\n")?;
    Ok(path)
}

/// Reads a world back from its descriptor; model paths resolve relative to
/// the descriptor's directory.
pub fn load_world(descriptor_path: &Path) -> Result<World> {
    let text = std::fs::read_to_string(descriptor_path)?;
    let descriptor: WorldDescriptor =
        serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            line: e.line(),
            message: format!("world descriptor: {e}"),
        })?;
    let dir = descriptor_path.parent().unwrap_or_else(|| Path::new("."));
    let reference = match checkpoint::load_from_path(&dir.join(&descriptor.reference_file))? {
        ModelCheckpoint::TabularPolicy(p) => p,
        other => {
            return Err(CoreError::mismatch(format!(
                "world reference must be a tabular policy, found {}",
                other.family()
            )))
        }
    };
    let gt_reward = match checkpoint::load_from_path(&dir.join(&descriptor.gt_reward_file))? {
        ModelCheckpoint::TabularReward(r) => GroundTruth::Tabular(r),
        ModelCheckpoint::FeaturizedReward(r) => GroundTruth::Featurized(r),
        other => {
            return Err(CoreError::mismatch(format!(
                "world ground truth must be a reward model, found {}",
                other.family()
            )))
        }
    };
    World::new(
        descriptor.prompts.into_iter().map(Prompt::new).collect(),
        descriptor.prompt_weights,
        gt_reward,
        reference,
        Beta::new(descriptor.beta_star)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{bt_diagnostic, PairScorer};
    use crate::instances::point_demo_instance;
    use crate::params::ParamVector;

    fn point_world(r_max: f64, beta_star: f64) -> World {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.0, 0.0, r_max]).unwrap(),
            None,
        )
        .unwrap();
        World::with_uniform_prompts(
            vec![Prompt::empty()],
            GroundTruth::Tabular(reward),
            instance.reference,
            Beta::new(beta_star).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn demo_sets_are_seed_stable() {
        let world = point_world(1.0, 1.0);
        let a = synth_demo(&world, 50, &Rng::seed(3)).unwrap();
        let b = synth_demo(&world, 50, &Rng::seed(3)).unwrap();
        let c = synth_demo(&world, 50, &Rng::seed(4)).unwrap();
        assert_eq!(a.items(), b.items());
        assert_ne!(a.items(), c.items());
    }

    #[test]
    fn huge_beta_star_reproduces_the_reference() {
        let world = point_world(1.0, 1e9);
        let n = 100_000;
        let demos = synth_demo(&world, n, &Rng::seed(0)).unwrap();
        let mut counts = [0usize; 3];
        for item in demos.items() {
            counts[item.continuation.tokens()[0]] += 1;
        }
        let bound = 4.0 / (n as f64).sqrt();
        for c in counts {
            let tv_term = (c as f64 / n as f64 - 1.0 / 3.0).abs();
            assert!(tv_term < bound, "{counts:?}");
        }
    }

    #[test]
    fn dominant_reward_concentrates_the_demos() {
        let world = point_world(50.0, 1.0);
        let n = 5_000;
        let demos = synth_demo(&world, n, &Rng::seed(1)).unwrap();
        let hits = demos
            .items()
            .iter()
            .filter(|d| d.continuation.tokens() == [2])
            .count();
        assert!(hits as f64 >= 0.999 * n as f64, "{hits}/{n}");
    }

    #[test]
    fn preference_labels_match_the_hidden_reward_exactly() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.2, 0.9, 0.5]).unwrap(),
            None,
        )
        .unwrap();
        let world = World::with_uniform_prompts(
            vec![Prompt::empty()],
            GroundTruth::Tabular(reward.clone()),
            instance.reference.clone(),
            Beta::new(1.0).unwrap(),
        )
        .unwrap();
        let prefs = synth_pref(&world, &instance.reference, 300, &Rng::seed(9)).unwrap();
        assert!(!prefs.items().is_empty());
        for t in prefs.items() {
            let rc = reward.value(&t.prompt, &t.chosen).unwrap();
            let rr = reward.value(&t.prompt, &t.rejected).unwrap();
            assert!(rc > rr);
        }
        let report = bt_diagnostic(&PairScorer::Explicit(&reward), &prefs).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn point_mass_sampler_is_rejected_by_name() {
        let world = point_world(1.0, 1.0);
        let sampler = TabularPolicy::from_params(
            world.reference.index().clone(),
            ParamVector::new(vec![0.0, 0.0, 80.0]).unwrap(),
        )
        .unwrap();
        let err = synth_pref(&world, &sampler, 5, &Rng::seed(0)).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("distinct"), "{msg}");
        assert!(msg.contains("[]"), "error should name the prompt: {msg}");
    }

    #[test]
    fn noisy_labeling_inverts_some_labels_but_stays_seeded() {
        let instance = point_demo_instance(1.0, 1.0).unwrap();
        let reward = TabularReward::from_params(
            instance.index.clone(),
            ParamVector::new(vec![0.2, 0.9, 0.5]).unwrap(),
            None,
        )
        .unwrap();
        let world = World::with_uniform_prompts(
            vec![Prompt::empty()],
            GroundTruth::Tabular(reward.clone()),
            instance.reference.clone(),
            Beta::new(1.0).unwrap(),
        )
        .unwrap();
        let noisy = synth_pref_labeled(
            &world,
            &instance.reference,
            400,
            &Rng::seed(2),
            Labeling::BradleyTerry,
        )
        .unwrap();
        let again = synth_pref_labeled(
            &world,
            &instance.reference,
            400,
            &Rng::seed(2),
            Labeling::BradleyTerry,
        )
        .unwrap();
        assert_eq!(noisy.items(), again.items());
        let report = bt_diagnostic(&PairScorer::Explicit(&reward), &noisy).unwrap();
        assert!(report.accuracy < 1.0, "noise should flip some labels");
        assert!(report.accuracy > 0.5, "labels should still lean correct");
    }

    #[test]
    fn world_round_trips_through_its_descriptor() {
        let world = point_world(2.0, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let descriptor = save_world(&world, dir.path()).unwrap();
        let back = load_world(&descriptor).unwrap();
        assert_eq!(back.prompts(), world.prompts());
        assert_eq!(back.prompt_weights(), world.prompt_weights());
        assert_eq!(back.beta_star.value(), world.beta_star.value());
        let tv = crate::oracle::policy_tv(&back.expert().unwrap(), &world.expert().unwrap());
        assert!(tv < 1e-15);
        // Same seed, same data, straight through the reload.
        let a = synth_demo(&world, 40, &Rng::seed(8)).unwrap();
        let b = synth_demo(&back, 40, &Rng::seed(8)).unwrap();
        assert_eq!(a.items(), b.items());
    }

    #[test]
    fn mismatched_sampler_vocab_is_refused() {
        let world = point_world(1.0, 1.0);
        let other = crate::tabular::single_token_index(Vocab::with_size(4).unwrap(), 1).unwrap();
        let sampler = TabularPolicy::uniform(other);
        let err = synth_pref(&world, &sampler, 5, &Rng::seed(0)).err().unwrap();
        assert!(err.to_string().contains("vocabulary"), "{err}");
    }
}
