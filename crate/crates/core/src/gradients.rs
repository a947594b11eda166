//! Gradient kernels and exact objectives for reward learning from
//! demonstrations.
//!
//! The training problem is maximum-likelihood inverse RL: find reward
//! parameters whose KL-regularized optimal policy explains the
//! demonstrations. Collapsing the two levels gives the concave objective
//!
//! ```text
//! l(theta) = E_demo[ r(x,y)/beta - log sum_y' pi_ref(y'|x) exp(r(x,y')/beta) ]
//! ```
//!
//! ([`ml_irl_objective`]), whose gradient is a demo-versus-model contrast:
//! [`rft_reward_gradient`] is the single-sample estimator
//! `(grad r(x,y) - grad r(x,y~)) / beta` with `y~` drawn from the current
//! induced policy. The same objective has a minimax form
//! ([`minimax_value`]) whose inner minimizer is exactly the induced policy.
//!
//! When the policy is parameterized directly and the reward is implicit in
//! its log-ratio against the reference, the contrast becomes
//! [`irft_gradient`]: `h'(margin) * (grad log pi(y|x) - grad log pi(y~|x))`
//! where the margin is the implicit-reward difference and `h` shapes the
//! surrogate ([`SurrogateShape`]). With `h = identity` this is the
//! self-generation gradient whose expectation over enumerable instances
//! matches the explicit-reward gradient; `h = log_sigmoid` is the
//! pairwise-logistic variant used by self-play fine-tuning.

use serde::{Deserialize, Serialize};

use crate::domain::{Continuation, DemoPair, DemoSet, Prompt};
use crate::error::{CoreError, Result};
use crate::numerics::{log_sigmoid, logsumexp, sigmoid};
use crate::params::{mean_of, ParamVector};
use crate::policy::{PolicyModel, TabularPolicy};
use crate::reward::{Beta, RewardModel};

/// Shape of the pairwise surrogate applied to the implicit-reward margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateShape {
    /// `h(t) = t`; the raw self-generation contrast.
    Identity,
    /// `h(t) = log sigmoid(t)`, computed as `-ln(1 + exp(-t))` branch-wise
    /// for stability. Saturates on well-separated pairs.
    LogSigmoid,
}

impl SurrogateShape {
    pub fn h(self, t: f64) -> f64 {
        match self {
            SurrogateShape::Identity => t,
            SurrogateShape::LogSigmoid => log_sigmoid(t),
        }
    }

    /// Derivative of the surrogate: 1 for identity, `sigmoid(-t)` for
    /// log-sigmoid (so a zero margin scales the gradient by 0.5).
    pub fn h_prime(self, t: f64) -> f64 {
        match self {
            SurrogateShape::Identity => 1.0,
            SurrogateShape::LogSigmoid => sigmoid(-t),
        }
    }
}

/// One training triple: a prompt, a demonstrated continuation, and a
/// synthetic continuation sampled from a model.
#[derive(Debug, Clone, Copy)]
pub struct GradSample<'a> {
    pub prompt: &'a Prompt,
    pub demo: &'a Continuation,
    pub synthetic: &'a Continuation,
}

/// Mean log-likelihood gradient over a batch of demonstrations — the
/// supervised fine-tuning ascent direction.
pub fn sft_gradient<P: PolicyModel + ?Sized>(
    policy: &P,
    batch: &[&DemoPair],
) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(CoreError::validation("empty batch"));
    }
    let grads: Vec<ParamVector> = batch
        .iter()
        .map(|pair| policy.grad_log_prob(&pair.prompt, &pair.continuation))
        .collect::<Result<_>>()?;
    mean_of(&grads)
}

/// Single-sample explicit-reward gradient:
/// `(grad r(x, y) - grad r(x, y~)) / beta`. A synthetic continuation equal
/// to the demonstration contributes exactly zero.
pub fn rft_reward_gradient<R: RewardModel + ?Sized>(
    reward: &R,
    sample: &GradSample<'_>,
    beta: Beta,
) -> Result<ParamVector> {
    let mut g = reward.grad(sample.prompt, sample.demo)?;
    let g_synth = reward.grad(sample.prompt, sample.synthetic)?;
    g.add_scaled(-1.0, &g_synth)?;
    for v in g.as_mut_slice() {
        *v /= beta.value();
    }
    Ok(g)
}

/// Batch mean of [`rft_reward_gradient`].
pub fn rft_reward_gradient_batch<R: RewardModel + ?Sized>(
    reward: &R,
    samples: &[GradSample<'_>],
    beta: Beta,
) -> Result<ParamVector> {
    if samples.is_empty() {
        return Err(CoreError::validation("empty batch"));
    }
    let grads: Vec<ParamVector> = samples
        .iter()
        .map(|s| rft_reward_gradient(reward, s, beta))
        .collect::<Result<_>>()?;
    mean_of(&grads)
}

/// Single-sample implicit-reward gradient.
///
/// With margin
/// `delta = [log pi(y|x) - log pi_ref(y|x)] - [log pi(y~|x) - log pi_ref(y~|x)]`
/// and contrast `g = grad log pi(y|x) - grad log pi(y~|x)`, returns
/// `h'(delta) * g`. This is the gradient of the per-sample surrogate
/// `h(delta)` in the policy's own parameters; the reference enters only
/// through the margin.
pub fn irft_gradient<P: PolicyModel + ?Sized, Q: PolicyModel + ?Sized>(
    policy: &P,
    reference: &Q,
    sample: &GradSample<'_>,
    h: SurrogateShape,
) -> Result<ParamVector> {
    let delta = irft_margin(policy, reference, sample)?;
    let mut g = policy.grad_log_prob(sample.prompt, sample.demo)?;
    let g_synth = policy.grad_log_prob(sample.prompt, sample.synthetic)?;
    g.add_scaled(-1.0, &g_synth)?;
    let scale = h.h_prime(delta);
    for v in g.as_mut_slice() {
        *v *= scale;
    }
    Ok(g)
}

/// The implicit-reward margin `delta` of a sample (see [`irft_gradient`]).
pub fn irft_margin<P: PolicyModel + ?Sized, Q: PolicyModel + ?Sized>(
    policy: &P,
    reference: &Q,
    sample: &GradSample<'_>,
) -> Result<f64> {
    let demo_ratio = policy.log_prob(sample.prompt, sample.demo)?
        - reference.log_prob(sample.prompt, sample.demo)?;
    let synth_ratio = policy.log_prob(sample.prompt, sample.synthetic)?
        - reference.log_prob(sample.prompt, sample.synthetic)?;
    Ok(demo_ratio - synth_ratio)
}

/// Batch mean of [`irft_gradient`].
pub fn irft_gradient_batch<P: PolicyModel + ?Sized, Q: PolicyModel + ?Sized>(
    policy: &P,
    reference: &Q,
    samples: &[GradSample<'_>],
    h: SurrogateShape,
) -> Result<ParamVector> {
    if samples.is_empty() {
        return Err(CoreError::validation("empty batch"));
    }
    let grads: Vec<ParamVector> = samples
        .iter()
        .map(|s| irft_gradient(policy, reference, s, h))
        .collect::<Result<_>>()?;
    mean_of(&grads)
}

/// Weighted demo groups over a tabular reference's enumeration:
/// `(prompt row, prompt weight, per-item continuation column, group size)`.
struct DemoGroups {
    /// One entry per distinct prompt: (row index, weight, columns of the
    /// group's demo continuations).
    groups: Vec<(usize, f64, Vec<usize>)>,
}

impl DemoGroups {
    fn build(reference: &TabularPolicy, demos: &DemoSet) -> Result<Self> {
        let index = reference.index();
        let (prompts, weights) = demos.prompt_distribution();
        let by_prompt = demos.items_by_prompt();
        let mut groups = Vec::with_capacity(prompts.len());
        for ((prompt, item_ids), weight) in by_prompt.into_iter().zip(weights) {
            let row = index.prompt_index(&prompt).ok_or_else(|| {
                CoreError::mismatch(format!(
                    "demo prompt {:?} not in the enumeration",
                    prompt.tokens()
                ))
            })?;
            let mut cols = Vec::with_capacity(item_ids.len());
            for id in item_ids {
                let y = &demos.items()[id].continuation;
                let col = index.cont_index(row, y).ok_or_else(|| {
                    CoreError::mismatch(format!(
                        "demo continuation {y} not in the enumeration for prompt {:?}",
                        prompt.tokens()
                    ))
                })?;
                cols.push(col);
            }
            groups.push((row, weight, cols));
        }
        Ok(DemoGroups { groups })
    }
}

/// Exact single-level objective on an enumerable instance:
///
/// ```text
/// sum_x rho(x) [ E_demo[r(x,y)|x]/beta
///                - log sum_j pi_ref(y_j|x) exp(r(x,y_j)/beta) ]
/// ```
///
/// Demo expectations use the empirical conditional distribution; the inner
/// sum enumerates the reference's continuation row. Every demo continuation
/// must be inside the enumeration.
pub fn ml_irl_objective<R: RewardModel + ?Sized>(
    reward: &R,
    reference: &TabularPolicy,
    demos: &DemoSet,
    beta: Beta,
) -> Result<f64> {
    let index = reference.index().clone();
    let groups = DemoGroups::build(reference, demos)?;
    let b = beta.value();
    let mut total = 0.0;
    for (row, weight, cols) in &groups.groups {
        let prompt = index.prompt(*row);
        let values: Vec<f64> = index
            .row(*row)
            .iter()
            .map(|y| reward.value(prompt, y))
            .collect::<Result<_>>()?;
        let demo_mean: f64 =
            cols.iter().map(|&c| values[c]).sum::<f64>() / cols.len() as f64;
        let ref_log = reference.row_log_probs(*row);
        let scaled: Vec<f64> = ref_log
            .iter()
            .zip(&values)
            .map(|(&lp, &r)| lp + r / b)
            .collect();
        total += weight * (demo_mean / b - logsumexp(&scaled));
    }
    Ok(total)
}

/// Demo log-likelihood of a policy, weighted like [`ml_irl_objective`]:
/// `sum_x rho(x) E_demo[log pi(y|x) | x]`. This is the bilevel training
/// objective evaluated directly on a policy; on enumerable instances it
/// differs from [`ml_irl_objective`] at the induced policy by exactly
/// `E_demo[log pi_ref(y|x)]`.
pub fn demo_log_likelihood<P: PolicyModel + ?Sized>(
    policy: &P,
    demos: &DemoSet,
) -> Result<f64> {
    let (_, weights) = demos.prompt_distribution();
    let by_prompt = demos.items_by_prompt();
    let mut total = 0.0;
    for ((prompt, item_ids), weight) in by_prompt.into_iter().zip(weights) {
        let mut group = 0.0;
        for id in &item_ids {
            group += policy.log_prob(&prompt, &demos.items()[*id].continuation)?;
        }
        total += weight * group / item_ids.len() as f64;
    }
    Ok(total)
}

/// Exact minimax value of the adversarial formulation at a given inner
/// policy:
///
/// ```text
/// sum_x rho(x) [ E_demo[r(x,y)|x]/beta - E_{y~ ~ inner}[r(x,y~)|x]/beta
///                + KL(inner(.|x) || ref(.|x)) ]
/// ```
///
/// The inner policy must share the reference's enumeration. A row where the
/// inner policy puts mass on a reference-probability-zero continuation
/// yields `+inf` (an infinite KL penalty is a legitimate value of the game,
/// not an error). Minimizing over inner policies recovers the induced
/// policy; at that minimizer the value equals [`ml_irl_objective`] — which
/// is the bilevel demo log-likelihood minus its `E_demo[log pi_ref]`
/// constant.
pub fn minimax_value<R: RewardModel + ?Sized>(
    reward: &R,
    inner_policy: &TabularPolicy,
    reference: &TabularPolicy,
    demos: &DemoSet,
    beta: Beta,
) -> Result<f64> {
    if inner_policy.index() != reference.index() {
        return Err(CoreError::mismatch(
            "inner policy and reference enumerate different tables".to_string(),
        ));
    }
    let index = reference.index().clone();
    let groups = DemoGroups::build(reference, demos)?;
    let b = beta.value();
    let mut total = 0.0;
    for (row, weight, cols) in &groups.groups {
        let prompt = index.prompt(*row);
        let values: Vec<f64> = index
            .row(*row)
            .iter()
            .map(|y| reward.value(prompt, y))
            .collect::<Result<_>>()?;
        let demo_mean: f64 =
            cols.iter().map(|&c| values[c]).sum::<f64>() / cols.len() as f64;
        let inner_probs = inner_policy.row_probs(*row);
        let inner_log = inner_policy.row_log_probs(*row);
        let ref_probs = reference.row_probs(*row);
        let ref_log = reference.row_log_probs(*row);
        let mut inner_mean = 0.0;
        let mut kl = 0.0;
        for j in 0..values.len() {
            if inner_probs[j] == 0.0 {
                continue;
            }
            if ref_probs[j] == 0.0 {
                return Ok(f64::INFINITY);
            }
            inner_mean += inner_probs[j] * values[j];
            kl += inner_probs[j] * (inner_log[j] - ref_log[j]);
        }
        total += weight * ((demo_mean - inner_mean) / b + kl);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Vocab;
    use crate::params::ParamVector;
    use crate::reward::{induced_policy, TabularReward};
    use crate::rng::Rng;
    use crate::tabular::single_token_index;

    fn cont(tokens: Vec<usize>) -> Continuation {
        Continuation::new(tokens).unwrap()
    }

    /// Single empty prompt, three single-token continuations, uniform
    /// reference, all demonstration mass on the last continuation.
    fn point_demo_instance() -> (TabularPolicy, DemoSet) {
        let vocab = Vocab::with_size(3).unwrap();
        let index = single_token_index(vocab.clone(), 1).unwrap();
        let reference = TabularPolicy::uniform(index);
        let demos = DemoSet::new(
            vocab,
            vec![DemoPair {
                prompt: Prompt::empty(),
                continuation: cont(vec![2]),
            }],
        )
        .unwrap();
        (reference, demos)
    }

    #[test]
    fn surrogate_shapes() {
        assert_eq!(SurrogateShape::Identity.h(1.7), 1.7);
        assert_eq!(SurrogateShape::Identity.h_prime(-3.0), 1.0);
        assert!((SurrogateShape::LogSigmoid.h(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((SurrogateShape::LogSigmoid.h_prime(0.0) - 0.5).abs() < 1e-15);
        // h' = sigma(-t) is decreasing: confident pairs stop contributing.
        assert!(SurrogateShape::LogSigmoid.h_prime(5.0) < 0.01);
        assert!(SurrogateShape::LogSigmoid.h_prime(-5.0) > 0.99);
    }

    #[test]
    fn rft_gradient_is_scaled_cell_contrast() {
        let (reference, _) = point_demo_instance();
        let reward = TabularReward::zeros(reference.index().clone(), None).unwrap();
        let prompt = Prompt::empty();
        let demo = cont(vec![2]);
        let synth = cont(vec![0]);
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        let g = rft_reward_gradient(&reward, &sample, Beta::new(0.5).unwrap()).unwrap();
        assert_eq!(g.as_slice(), &[-2.0, 0.0, 2.0]);
    }

    #[test]
    fn rft_gradient_vanishes_when_synthetic_equals_demo() {
        let (reference, _) = point_demo_instance();
        let reward = TabularReward::zeros(reference.index().clone(), None).unwrap();
        let prompt = Prompt::empty();
        let y = cont(vec![1]);
        let sample = GradSample {
            prompt: &prompt,
            demo: &y,
            synthetic: &y,
        };
        let g = rft_reward_gradient(&reward, &sample, Beta::new(2.0).unwrap()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn irft_zero_margin_halves_the_contrast() {
        let (reference, _) = point_demo_instance();
        // Policy identical to the reference => every margin is exactly 0.
        let policy = reference.clone();
        let prompt = Prompt::empty();
        let demo = cont(vec![2]);
        let synth = cont(vec![0]);
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        let ident = irft_gradient(&policy, &reference, &sample, SurrogateShape::Identity).unwrap();
        let logsig =
            irft_gradient(&policy, &reference, &sample, SurrogateShape::LogSigmoid).unwrap();
        for (a, b) in logsig.as_slice().iter().zip(ident.as_slice()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn irft_gradient_matches_finite_differences_of_surrogate() {
        // The kernel must be the exact gradient of h(margin(theta)) in the
        // policy parameters, for both shapes.
        let vocab = Vocab::with_size(4).unwrap();
        let index = single_token_index(vocab, 2).unwrap();
        let mut reference = TabularPolicy::uniform(index.clone());
        for (i, w) in reference.params_mut().as_mut_slice().iter_mut().enumerate() {
            *w = (i as f64 * 0.19).sin() * 0.4;
        }
        let mut policy = TabularPolicy::uniform(index.clone());
        for (i, w) in policy.params_mut().as_mut_slice().iter_mut().enumerate() {
            *w = (i as f64 * 0.43).cos() * 0.9;
        }
        let prompt = index.prompt(1).clone();
        let demo = cont(vec![3]);
        let synth = cont(vec![0]);
        let sample = GradSample {
            prompt: &prompt,
            demo: &demo,
            synthetic: &synth,
        };
        for h in [SurrogateShape::Identity, SurrogateShape::LogSigmoid] {
            let analytic = irft_gradient(&policy, &reference, &sample, h).unwrap();
            let eps = 1e-5;
            for i in 0..policy.params().len() {
                let mut plus = policy.clone();
                plus.params_mut().as_mut_slice()[i] += eps;
                let mut minus = policy.clone();
                minus.params_mut().as_mut_slice()[i] -= eps;
                let f_plus = h.h(irft_margin(&plus, &reference, &sample).unwrap());
                let f_minus = h.h(irft_margin(&minus, &reference, &sample).unwrap());
                let fd = (f_plus - f_minus) / (2.0 * eps);
                assert!(
                    (fd - analytic.as_slice()[i]).abs() < 1e-6,
                    "{h:?} component {i}: fd {fd} vs {}",
                    analytic.as_slice()[i]
                );
            }
        }
    }

    #[test]
    fn sft_gradient_is_batch_mean() {
        let (reference, _) = point_demo_instance();
        let policy = reference; // uniform
        let pair_a = DemoPair {
            prompt: Prompt::empty(),
            continuation: cont(vec![0]),
        };
        let pair_b = DemoPair {
            prompt: Prompt::empty(),
            continuation: cont(vec![2]),
        };
        let g = sft_gradient(&policy, &[&pair_a, &pair_b]).unwrap();
        let ga = policy.grad_log_prob(&pair_a.prompt, &pair_a.continuation).unwrap();
        let gb = policy.grad_log_prob(&pair_b.prompt, &pair_b.continuation).unwrap();
        for i in 0..g.len() {
            let mean = (ga.as_slice()[i] + gb.as_slice()[i]) / 2.0;
            assert!((g.as_slice()[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batches_are_rejected() {
        let (reference, _) = point_demo_instance();
        let reward = TabularReward::zeros(reference.index().clone(), None).unwrap();
        assert!(sft_gradient(&reference, &[]).is_err());
        assert!(rft_reward_gradient_batch(&reward, &[], Beta::new(1.0).unwrap()).is_err());
        assert!(
            irft_gradient_batch(&reference, &reference, &[], SurrogateShape::Identity).is_err()
        );
    }

    #[test]
    fn ml_irl_objective_canonical_value() {
        // Uniform reference over three continuations, demo mass on the
        // last, r = (0, 0, 1), beta = 1:
        //   1/beta * 1 - ln((2 + e)/3).
        let (reference, demos) = point_demo_instance();
        let params = ParamVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        let reward =
            TabularReward::from_params(reference.index().clone(), params, None).unwrap();
        let value =
            ml_irl_objective(&reward, &reference, &demos, Beta::new(1.0).unwrap()).unwrap();
        let expected = 1.0 - ((2.0 + std::f64::consts::E) / 3.0).ln();
        assert!((value - expected).abs() < 1e-12, "value {value} vs {expected}");
    }

    #[test]
    fn ml_irl_gradient_matches_enumerated_rft_expectation() {
        // FD gradient of the exact objective == expectation of the
        // single-sample kernel with y~ enumerated under the induced policy.
        let vocab = Vocab::with_size(3).unwrap();
        let index = single_token_index(vocab.clone(), 2).unwrap();
        let mut reference = TabularPolicy::uniform(index.clone());
        for (i, w) in reference.params_mut().as_mut_slice().iter_mut().enumerate() {
            *w = (i as f64 * 0.29).sin() * 0.5;
        }
        let demos = DemoSet::new(
            vocab,
            vec![
                DemoPair { prompt: Prompt::new(vec![0]), continuation: cont(vec![2]) },
                DemoPair { prompt: Prompt::new(vec![0]), continuation: cont(vec![2]) },
                DemoPair { prompt: Prompt::new(vec![0]), continuation: cont(vec![0]) },
                DemoPair { prompt: Prompt::new(vec![1]), continuation: cont(vec![1]) },
            ],
        )
        .unwrap();
        let beta = Beta::new(0.8).unwrap();
        let params = ParamVector::new(vec![0.4, -0.2, 0.9, 0.0, 0.3, -0.5]).unwrap();
        let reward = TabularReward::from_params(index.clone(), params, None).unwrap();
        let induced = induced_policy(&reward, &reference, beta).unwrap();

        // Enumerated expectation of the kernel.
        let (prompts, weights) = demos.prompt_distribution();
        let by_prompt = demos.items_by_prompt();
        let mut expectation = ParamVector::zeros(reward.params().len());
        for ((prompt, item_ids), weight) in by_prompt.iter().zip(&weights) {
            let row = index.prompt_index(prompt).unwrap();
            let probs = induced.row_probs(row);
            for id in item_ids {
                let y = &demos.items()[*id].continuation;
                for (j, synth) in index.row(row).iter().enumerate() {
                    let sample = GradSample { prompt, demo: y, synthetic: synth };
                    let g = rft_reward_gradient(&reward, &sample, beta).unwrap();
                    expectation
                        .add_scaled(weight * probs[j] / item_ids.len() as f64, &g)
                        .unwrap();
                }
            }
        }
        let _ = prompts;

        // Finite differences of the exact objective.
        let eps = 1e-6;
        for i in 0..reward.params().len() {
            let mut plus = reward.clone();
            plus.params_mut().as_mut_slice()[i] += eps;
            let mut minus = reward.clone();
            minus.params_mut().as_mut_slice()[i] -= eps;
            let fd = (ml_irl_objective(&plus, &reference, &demos, beta).unwrap()
                - ml_irl_objective(&minus, &reference, &demos, beta).unwrap())
                / (2.0 * eps);
            assert!(
                (fd - expectation.as_slice()[i]).abs() < 1e-8,
                "component {i}: fd {fd} vs enumerated {}",
                expectation.as_slice()[i]
            );
        }
    }

    #[test]
    fn demo_continuation_outside_enumeration_is_named() {
        let (reference, _) = point_demo_instance();
        let vocab = Vocab::with_size(3).unwrap();
        let demos = DemoSet::new(
            vocab,
            vec![DemoPair {
                prompt: Prompt::empty(),
                continuation: cont(vec![0, 1]),
            }],
        )
        .unwrap();
        let reward = TabularReward::zeros(reference.index().clone(), None).unwrap();
        let err = ml_irl_objective(&reward, &reference, &demos, Beta::new(1.0).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("[0, 1]"), "{err}");
    }

    #[test]
    fn minimax_at_minimizer_ties_out_exactly() {
        let (reference, demos) = point_demo_instance();
        let beta = Beta::new(1.0).unwrap();
        let params = ParamVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        let reward =
            TabularReward::from_params(reference.index().clone(), params, None).unwrap();
        let induced = induced_policy(&reward, &reference, beta).unwrap();
        let at_min = minimax_value(&reward, &induced, &reference, &demos, beta).unwrap();
        let single_level = ml_irl_objective(&reward, &reference, &demos, beta).unwrap();
        // At the inner minimizer the game value collapses to the
        // single-level objective ...
        assert!((at_min - single_level).abs() < 1e-10);
        // ... which is the bilevel demo log-likelihood minus the
        // demo-side reference constant dropped when the levels collapse.
        let bilevel = demo_log_likelihood(&induced, &demos).unwrap();
        let ref_constant = demo_log_likelihood(&reference, &demos).unwrap();
        assert!((at_min - (bilevel - ref_constant)).abs() < 1e-10);
    }

    #[test]
    fn minimax_minimizer_is_a_minimizer() {
        let (reference, demos) = point_demo_instance();
        let beta = Beta::new(0.7).unwrap();
        let params = ParamVector::new(vec![0.2, -0.1, 0.8]).unwrap();
        let reward =
            TabularReward::from_params(reference.index().clone(), params, None).unwrap();
        let induced = induced_policy(&reward, &reference, beta).unwrap();
        let at_min = minimax_value(&reward, &induced, &reference, &demos, beta).unwrap();
        let mut rng = Rng::seed(31);
        for trial in 0..100 {
            let mut perturbed = induced.clone();
            for w in perturbed.params_mut().as_mut_slice() {
                *w += (rng.next_f64() - 0.5) * 2.0;
            }
            let v = minimax_value(&reward, &perturbed, &reference, &demos, beta).unwrap();
            assert!(
                v >= at_min - 1e-12,
                "trial {trial}: perturbed value {v} below minimum {at_min}"
            );
        }
    }

    #[test]
    fn minimax_signals_infinite_kl() {
        let (reference, demos) = point_demo_instance();
        let beta = Beta::new(1.0).unwrap();
        let reward = TabularReward::zeros(reference.index().clone(), None).unwrap();
        // Reference with one continuation's probability underflowed to 0.
        let mut degenerate_ref = reference.clone();
        degenerate_ref.params_mut().as_mut_slice()[0] = -800.0;
        let inner = reference.clone(); // full support
        let v = minimax_value(&reward, &inner, &degenerate_ref, &demos, beta).unwrap();
        assert_eq!(v, f64::INFINITY);
    }
}
