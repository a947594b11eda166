//! Reward models and the reward/policy correspondence.
//!
//! Rewards are linear in their parameters for both families, so their
//! gradients are exact feature vectors: a one-hot cell indicator for
//! [`TabularReward`], a bigram-count feature vector for
//! [`FeaturizedReward`].
//!
//! The correspondence with policies goes both ways. [`induced_policy`]
//! maps a reward to the optimizer of the KL-regularized objective —
//! `pi(y|x) proportional to pi_ref(y|x) * exp(r(x,y)/beta)` — and
//! [`implicit_reward`] reads a reward back off a policy as
//! `beta * (log pi(y|x) - log pi_ref(y|x))`. The implicit value omits the
//! `beta * log Z(x)` normalizer, which cancels whenever two continuations
//! of the same prompt are compared; callers that need absolute levels must
//! add it themselves.

use std::sync::Arc;

use crate::domain::{Continuation, Prompt};
use crate::error::{CoreError, Result};
use crate::params::ParamVector;
use crate::policy::{PolicyModel, TabularPolicy};
use crate::tabular::TabularIndex;

/// KL-regularization strength; strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(CoreError::validation(format!(
                "beta must be positive and finite, got {value}"
            )));
        }
        Ok(Beta(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Common surface of both reward families. Object-safe.
pub trait RewardModel {
    /// Scalar reward of continuation `y` for prompt `x`.
    fn value(&self, x: &Prompt, y: &Continuation) -> Result<f64>;

    /// Gradient of the reward with respect to the full parameter vector.
    /// Exact: rewards are linear in their parameters.
    fn grad(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector>;

    fn params(&self) -> &ParamVector;

    fn params_mut(&mut self) -> &mut ParamVector;
}

/// One learned reward value per (prompt, continuation) cell of an
/// enumeration, optionally confined to `[0, clamp_max]`.
///
/// The clamp is enforced by projection: construction and
/// [`TabularReward::project`] (which trainers call after every update) pull
/// values back into the box. Reads never re-clamp — stored values are
/// already feasible.
#[derive(Debug, Clone)]
pub struct TabularReward {
    index: Arc<TabularIndex>,
    params: ParamVector,
    clamp_max: Option<f64>,
}

impl TabularReward {
    /// Zero reward over `index`, optionally clamped to `[0, clamp_max]`.
    pub fn zeros(index: Arc<TabularIndex>, clamp_max: Option<f64>) -> Result<Self> {
        Self::check_clamp(clamp_max)?;
        let n = index.total_cells();
        Ok(TabularReward {
            index,
            params: ParamVector::zeros(n),
            clamp_max,
        })
    }

    /// Reward with explicit values. Values must already respect the clamp;
    /// use [`TabularReward::set_clamp`] to project an existing table.
    pub fn from_params(
        index: Arc<TabularIndex>,
        params: ParamVector,
        clamp_max: Option<f64>,
    ) -> Result<Self> {
        Self::check_clamp(clamp_max)?;
        if params.len() != index.total_cells() {
            return Err(CoreError::mismatch(format!(
                "{} values for an index with {} cells",
                params.len(),
                index.total_cells()
            )));
        }
        if let Some(r) = clamp_max {
            if params.as_slice().iter().any(|&v| v < 0.0 || v > r) {
                return Err(CoreError::validation(format!(
                    "reward values outside the clamp range [0, {r}]"
                )));
            }
        }
        Ok(TabularReward {
            index,
            params,
            clamp_max,
        })
    }

    fn check_clamp(clamp_max: Option<f64>) -> Result<()> {
        if let Some(r) = clamp_max {
            if !r.is_finite() || r <= 0.0 {
                return Err(CoreError::validation(format!(
                    "clamp bound must be positive and finite, got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Installs (or removes) the clamp, projecting current values into the
    /// new range.
    pub fn set_clamp(&mut self, clamp_max: Option<f64>) -> Result<()> {
        Self::check_clamp(clamp_max)?;
        self.clamp_max = clamp_max;
        self.project();
        Ok(())
    }

    /// Projects values into `[0, clamp_max]`; a no-op when unclamped.
    pub fn project(&mut self) {
        if let Some(r) = self.clamp_max {
            self.params.clamp_in_place(0.0, r);
        }
    }

    pub fn clamp_max(&self) -> Option<f64> {
        self.clamp_max
    }

    pub fn index(&self) -> &Arc<TabularIndex> {
        &self.index
    }

    /// Reward values over prompt `i`'s continuation row.
    pub fn row_values(&self, i: usize) -> &[f64] {
        &self.params.as_slice()[self.index.row_range(i)]
    }
}

impl RewardModel for TabularReward {
    fn value(&self, x: &Prompt, y: &Continuation) -> Result<f64> {
        let (i, j) = self.index.cell(x, y)?;
        Ok(self.params.as_slice()[self.index.flat(i, j)])
    }

    fn grad(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector> {
        let (i, j) = self.index.cell(x, y)?;
        let mut grad = ParamVector::zeros(self.params.len());
        grad.as_mut_slice()[self.index.flat(i, j)] = 1.0;
        Ok(grad)
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }
}

/// Linear reward over bag-of-bigram features plus a length feature.
///
/// The feature vector of `(x, y)` counts each (previous token, token) pair
/// along `y` — the first continuation token pairs with the last prompt
/// token, or with a begin-of-sequence slot when the prompt is empty — and
/// its final component is the continuation length. Weights live in a flat
/// `(vocab_size + 1) * vocab_size + 1` vector.
#[derive(Debug, Clone)]
pub struct FeaturizedReward {
    vocab_size: usize,
    params: ParamVector,
}

impl FeaturizedReward {
    pub fn zeros(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(CoreError::validation("vocab_size must be at least 2"));
        }
        Ok(FeaturizedReward {
            vocab_size,
            params: ParamVector::zeros(Self::n_params_for(vocab_size)),
        })
    }

    pub fn from_params(vocab_size: usize, params: ParamVector) -> Result<Self> {
        if params.len() != Self::n_params_for(vocab_size) {
            return Err(CoreError::mismatch(format!(
                "{} weights for a featurized reward needing {}",
                params.len(),
                Self::n_params_for(vocab_size)
            )));
        }
        Ok(FeaturizedReward { vocab_size, params })
    }

    pub fn n_params_for(vocab_size: usize) -> usize {
        (vocab_size + 1) * vocab_size + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Flat weight slot of the (prev, token) bigram; `prev = None` is the
    /// begin-of-sequence row.
    pub fn bigram_slot(&self, prev: Option<usize>, token: usize) -> usize {
        let row = prev.unwrap_or(self.vocab_size);
        row * self.vocab_size + token
    }

    /// Weight slot of the length feature.
    pub fn length_slot(&self) -> usize {
        (self.vocab_size + 1) * self.vocab_size
    }

    /// Feature vector of `(x, y)`; the reward is its dot product with the
    /// weights and the gradient is the vector itself.
    pub fn features(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector> {
        for &t in x.tokens().iter().chain(y.tokens()) {
            if t >= self.vocab_size {
                return Err(CoreError::validation(format!(
                    "token {t} out of range for vocab of size {}",
                    self.vocab_size
                )));
            }
        }
        let mut phi = ParamVector::zeros(self.params.len());
        let f = phi.as_mut_slice();
        let mut prev = x.tokens().last().copied();
        for &tok in y.tokens() {
            f[self.bigram_slot(prev, tok)] += 1.0;
            prev = Some(tok);
        }
        f[self.length_slot()] = y.len() as f64;
        Ok(phi)
    }
}

impl RewardModel for FeaturizedReward {
    fn value(&self, x: &Prompt, y: &Continuation) -> Result<f64> {
        let phi = self.features(x, y)?;
        Ok(phi
            .as_slice()
            .iter()
            .zip(self.params.as_slice())
            .map(|(&f, &w)| f * w)
            .sum())
    }

    fn grad(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector> {
        self.features(x, y)
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }
}

/// Optimal policy of the KL-regularized objective for `reward` anchored at
/// `reference`: per enumerated cell, logit = log pi_ref + r / beta.
///
/// Defined for enumerable references; the reward may be either family but
/// must cover every cell of the reference's enumeration (a tabular reward
/// over a different enumeration fails with a mismatch error).
pub fn induced_policy<R: RewardModel + ?Sized>(
    reward: &R,
    reference: &TabularPolicy,
    beta: Beta,
) -> Result<TabularPolicy> {
    let index = reference.index().clone();
    let mut logits = Vec::with_capacity(index.total_cells());
    for i in 0..index.n_prompts() {
        let ref_log = reference.row_log_probs(i);
        let prompt = index.prompt(i);
        for (j, y) in index.row(i).iter().enumerate() {
            let r = reward.value(prompt, y)?;
            logits.push(ref_log[j] + r / beta.value());
        }
    }
    TabularPolicy::from_params(index, ParamVector::new(logits)?)
}

/// Implicit reward of `policy` relative to `reference`:
/// `beta * (log pi(y|x) - log pi_ref(y|x))`. Omits the per-prompt
/// `beta * log Z(x)` term, so only same-prompt differences are meaningful.
pub fn implicit_reward(
    policy: &dyn PolicyModel,
    reference: &dyn PolicyModel,
    beta: Beta,
    x: &Prompt,
    y: &Continuation,
) -> Result<f64> {
    Ok(beta.value() * (policy.log_prob(x, y)? - reference.log_prob(x, y)?))
}
