//! Policy models: distributions over continuations given a prompt.
//!
//! Two families share one interface. [`TabularPolicy`] is a softmax over an
//! explicit (prompt, continuation) enumeration — exact, enumerable, and the
//! workhorse for oracle-checked experiments. [`AutoregressivePolicy`] is a
//! log-linear next-token model (a learned bigram scorer with position
//! buckets) for sequence worlds that are too large to enumerate.
//!
//! Both expose exact `log_prob`, exact score-function gradients
//! (`grad_log_prob`), and seeded sampling, which is all the trainers and
//! estimators in this crate need: rewards stay linear in their parameters
//! and policies stay softmax-shaped, so every gradient here is closed-form.

use std::sync::Arc;

use crate::domain::{Continuation, Prompt};
use crate::error::{CoreError, Result};
use crate::numerics::{log_softmax, softmax};
use crate::params::ParamVector;
use crate::rng::Rng;
use crate::tabular::TabularIndex;

/// Common surface of both policy families. Object-safe so evaluation code
/// can mix families behind `&dyn PolicyModel`.
pub trait PolicyModel {
    /// Exact log probability of `y` given `x`. Conditions only on the
    /// supplied tokens (no end-of-sequence factor is appended).
    fn log_prob(&self, x: &Prompt, y: &Continuation) -> Result<f64>;

    /// Draws one continuation from the model's distribution.
    fn sample(&self, x: &Prompt, rng: &mut Rng) -> Result<Continuation>;

    /// Gradient of `log_prob(x, y)` with respect to the full parameter
    /// vector (zeros outside the touched rows).
    fn grad_log_prob(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector>;

    fn params(&self) -> &ParamVector;

    fn params_mut(&mut self) -> &mut ParamVector;

    /// Alphabet size this model scores over.
    fn vocab_size(&self) -> usize;
}

/// Softmax policy over an enumerated (prompt, continuation) table. The
/// parameter vector holds one logit per cell in the index's flat layout;
/// each prompt row normalizes independently.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    index: Arc<TabularIndex>,
    params: ParamVector,
}

impl TabularPolicy {
    /// Uniform policy (all logits zero) over `index`.
    pub fn uniform(index: Arc<TabularIndex>) -> Self {
        let n = index.total_cells();
        TabularPolicy {
            index,
            params: ParamVector::zeros(n),
        }
    }

    /// Policy with explicit logits; the vector length must equal the
    /// index's cell count.
    pub fn from_params(index: Arc<TabularIndex>, params: ParamVector) -> Result<Self> {
        if params.len() != index.total_cells() {
            return Err(CoreError::mismatch(format!(
                "{} logits for an index with {} cells",
                params.len(),
                index.total_cells()
            )));
        }
        Ok(TabularPolicy { index, params })
    }

    pub fn index(&self) -> &Arc<TabularIndex> {
        &self.index
    }

    /// Row of logits for prompt `i`.
    pub fn row_logits(&self, i: usize) -> &[f64] {
        &self.params.as_slice()[self.index.row_range(i)]
    }

    /// Probabilities over prompt `i`'s continuation row; sums to 1 up to
    /// rounding.
    pub fn row_probs(&self, i: usize) -> Vec<f64> {
        softmax(self.row_logits(i))
    }

    /// Log probabilities over prompt `i`'s continuation row.
    pub fn row_log_probs(&self, i: usize) -> Vec<f64> {
        log_softmax(self.row_logits(i))
    }

    fn locate(&self, x: &Prompt, y: &Continuation) -> Result<(usize, usize)> {
        self.index.cell(x, y)
    }
}

impl PolicyModel for TabularPolicy {
    fn log_prob(&self, x: &Prompt, y: &Continuation) -> Result<f64> {
        let (i, j) = self.locate(x, y)?;
        Ok(self.row_log_probs(i)[j])
    }

    fn sample(&self, x: &Prompt, rng: &mut Rng) -> Result<Continuation> {
        let i = self.index.prompt_index(x).ok_or_else(|| {
            CoreError::mismatch(format!("prompt {:?} not in the enumeration", x.tokens()))
        })?;
        let j = rng.categorical(&self.row_probs(i));
        Ok(self.index.row(i)[j].clone())
    }

    fn grad_log_prob(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector> {
        let (i, j) = self.locate(x, y)?;
        let mut grad = ParamVector::zeros(self.params.len());
        let probs = self.row_probs(i);
        let slice = &mut grad.as_mut_slice()[self.index.row_range(i)];
        for (g, p) in slice.iter_mut().zip(probs) {
            *g = -p;
        }
        slice[j] += 1.0;
        Ok(grad)
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn vocab_size(&self) -> usize {
        self.index.vocab().size()
    }
}

/// Configuration of the log-linear sequence model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArConfig {
    /// Token alphabet size.
    pub vocab_size: usize,
    /// Number of position buckets; continuation position `p` maps to bucket
    /// `min(p, n_buckets - 1)`.
    pub n_buckets: usize,
    /// Hard cap on generated (and scored) continuation length.
    pub max_len: usize,
    /// Reserved end token: sampling stops after drawing it. Scored
    /// continuations need not end with it.
    pub eos_token: Option<usize>,
}

impl ArConfig {
    pub fn new(vocab_size: usize, n_buckets: usize, max_len: usize, eos_token: Option<usize>) -> Result<Self> {
        if vocab_size < 2 {
            return Err(CoreError::validation("vocab_size must be at least 2"));
        }
        if n_buckets == 0 || max_len == 0 {
            return Err(CoreError::validation("n_buckets and max_len must be positive"));
        }
        if let Some(eos) = eos_token {
            if eos >= vocab_size {
                return Err(CoreError::validation(format!(
                    "eos token {eos} out of range for vocab of size {vocab_size}"
                )));
            }
        }
        Ok(ArConfig {
            vocab_size,
            n_buckets,
            max_len,
            eos_token,
        })
    }

    /// Feature rows: one per previous token, one for begin-of-sequence,
    /// one per position bucket.
    fn n_feature_rows(&self) -> usize {
        self.vocab_size + 1 + self.n_buckets
    }

    fn n_params(&self) -> usize {
        self.n_feature_rows() * self.vocab_size
    }
}

/// Log-linear autoregressive policy with context length 1.
///
/// The next-token logit is a sum of two learned rows: one keyed by the
/// previous token (or a begin-of-sequence feature when there is none) and
/// one keyed by the current position's bucket. Parameters form a
/// `(vocab_size + 1 + n_buckets) x vocab_size` table, flattened row-major.
/// `log_prob` factorizes over steps and each step is an exact softmax, so
/// per-step probabilities normalize exactly and the score-function gradient
/// is a sum of (one-hot minus softmax) terms over the active feature rows.
#[derive(Debug, Clone)]
pub struct AutoregressivePolicy {
    config: ArConfig,
    params: ParamVector,
}

impl AutoregressivePolicy {
    /// Zero-weight model: uniform next-token distribution at every step.
    pub fn zeros(config: ArConfig) -> Self {
        let n = config.n_params();
        AutoregressivePolicy {
            config,
            params: ParamVector::zeros(n),
        }
    }

    pub fn from_params(config: ArConfig, params: ParamVector) -> Result<Self> {
        if params.len() != config.n_params() {
            return Err(CoreError::mismatch(format!(
                "{} weights for a model needing {}",
                params.len(),
                config.n_params()
            )));
        }
        Ok(AutoregressivePolicy { config, params })
    }

    pub fn config(&self) -> &ArConfig {
        &self.config
    }

    /// Feature row index for the previous-token feature.
    fn prev_row(&self, prev: Option<usize>) -> usize {
        match prev {
            Some(t) => t,
            None => self.config.vocab_size, // begin-of-sequence
        }
    }

    /// Feature row index for the position-bucket feature.
    fn bucket_row(&self, pos: usize) -> usize {
        self.config.vocab_size + 1 + pos.min(self.config.n_buckets - 1)
    }

    /// Next-token logits given the previous token and continuation position.
    fn step_logits(&self, prev: Option<usize>, pos: usize) -> Vec<f64> {
        let v = self.config.vocab_size;
        let w = self.params.as_slice();
        let a = self.prev_row(prev) * v;
        let b = self.bucket_row(pos) * v;
        (0..v).map(|tok| w[a + tok] + w[b + tok]).collect()
    }

    fn check_tokens(&self, tokens: &[usize], what: &str) -> Result<()> {
        for &t in tokens {
            if t >= self.config.vocab_size {
                return Err(CoreError::validation(format!(
                    "{what}: token {t} out of range for vocab of size {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Previous token seen by continuation step `pos`: the preceding
    /// continuation token, else the last prompt token, else none.
    fn prev_at(x: &Prompt, y: &[usize], pos: usize) -> Option<usize> {
        if pos > 0 {
            Some(y[pos - 1])
        } else {
            x.tokens().last().copied()
        }
    }
}

impl PolicyModel for AutoregressivePolicy {
    fn log_prob(&self, x: &Prompt, y: &Continuation) -> Result<f64> {
        self.check_tokens(x.tokens(), "prompt")?;
        self.check_tokens(y.tokens(), "continuation")?;
        if y.len() > self.config.max_len {
            return Err(CoreError::validation(format!(
                "continuation of length {} exceeds max_len {}",
                y.len(),
                self.config.max_len
            )));
        }
        let mut total = 0.0;
        for (pos, &tok) in y.tokens().iter().enumerate() {
            let prev = Self::prev_at(x, y.tokens(), pos);
            let logits = self.step_logits(prev, pos);
            total += log_softmax(&logits)[tok];
        }
        Ok(total)
    }

    fn sample(&self, x: &Prompt, rng: &mut Rng) -> Result<Continuation> {
        self.check_tokens(x.tokens(), "prompt")?;
        let mut tokens: Vec<usize> = Vec::new();
        for pos in 0..self.config.max_len {
            let prev = Self::prev_at(x, &tokens, pos);
            let probs = softmax(&self.step_logits(prev, pos));
            let tok = rng.categorical(&probs);
            tokens.push(tok);
            if Some(tok) == self.config.eos_token {
                break;
            }
        }
        Continuation::new(tokens)
    }

    fn grad_log_prob(&self, x: &Prompt, y: &Continuation) -> Result<ParamVector> {
        self.check_tokens(x.tokens(), "prompt")?;
        self.check_tokens(y.tokens(), "continuation")?;
        if y.len() > self.config.max_len {
            return Err(CoreError::validation(format!(
                "continuation of length {} exceeds max_len {}",
                y.len(),
                self.config.max_len
            )));
        }
        let v = self.config.vocab_size;
        let mut grad = ParamVector::zeros(self.params.len());
        let g = grad.as_mut_slice();
        for (pos, &tok) in y.tokens().iter().enumerate() {
            let prev = Self::prev_at(x, y.tokens(), pos);
            let probs = softmax(&self.step_logits(prev, pos));
            for row in [self.prev_row(prev), self.bucket_row(pos)] {
                let base = row * v;
                for (t, &p) in probs.iter().enumerate() {
                    g[base + t] -= p;
                }
                g[base + tok] += 1.0;
            }
        }
        Ok(grad)
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }
}
