//! The three training loops: supervised fine-tuning, explicit reward
//! learning over an enumerated reward table, and implicit reward learning
//! through the policy's own log-ratios. All three share the double-loop
//! (T outer, K inner) structure, the stepsize schedule, and the trace
//! format.
//!
//! # Determinism contract
//!
//! Every trainer is a pure function of (initial parameters, data, config).
//! Randomness is laid out so independent pieces never share a stream — a
//! re-implementation that follows this layout reproduces a run bit for
//! bit:
//!
//! - `root = Rng::seed(config.seed)`
//! - data traversal uses `root.child(0)`: item indices are shuffled once
//!   up front (Fisher–Yates) and walked sequentially; whenever the
//!   permutation is exhausted mid-batch it is reshuffled in place and the
//!   walk continues, so batches have exact size and items are never
//!   dropped;
//! - the synthetic continuation for inner step `k`, batch slot `b` of
//!   outer iteration `t` is drawn from
//!   `root.child(1).child(t).child(k * batch_size + b)`.
//!
//! Both sampled trainers pre-generate all K inner batches at the top of
//! each outer iteration from the frozen snapshot, then run the K ascent
//! steps; gradients are always evaluated at the current parameters while
//! synthetic data stays pinned to the snapshot.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{Continuation, DemoPair, DemoSet};
use crate::error::{CoreError, Result};
use crate::gradients::{
    irft_gradient_batch, irft_margin, ml_irl_objective, rft_reward_gradient_batch, sft_gradient,
    GradSample, SurrogateShape,
};
use crate::policy::{PolicyModel, TabularPolicy};
use crate::reward::{induced_policy, Beta, RewardModel, TabularReward};
use crate::rng::Rng;

/// Stepsize schedule across the T·K steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaSchedule {
    /// `eta` as given, every step.
    #[default]
    #[serde(rename = "constant")]
    Constant,
    /// `eta / sqrt(T * K)`, every step — the rate under which the
    /// min-over-iterates gradient norm provably shrinks.
    #[serde(rename = "inv_sqrt_TK")]
    InvSqrtTk,
}

/// Shared configuration of all three loops. Supervised fine-tuning reads
/// only the loop shape, stepsize, batch size, and seed; the sampled loops
/// additionally use `beta`, `h`, and the clamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Outer iterations (snapshot refreshes).
    #[serde(rename = "T")]
    pub t_outer: usize,
    /// Inner ascent steps per outer iteration.
    #[serde(rename = "K")]
    pub k_inner: usize,
    /// Base stepsize.
    pub eta: f64,
    pub eta_schedule: EtaSchedule,
    /// Regularization strength toward the reference.
    pub beta: f64,
    pub batch_size: usize,
    /// Surrogate shape for the implicit loop.
    pub h: SurrogateShape,
    pub seed: u64,
    /// When set, explicit rewards are projected into `[0, R]` after every
    /// step.
    #[serde(rename = "reward_clamp_R", default, skip_serializing_if = "Option::is_none")]
    pub reward_clamp: Option<f64>,
    /// When true, the implicit loop re-anchors the reference to each outer
    /// snapshot instead of keeping it frozen. Off by default; the frozen
    /// reference is the behavior everything else in this crate assumes.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refresh_reference: bool,
}

impl TrainerConfig {
    /// Validates every bound and returns the parsed strength.
    pub fn validate(&self) -> Result<Beta> {
        if self.t_outer < 1 || self.k_inner < 1 {
            return Err(CoreError::validation(format!(
                "T and K must be at least 1, got T = {}, K = {}",
                self.t_outer, self.k_inner
            )));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(CoreError::validation(format!(
                "eta must be positive and finite, got {}",
                self.eta
            )));
        }
        if self.batch_size < 1 {
            return Err(CoreError::validation("batch_size must be at least 1"));
        }
        if let Some(r) = self.reward_clamp {
            if !r.is_finite() || r <= 0.0 {
                return Err(CoreError::validation(format!(
                    "reward_clamp_R must be positive and finite, got {r}"
                )));
            }
        }
        Beta::new(self.beta)
    }

    /// The stepsize actually applied (identical at every step).
    pub fn effective_eta(&self) -> f64 {
        match self.eta_schedule {
            EtaSchedule::Constant => self.eta,
            EtaSchedule::InvSqrtTk => self.eta / ((self.t_outer * self.k_inner) as f64).sqrt(),
        }
    }

    /// Total ascent steps.
    pub fn total_steps(&self) -> usize {
        self.t_outer * self.k_inner
    }
}

/// One recorded ascent step. `grad_norm` is the norm of the update
/// direction actually applied, before stepsize scaling; `objective` is the
/// loop's objective estimate at the pre-update parameters; `elapsed_ms` is
/// wall-clock since the run started.
#[derive(Debug, Clone, Serialize)]
pub struct TrainStep {
    pub step: usize,
    pub t: usize,
    pub k: usize,
    pub eta: f64,
    pub grad_norm: f64,
    pub objective: f64,
    pub elapsed_ms: f64,
}

/// Full record of a run: exactly T·K steps in execution order, plus the
/// final parameters.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub steps: Vec<TrainStep>,
    pub final_params: crate::params::ParamVector,
}

impl TrainTrace {
    /// Writes the `step,t,k,eta,grad_norm,objective,elapsed_ms` CSV.
    /// With `include_timing` false the timing column is written as zeros,
    /// which keeps the file a pure function of (data, config) — wall-clock
    /// is the one field that legitimately differs between identical runs.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, include_timing: bool) -> Result<()> {
        writeln!(w, "step,t,k,eta,grad_norm,objective,elapsed_ms")?;
        for s in &self.steps {
            let ms = if include_timing { s.elapsed_ms } else { 0.0 };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.step, s.t, s.k, s.eta, s.grad_norm, s.objective, ms
            )?;
        }
        Ok(())
    }

    /// Reads a trace back from its CSV form. The final parameters are not
    /// part of the CSV (they live in the checkpoint), so the result carries
    /// an empty parameter vector — enough for trace-level analysis such as
    /// [`crate::evaluation::convergence_stats`].
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<TrainTrace> {
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(CoreError::Parse {
                    line: 1,
                    message: "empty trace file".to_string(),
                })
            }
        };
        if header.trim_end() != "step,t,k,eta,grad_norm,objective,elapsed_ms" {
            return Err(CoreError::Parse {
                line: 1,
                message: format!("unexpected trace header {header:?}"),
            });
        }
        let mut steps = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let bad = |what: &str| CoreError::Parse {
                line: lineno,
                message: format!("{what} in trace row {line:?}"),
            };
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != 7 {
                return Err(bad("expected 7 columns"));
            }
            steps.push(TrainStep {
                step: fields[0].parse().map_err(|_| bad("bad step"))?,
                t: fields[1].parse().map_err(|_| bad("bad t"))?,
                k: fields[2].parse().map_err(|_| bad("bad k"))?,
                eta: fields[3].parse().map_err(|_| bad("bad eta"))?,
                grad_norm: fields[4].parse().map_err(|_| bad("bad grad_norm"))?,
                objective: fields[5].parse().map_err(|_| bad("bad objective"))?,
                elapsed_ms: fields[6].parse().map_err(|_| bad("bad elapsed_ms"))?,
            });
        }
        Ok(TrainTrace {
            steps,
            final_params: crate::params::ParamVector::zeros(0),
        })
    }

    /// True when every recorded number except wall-clock matches.
    pub fn same_numbers(&self, other: &TrainTrace) -> bool {
        self.final_params == other.final_params
            && self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.step == b.step
                    && a.t == b.t
                    && a.k == b.k
                    && a.eta == b.eta
                    && a.grad_norm == b.grad_norm
                    && a.objective == b.objective
            })
    }
}

/// Draws a synthetic continuation for one (snapshot, demo item) pair.
/// The default implementation samples the snapshot model; tests inject
/// degenerate samplers through this seam.
pub trait SyntheticSampler<P: PolicyModel + ?Sized> {
    fn draw(&mut self, snapshot: &P, pair: &DemoPair, rng: &mut Rng) -> Result<Continuation>;
}

/// Samples the snapshot model's own distribution.
pub struct ModelSampler;

impl<P: PolicyModel + ?Sized> SyntheticSampler<P> for ModelSampler {
    fn draw(&mut self, snapshot: &P, pair: &DemoPair, rng: &mut Rng) -> Result<Continuation> {
        snapshot.sample(&pair.prompt, rng)
    }
}

/// Sequential walk over seeded permutations of `0..n`; reshuffles in place
/// whenever exhausted, so batches always have exact size.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        BatchCursor { order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn divergence(step: usize, err: CoreError) -> CoreError {
    CoreError::Divergence {
        step,
        message: format!("non-finite parameters after the update ({err})"),
    }
}

/// Supervised fine-tuning: T·K steps of stochastic ascent on the mean
/// demonstration log-likelihood.
pub fn run_sft<P: PolicyModel + Clone>(
    policy: P,
    data: &DemoSet,
    config: &TrainerConfig,
) -> Result<(P, TrainTrace)> {
    run_sft_observed(policy, data, config, |_, _| {})
}

/// [`run_sft`] with a per-step observer, called with each step record and
/// the pre-update model.
pub fn run_sft_observed<P, F>(
    mut policy: P,
    data: &DemoSet,
    config: &TrainerConfig,
    mut observe: F,
) -> Result<(P, TrainTrace)>
where
    P: PolicyModel + Clone,
    F: FnMut(&TrainStep, &P),
{
    config.validate()?;
    let root = Rng::seed(config.seed);
    let mut shuffle_rng = root.child(0);
    let mut cursor = BatchCursor::new(data.items().len(), &mut shuffle_rng);
    let eta = config.effective_eta();
    let start = Instant::now();
    let mut steps = Vec::with_capacity(config.total_steps());
    for step in 0..config.total_steps() {
        let idx = cursor.next_batch(config.batch_size, &mut shuffle_rng);
        let batch: Vec<&DemoPair> = idx.iter().map(|&i| &data.items()[i]).collect();
        let objective = batch
            .iter()
            .map(|d| policy.log_prob(&d.prompt, &d.continuation))
            .sum::<Result<f64>>()?
            / batch.len() as f64;
        let g = sft_gradient(&policy, &batch)?;
        let record = TrainStep {
            step,
            t: step / config.k_inner,
            k: step % config.k_inner,
            eta,
            grad_norm: g.norm(),
            objective,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(&record, &policy);
        steps.push(record);
        policy
            .params_mut()
            .add_scaled(eta, &g)
            .map_err(|e| divergence(step, e))?;
    }
    let final_params = policy.params().clone();
    Ok((policy, TrainTrace { steps, final_params }))
}

/// Explicit reward learning over an enumerated reward table: each outer
/// iteration freezes the sampling policy (the reference at t = 0, the
/// induced policy of the current reward afterwards), pre-generates K
/// batches of (demo, synthetic) contrasts from it, runs K projected ascent
/// steps on the reward, and finally re-induces the policy. Returns the
/// trained reward, its induced policy, and the trace.
pub fn run_rft(
    reward: TabularReward,
    reference: &TabularPolicy,
    data: &DemoSet,
    config: &TrainerConfig,
) -> Result<(TabularReward, TabularPolicy, TrainTrace)> {
    run_rft_with_sampler(reward, reference, data, config, &mut ModelSampler)
}

/// [`run_rft`] with an injected synthetic sampler.
pub fn run_rft_with_sampler<S>(
    mut reward: TabularReward,
    reference: &TabularPolicy,
    data: &DemoSet,
    config: &TrainerConfig,
    sampler: &mut S,
) -> Result<(TabularReward, TabularPolicy, TrainTrace)>
where
    S: SyntheticSampler<TabularPolicy>,
{
    let beta = config.validate()?;
    reward.set_clamp(config.reward_clamp)?;
    let root = Rng::seed(config.seed);
    let mut shuffle_rng = root.child(0);
    let synth_root = root.child(1);
    let mut cursor = BatchCursor::new(data.items().len(), &mut shuffle_rng);
    let eta = config.effective_eta();
    let start = Instant::now();
    let mut steps = Vec::with_capacity(config.total_steps());
    let mut sampling_policy = reference.clone();
    for t in 0..config.t_outer {
        let (indices, synths) = pregenerate(
            &sampling_policy,
            data,
            config,
            &mut cursor,
            &mut shuffle_rng,
            &synth_root.child(t as u64),
            sampler,
        )?;
        for k in 0..config.k_inner {
            let step = t * config.k_inner + k;
            let samples: Vec<GradSample<'_>> = indices[k]
                .iter()
                .zip(&synths[k])
                .map(|(&i, synth)| GradSample {
                    prompt: &data.items()[i].prompt,
                    demo: &data.items()[i].continuation,
                    synthetic: synth,
                })
                .collect();
            let objective = ml_irl_objective(&reward, reference, data, beta)?;
            let g = rft_reward_gradient_batch(&reward, &samples, beta)?;
            steps.push(TrainStep {
                step,
                t,
                k,
                eta,
                grad_norm: g.norm(),
                objective,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            reward
                .params_mut()
                .add_scaled(eta, &g)
                .map_err(|e| divergence(step, e))?;
            reward.project();
        }
        sampling_policy = induced_policy(&reward, reference, beta)?;
    }
    let final_params = reward.params().clone();
    Ok((
        reward,
        sampling_policy,
        TrainTrace { steps, final_params },
    ))
}

/// Implicit reward learning: each outer iteration snapshots the policy,
/// pre-generates K batches of synthetic continuations from the snapshot,
/// then takes K ascent steps whose margins and gradients are evaluated at
/// the current (moving) parameters.
pub fn run_irft<P: PolicyModel + Clone>(
    policy: P,
    reference: &P,
    data: &DemoSet,
    config: &TrainerConfig,
) -> Result<(P, TrainTrace)> {
    run_irft_with_sampler(policy, reference, data, config, &mut ModelSampler, |_, _| {})
}

/// [`run_irft`] with a per-step observer, called with each step record and
/// the pre-update model (so observers see every iterate theta_{t,k}).
pub fn run_irft_observed<P, F>(
    policy: P,
    reference: &P,
    data: &DemoSet,
    config: &TrainerConfig,
    observe: F,
) -> Result<(P, TrainTrace)>
where
    P: PolicyModel + Clone,
    F: FnMut(&TrainStep, &P),
{
    run_irft_with_sampler(policy, reference, data, config, &mut ModelSampler, observe)
}

/// [`run_irft`] with both seams exposed.
pub fn run_irft_with_sampler<P, S, F>(
    mut policy: P,
    reference: &P,
    data: &DemoSet,
    config: &TrainerConfig,
    sampler: &mut S,
    mut observe: F,
) -> Result<(P, TrainTrace)>
where
    P: PolicyModel + Clone,
    S: SyntheticSampler<P>,
    F: FnMut(&TrainStep, &P),
{
    config.validate()?;
    if policy.vocab_size() != reference.vocab_size() {
        return Err(CoreError::mismatch(format!(
            "policy vocabulary ({}) differs from the reference's ({})",
            policy.vocab_size(),
            reference.vocab_size()
        )));
    }
    let root = Rng::seed(config.seed);
    let mut shuffle_rng = root.child(0);
    let synth_root = root.child(1);
    let mut cursor = BatchCursor::new(data.items().len(), &mut shuffle_rng);
    let eta = config.effective_eta();
    let start = Instant::now();
    let mut steps = Vec::with_capacity(config.total_steps());
    let mut anchor = reference.clone();
    for t in 0..config.t_outer {
        let snapshot = policy.clone();
        if config.refresh_reference {
            anchor = snapshot.clone();
        }
        let (indices, synths) = pregenerate(
            &snapshot,
            data,
            config,
            &mut cursor,
            &mut shuffle_rng,
            &synth_root.child(t as u64),
            sampler,
        )?;
        for k in 0..config.k_inner {
            let step = t * config.k_inner + k;
            let samples: Vec<GradSample<'_>> = indices[k]
                .iter()
                .zip(&synths[k])
                .map(|(&i, synth)| GradSample {
                    prompt: &data.items()[i].prompt,
                    demo: &data.items()[i].continuation,
                    synthetic: synth,
                })
                .collect();
            let objective = samples
                .iter()
                .map(|s| irft_margin(&policy, &anchor, s).map(|m| config.h.h(m)))
                .sum::<Result<f64>>()?
                / samples.len() as f64;
            let g = irft_gradient_batch(&policy, &anchor, &samples, config.h)?;
            let record = TrainStep {
                step,
                t,
                k,
                eta,
                grad_norm: g.norm(),
                objective,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            observe(&record, &policy);
            steps.push(record);
            policy
                .params_mut()
                .add_scaled(eta, &g)
                .map_err(|e| divergence(step, e))?;
        }
    }
    let final_params = policy.params().clone();
    Ok((policy, TrainTrace { steps, final_params }))
}

/// Per-inner-step item indices and synthetic continuations for one outer
/// iteration: K rows of B entries each.
type OuterDraws = (Vec<Vec<usize>>, Vec<Vec<Continuation>>);

/// Draws the item indices and synthetic continuations for all K inner
/// batches of one outer iteration, entirely from the frozen snapshot.
/// Synthetic draw (k, b) uses the dedicated stream `outer_rng.child(k*B+b)`
/// so draw order never couples the streams.
fn pregenerate<P, S>(
    snapshot: &P,
    data: &DemoSet,
    config: &TrainerConfig,
    cursor: &mut BatchCursor,
    shuffle_rng: &mut Rng,
    outer_rng: &Rng,
    sampler: &mut S,
) -> Result<OuterDraws>
where
    P: PolicyModel + ?Sized,
    S: SyntheticSampler<P>,
{
    let mut indices = Vec::with_capacity(config.k_inner);
    let mut synths = Vec::with_capacity(config.k_inner);
    for k in 0..config.k_inner {
        let idx = cursor.next_batch(config.batch_size, shuffle_rng);
        let mut row = Vec::with_capacity(config.batch_size);
        for (b, &i) in idx.iter().enumerate() {
            let slot = (k * config.batch_size + b) as u64;
            let mut draw_rng = outer_rng.child(slot);
            row.push(sampler.draw(snapshot, &data.items()[i], &mut draw_rng)?);
        }
        indices.push(idx);
        synths.push(row);
    }
    Ok((indices, synths))
}
