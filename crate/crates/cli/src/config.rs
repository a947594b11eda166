//! Run configurations: one JSON schema per command, strictly validated.
//!
//! Every schema rejects unknown keys, so a typo'd field is a hard error
//! before any computation starts. The `out_dir` field is accepted in every
//! config but never serialized back: the resolved-config echo describes the
//! experiment, and where its files land is invocation plumbing (`--out`),
//! not experiment identity — this is what lets two runs into different
//! directories produce byte-identical echoes.

use std::path::PathBuf;

use rlft_core::data_synth::Labeling;
use rlft_core::gradients::SurrogateShape;
use rlft_core::oracle::BatteryOptions;
use rlft_core::trainers::{EtaSchedule, TrainerConfig};
use rlft_core::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Which world to construct for `synth`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum WorldSpec {
    /// The smallest interesting world: one empty prompt, three
    /// single-token continuations, uniform reference, hidden reward
    /// `(0, 0, r)`.
    PointDemo { r: f64, beta_star: f64 },
    /// Token prompts over a shared vocabulary, uniform reference, hidden
    /// reward drawn uniformly from `[0, reward_scale]` cell-wise.
    RandomTabular {
        vocab_size: usize,
        n_prompts: usize,
        beta_star: f64,
        #[serde(default = "one")]
        reward_scale: f64,
    },
    /// Reuse an existing world descriptor.
    Descriptor { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

/// Where `synth` gets its demonstration continuations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    /// Sampled from the world's expert policy.
    #[default]
    Expert,
    /// The chosen halves of freshly drawn preference pairs — demonstration
    /// data that carries preference signal but no explicit negatives.
    ChosenOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub world: WorldSpec,
    pub n_demo: usize,
    pub n_pref: usize,
    pub seed: u64,
    #[serde(default)]
    pub labeling: Option<Labeling>,
    #[serde(default)]
    pub demo_source: DemoSource,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_demo < 1 || self.n_pref < 1 {
            return Err(CoreError::validation(format!(
                "n_demo and n_pref must be at least 1, got {} and {}",
                self.n_demo, self.n_pref
            )));
        }
        Ok(())
    }

    pub fn labeling(&self) -> Labeling {
        self.labeling.unwrap_or(Labeling::Deterministic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sft,
    Rft,
    Irft,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Sft => "sft",
            Method::Rft => "rft",
            Method::Irft => "irft",
        })
    }
}

/// The trainer block of a train config: [`TrainerConfig`] with `K` either
/// given directly or derived from an epoch count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(rename = "T")]
    pub t_outer: usize,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k_inner: Option<usize>,
    /// Alternative to `K`: total passes over the dataset, spread across the
    /// outer iterations — `K = (n_samples / batch_size) * (epochs / T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<f64>,
    pub eta: f64,
    #[serde(default)]
    pub eta_schedule: EtaSchedule,
    pub beta: f64,
    pub batch_size: usize,
    #[serde(default = "default_shape")]
    pub h: SurrogateShape,
    pub seed: u64,
    #[serde(rename = "reward_clamp_R", default, skip_serializing_if = "Option::is_none")]
    pub reward_clamp: Option<f64>,
    #[serde(default)]
    pub refresh_reference: bool,
}

fn default_shape() -> SurrogateShape {
    SurrogateShape::LogSigmoid
}

impl TrainerSection {
    /// Resolves `K`, applies a seed override, and validates the result.
    pub fn resolve(&self, n_samples: usize, seed_override: Option<u64>) -> Result<TrainerConfig> {
        let k_inner = match (self.k_inner, self.epochs) {
            (Some(_), Some(_)) => {
                return Err(CoreError::validation(
                    "give either K or epochs, not both",
                ));
            }
            (None, None) => {
                return Err(CoreError::validation("one of K or epochs is required"));
            }
            (Some(k), None) => k,
            (None, Some(epochs)) => {
                if !epochs.is_finite() || epochs <= 0.0 {
                    return Err(CoreError::validation(format!(
                        "epochs must be positive and finite, got {epochs}"
                    )));
                }
                if self.batch_size < 1 || self.t_outer < 1 {
                    return Err(CoreError::validation(
                        "batch_size and T must be at least 1",
                    ));
                }
                let k = (n_samples as f64 / self.batch_size as f64)
                    * (epochs / self.t_outer as f64);
                let k = k.round() as usize;
                if k < 1 {
                    return Err(CoreError::validation(format!(
                        "epochs = {epochs} over {n_samples} samples resolves to K = 0; \
                         increase epochs or shrink T/batch_size"
                    )));
                }
                k
            }
        };
        let config = TrainerConfig {
            t_outer: self.t_outer,
            k_inner,
            eta: self.eta,
            eta_schedule: self.eta_schedule,
            beta: self.beta,
            batch_size: self.batch_size,
            h: self.h,
            seed: seed_override.unwrap_or(self.seed),
            reward_clamp: self.reward_clamp,
            refresh_reference: self.refresh_reference,
        };
        config.validate()?;
        Ok(config)
    }

    /// The section as it should appear in the resolved echo: `K` explicit,
    /// `epochs` gone, seed final.
    pub fn resolved(&self, config: &TrainerConfig) -> TrainerSection {
        TrainerSection {
            t_outer: config.t_outer,
            k_inner: Some(config.k_inner),
            epochs: None,
            eta: config.eta,
            eta_schedule: config.eta_schedule,
            beta: config.beta,
            batch_size: config.batch_size,
            h: config.h,
            seed: config.seed,
            reward_clamp: config.reward_clamp,
            refresh_reference: config.refresh_reference,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub demo_file: PathBuf,
    /// Checkpoint of the reference policy; its family decides the model
    /// family of the whole run.
    pub reference_file: PathBuf,
    /// Optional starting checkpoint. Defaults: policy methods start at the
    /// reference, explicit-reward training starts at the zero reward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_file: Option<PathBuf>,
    pub trainer: TrainerSection,
    /// Informational marker recomputed into every echo: `method = irft`
    /// with `T = 1` is exactly a single-snapshot self-play run. Accepted on
    /// input so echoes re-execute; the stored value is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_equivalent: Option<bool>,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

/// How a preference pair is scored in `bt_diagnostic`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Explicit {
        reward_file: PathBuf,
    },
    Implicit {
        policy_file: PathBuf,
        reference_file: PathBuf,
        beta: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "metric", rename_all = "snake_case")]
pub enum MetricSpec {
    /// Held-out log-prob gap of a policy on a preference file.
    Gap {
        policy_file: PathBuf,
        pref_file: PathBuf,
    },
    /// Sampled pairwise comparison of two policies under a judge reward,
    /// over the distinct prompts of a dataset file.
    WinRate {
        policy_a: PathBuf,
        policy_b: PathBuf,
        judge_file: PathBuf,
        prompts_from: PathBuf,
        n_per_prompt: usize,
    },
    /// Pairwise logistic diagnostic of a scorer on a preference file.
    BtDiagnostic {
        scorer: ScorerSpec,
        pref_file: PathBuf,
    },
    /// Gradient-norm summary of a training trace CSV.
    ConvergenceStats { trace_file: PathBuf },
}

impl MetricSpec {
    /// Basename stem for this metric's CSV.
    pub fn stem(&self) -> &'static str {
        match self {
            MetricSpec::Gap { .. } => "gap",
            MetricSpec::WinRate { .. } => "win_rate",
            MetricSpec::BtDiagnostic { .. } => "bt_diagnostic",
            MetricSpec::ConvergenceStats { .. } => "convergence_stats",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<MetricSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(CoreError::validation("eval config selects no metrics"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_instances")]
    pub n_instances: usize,
    #[serde(default = "default_max_prompts")]
    pub max_prompts: usize,
    #[serde(default = "default_max_conts")]
    pub max_conts: usize,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

fn default_n_instances() -> usize {
    10
}

fn default_max_prompts() -> usize {
    3
}

fn default_max_conts() -> usize {
    5
}

impl OracleCheckConfig {
    pub fn battery_options(&self, seed_override: Option<u64>) -> BatteryOptions {
        BatteryOptions {
            seed: seed_override.unwrap_or(self.seed),
            n_instances: self.n_instances,
            max_prompts: self.max_prompts,
            max_conts: self.max_conts,
        }
    }
}

/// Parses a config file, turning serde's message into a line-numbered
/// parse error.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CoreError::Parse {
        line: e.line(),
        message: format!("{what} config: {e}"),
    })
}
