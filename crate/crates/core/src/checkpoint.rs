//! Plain-text model snapshots: one JSON header line describing the model
//! family and its shape, then the parameter vector as one decimal real per
//! line. Floats are printed with Rust's shortest round-trip formatting, so
//! a load/save cycle is byte-stable and bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Continuation, Prompt, Vocab};
use crate::error::{CoreError, Result};
use crate::params::ParamVector;
use crate::policy::{ArConfig, AutoregressivePolicy, PolicyModel, TabularPolicy};
use crate::reward::{FeaturizedReward, RewardModel, TabularReward};
use crate::tabular::TabularIndex;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    family: String,
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enumeration: Option<EnumerationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequence: Option<SequenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clamp_max: Option<f64>,
    n_params: usize,
}

/// The (prompt, continuation) table of a tabular model, as raw token ids.
#[derive(Debug, Serialize, Deserialize)]
struct EnumerationSpec {
    prompts: Vec<Vec<usize>>,
    continuations: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceSpec {
    n_buckets: usize,
    max_len: usize,
    eos_token: Option<usize>,
}

/// Any of the four model families, ready to write or freshly loaded.
#[derive(Debug, Clone)]
pub enum ModelCheckpoint {
    TabularPolicy(TabularPolicy),
    AutoregressivePolicy(AutoregressivePolicy),
    TabularReward(TabularReward),
    FeaturizedReward(FeaturizedReward),
}

impl ModelCheckpoint {
    pub fn family(&self) -> &'static str {
        match self {
            ModelCheckpoint::TabularPolicy(_) => "tabular_policy",
            ModelCheckpoint::AutoregressivePolicy(_) => "autoregressive_policy",
            ModelCheckpoint::TabularReward(_) => "tabular_reward",
            ModelCheckpoint::FeaturizedReward(_) => "featurized_reward",
        }
    }

    /// Borrows the model as a policy, when it is one.
    pub fn as_policy(&self) -> Option<&dyn PolicyModel> {
        match self {
            ModelCheckpoint::TabularPolicy(p) => Some(p),
            ModelCheckpoint::AutoregressivePolicy(p) => Some(p),
            _ => None,
        }
    }

    /// Borrows the model as a reward, when it is one.
    pub fn as_reward(&self) -> Option<&dyn RewardModel> {
        match self {
            ModelCheckpoint::TabularReward(r) => Some(r),
            ModelCheckpoint::FeaturizedReward(r) => Some(r),
            _ => None,
        }
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            ModelCheckpoint::TabularPolicy(p) => p.params(),
            ModelCheckpoint::AutoregressivePolicy(p) => p.params(),
            ModelCheckpoint::TabularReward(r) => r.params(),
            ModelCheckpoint::FeaturizedReward(r) => r.params(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelCheckpoint::TabularPolicy(p) => p.vocab_size(),
            ModelCheckpoint::AutoregressivePolicy(p) => p.vocab_size(),
            ModelCheckpoint::TabularReward(r) => r.index().vocab().size(),
            ModelCheckpoint::FeaturizedReward(r) => r.vocab_size(),
        }
    }
}

fn enumeration_of(index: &TabularIndex) -> EnumerationSpec {
    EnumerationSpec {
        prompts: index.prompts().iter().map(|p| p.tokens().to_vec()).collect(),
        continuations: (0..index.n_prompts())
            .map(|i| index.row(i).iter().map(|c| c.tokens().to_vec()).collect())
            .collect(),
    }
}

fn index_from(
    vocab: Vocab,
    spec: EnumerationSpec,
) -> Result<std::sync::Arc<TabularIndex>> {
    let prompts = spec.prompts.into_iter().map(Prompt::new).collect();
    let continuations = spec
        .continuations
        .into_iter()
        .map(|row| row.into_iter().map(Continuation::new).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    TabularIndex::new(vocab, prompts, continuations)
}

/// Writes the header line followed by one parameter per line.
pub fn save<W: Write>(model: &ModelCheckpoint, mut w: W) -> Result<()> {
    let header = match model {
        ModelCheckpoint::TabularPolicy(p) => Header {
            family: model.family().to_string(),
            vocab_size: p.vocab_size(),
            labels: Some(p.index().vocab().labels().to_vec()),
            enumeration: Some(enumeration_of(p.index())),
            sequence: None,
            clamp_max: None,
            n_params: p.params().len(),
        },
        ModelCheckpoint::AutoregressivePolicy(p) => Header {
            family: model.family().to_string(),
            vocab_size: p.vocab_size(),
            labels: None,
            enumeration: None,
            sequence: Some(SequenceSpec {
                n_buckets: p.config().n_buckets,
                max_len: p.config().max_len,
                eos_token: p.config().eos_token,
            }),
            clamp_max: None,
            n_params: p.params().len(),
        },
        ModelCheckpoint::TabularReward(r) => Header {
            family: model.family().to_string(),
            vocab_size: r.index().vocab().size(),
            labels: Some(r.index().vocab().labels().to_vec()),
            enumeration: Some(enumeration_of(r.index())),
            sequence: None,
            clamp_max: r.clamp_max(),
            n_params: r.params().len(),
        },
        ModelCheckpoint::FeaturizedReward(r) => Header {
            family: model.family().to_string(),
            vocab_size: r.vocab_size(),
            labels: None,
            enumeration: None,
            sequence: None,
            clamp_max: None,
            n_params: r.params().len(),
        },
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for v in model.params().as_slice() {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Reads a checkpoint back. Errors name the offending line (1-based).
pub fn load<R: BufRead>(r: R) -> Result<ModelCheckpoint> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CoreError::Parse {
            line: 1,
            message: "empty checkpoint".to_string(),
        })??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| CoreError::Parse {
        line: 1,
        message: format!("bad checkpoint header: {e}"),
    })?;
    let mut values = Vec::with_capacity(header.n_params);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| CoreError::Parse {
            line: i + 2,
            message: format!("not a decimal real: {line:?}"),
        })?;
        values.push(v);
    }
    if values.len() != header.n_params {
        return Err(CoreError::Parse {
            line: values.len() + 1,
            message: format!(
                "checkpoint declares {} parameters but carries {}",
                header.n_params,
                values.len()
            ),
        });
    }
    let params = ParamVector::new(values)?;
    let need = |field: &str| {
        CoreError::Parse {
            line: 1,
            message: format!("family {} needs the {field} header field", header.family),
        }
    };
    match header.family.as_str() {
        "tabular_policy" => {
            let vocab = Vocab::new(header.labels.ok_or_else(|| need("labels"))?)?;
            let index = index_from(vocab, header.enumeration.ok_or_else(|| need("enumeration"))?)?;
            Ok(ModelCheckpoint::TabularPolicy(TabularPolicy::from_params(
                index, params,
            )?))
        }
        "autoregressive_policy" => {
            let seq = header.sequence.ok_or_else(|| need("sequence"))?;
            let config = ArConfig::new(header.vocab_size, seq.n_buckets, seq.max_len, seq.eos_token)?;
            Ok(ModelCheckpoint::AutoregressivePolicy(
                AutoregressivePolicy::from_params(config, params)?,
            ))
        }
        "tabular_reward" => {
            let vocab = Vocab::new(header.labels.ok_or_else(|| need("labels"))?)?;
            let index = index_from(vocab, header.enumeration.ok_or_else(|| need("enumeration"))?)?;
            Ok(ModelCheckpoint::TabularReward(TabularReward::from_params(
                index,
                params,
                header.clamp_max,
            )?))
        }
        "featurized_reward" => Ok(ModelCheckpoint::FeaturizedReward(
            FeaturizedReward::from_params(header.vocab_size, params)?,
        )),
        other => Err(CoreError::Parse {
            line: 1,
            message: format!("unknown model family {other:?}"),
        }),
    }
}

pub fn save_to_path(model: &ModelCheckpoint, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    save(model, BufWriter::new(file))
}

pub fn load_from_path(path: &Path) -> Result<ModelCheckpoint> {
    let file = File::open(path)?;
    load(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::random_instance;
    use crate::rng::Rng;

    fn ragged_policy() -> TabularPolicy {
        let (instance, _) = random_instance(11, 1.0, 3, 5).unwrap();
        instance.reference
    }

    #[test]
    fn tabular_policy_round_trips_bit_exactly() {
        let policy = ragged_policy();
        let mut buf = Vec::new();
        save(&ModelCheckpoint::TabularPolicy(policy.clone()), &mut buf).unwrap();
        let back = load(&buf[..]).unwrap();
        match &back {
            ModelCheckpoint::TabularPolicy(p) => {
                assert_eq!(p.params(), policy.params());
                assert_eq!(p.index(), policy.index());
            }
            other => panic!("wrong family {}", other.family()),
        }
        // Byte stability: saving the loaded model reproduces the file.
        let mut again = Vec::new();
        save(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn all_families_round_trip() {
        let (instance, reward) = random_instance(5, 0.7, 2, 4).unwrap();
        let mut rng = Rng::seed(3);
        let config = ArConfig::new(5, 2, 6, Some(0)).unwrap();
        let dim = AutoregressivePolicy::zeros(config.clone()).params().len();
        let ar = AutoregressivePolicy::from_params(
            config,
            ParamVector::new((0..dim).map(|_| rng.next_f64() - 0.5).collect()).unwrap(),
        )
        .unwrap();
        let feat = FeaturizedReward::from_params(
            4,
            ParamVector::new(
                (0..FeaturizedReward::zeros(4).unwrap().params().len())
                    .map(|_| rng.next_f64())
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let models = [
            ModelCheckpoint::TabularPolicy(instance.reference.clone()),
            ModelCheckpoint::AutoregressivePolicy(ar),
            ModelCheckpoint::TabularReward(reward),
            ModelCheckpoint::FeaturizedReward(feat),
        ];
        for model in &models {
            let mut buf = Vec::new();
            save(model, &mut buf).unwrap();
            let back = load(&buf[..]).unwrap();
            assert_eq!(back.family(), model.family());
            assert_eq!(back.params(), model.params());
        }
    }

    #[test]
    fn clamp_survives_the_trip() {
        let (instance, mut reward) = random_instance(9, 1.0, 2, 3).unwrap();
        let _ = instance;
        reward.set_clamp(Some(2.5)).unwrap();
        let mut buf = Vec::new();
        save(&ModelCheckpoint::TabularReward(reward.clone()), &mut buf).unwrap();
        match load(&buf[..]).unwrap() {
            ModelCheckpoint::TabularReward(r) => {
                assert_eq!(r.clamp_max(), Some(2.5));
                assert_eq!(r.params(), reward.params());
            }
            other => panic!("wrong family {}", other.family()),
        }
    }

    #[test]
    fn bad_lines_are_named() {
        let policy = ragged_policy();
        let mut buf = Vec::new();
        save(&ModelCheckpoint::TabularPolicy(policy), &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text = text.replacen("\n", "\nnot-a-number\n", 2); // corrupt line 2
        let err = load(text.as_bytes()).err().unwrap();
        match err {
            CoreError::Parse { line, message } => {
                assert_eq!(line, 2, "{message}");
                assert!(message.contains("not-a-number"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn count_mismatch_is_reported() {
        let policy = ragged_policy();
        let mut buf = Vec::new();
        save(&ModelCheckpoint::TabularPolicy(policy), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        let err = load(truncated.as_bytes()).err().unwrap();
        assert!(err.to_string().contains("parameters"), "{err}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        let text = "{\"family\":\"mystery\",\"vocab_size\":3,\"n_params\":0}\n";
        let err = load(text.as_bytes()).err().unwrap();
        assert!(err.to_string().contains("mystery"), "{err}");
    }
}
