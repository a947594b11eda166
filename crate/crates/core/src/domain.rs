//! Core data types: vocabularies, token sequences, demonstration and
//! preference datasets, and their on-disk format.
//!
//! Datasets are line-delimited JSON. An optional first record declares the
//! vocabulary (`{"vocab_size": 3, "labels": ["a","b","c"]}`); every
//! following line is one item. Demonstration items carry `prompt` and
//! `continuation`; preference items carry `prompt`, `chosen`, and
//! `rejected`. Token sequences are arrays of integer token indices.
//!
//! Prompt weights (the empirical prompt distribution used by exact
//! objectives) default to the empirical frequency of each distinct prompt:
//! a prompt that appears on k of n lines gets weight k/n.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Tolerance for "weights sum to 1" checks on explicit prompt weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Token alphabet shared by all models and datasets in one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    labels: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from display labels. Requires at least two
    /// distinct, non-empty, control-character-free labels.
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(CoreError::validation(format!(
                "vocabulary needs at least 2 tokens, got {}",
                labels.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() || label.chars().any(|c| c.is_control()) {
                return Err(CoreError::validation(format!(
                    "label {i} is empty or contains control characters"
                )));
            }
            if let Some(prev) = seen.insert(label.clone(), i) {
                return Err(CoreError::validation(format!(
                    "duplicate label {label:?} at indices {prev} and {i}"
                )));
            }
        }
        Ok(Vocab { labels })
    }

    /// Vocabulary of `size` tokens with generated labels `t0, t1, ...`.
    pub fn with_size(size: usize) -> Result<Self> {
        Vocab::new((0..size).map(|i| format!("t{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, token: usize) -> Option<&str> {
        self.labels.get(token).map(|s| s.as_str())
    }
}

/// Conditioning context: a (possibly empty) token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt(Vec<usize>);

impl Prompt {
    pub fn new(tokens: Vec<usize>) -> Self {
        Prompt(tokens)
    }

    /// The empty prompt (unconditional generation).
    pub fn empty() -> Self {
        Prompt(Vec::new())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Model output: a non-empty token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Continuation(Vec<usize>);

impl Continuation {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(CoreError::validation("continuation must be non-empty"));
        }
        Ok(Continuation(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false — the constructor rejects empty token lists — but keeps
    /// `len` honest for callers that treat this as a collection.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Continuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// One demonstration: a prompt and the continuation an expert produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoPair {
    pub prompt: Prompt,
    pub continuation: Continuation,
}

/// One preference judgment: two distinct continuations of the same prompt,
/// ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefTriple {
    pub prompt: Prompt,
    pub chosen: Continuation,
    pub rejected: Continuation,
}

/// Checks every token of a sequence against the vocabulary.
fn check_tokens(tokens: &[usize], vocab: &Vocab, what: &str) -> Result<()> {
    for &t in tokens {
        if t >= vocab.size() {
            return Err(CoreError::validation(format!(
                "{what}: token {t} out of range for vocab of size {}",
                vocab.size()
            )));
        }
    }
    Ok(())
}

/// Distinct prompts of a dataset, in first-appearance order, with empirical
/// weights (each item contributes 1/n to its prompt).
fn empirical_prompt_distribution<'a, I>(prompts: I, n: usize) -> (Vec<Prompt>, Vec<f64>)
where
    I: Iterator<Item = &'a Prompt>,
{
    let mut order: Vec<Prompt> = Vec::new();
    let mut index: HashMap<Prompt, usize> = HashMap::new();
    let mut counts: Vec<usize> = Vec::new();
    for p in prompts {
        match index.get(p) {
            Some(&i) => counts[i] += 1,
            None => {
                index.insert(p.clone(), order.len());
                order.push(p.clone());
                counts.push(1);
            }
        }
    }
    let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
    (order, weights)
}

fn validate_explicit_weights(weights: &[f64], n_prompts: usize) -> Result<()> {
    if weights.len() != n_prompts {
        return Err(CoreError::validation(format!(
            "prompt_weights has {} entries for {} distinct prompts",
            weights.len(),
            n_prompts
        )));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(CoreError::validation("prompt weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(CoreError::validation(format!(
            "prompt weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}"
        )));
    }
    Ok(())
}

/// Demonstration dataset: the expert data a trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    vocab: Vocab,
    items: Vec<DemoPair>,
    /// Explicit prompt weights aligned with [`DemoSet::distinct_prompts`];
    /// `None` means the empirical default.
    prompt_weights: Option<Vec<f64>>,
}

impl DemoSet {
    /// Validates items against `vocab` and builds the set. Rejects an empty
    /// item list.
    pub fn new(vocab: Vocab, items: Vec<DemoPair>) -> Result<Self> {
        if items.is_empty() {
            return Err(CoreError::validation("empty dataset"));
        }
        for (i, item) in items.iter().enumerate() {
            check_tokens(item.prompt.tokens(), &vocab, &format!("item {i} prompt"))?;
            check_tokens(
                item.continuation.tokens(),
                &vocab,
                &format!("item {i} continuation"),
            )?;
        }
        Ok(DemoSet {
            vocab,
            items,
            prompt_weights: None,
        })
    }

    /// Overrides the empirical prompt distribution. `weights` must align
    /// with [`DemoSet::distinct_prompts`], be non-negative, and sum to 1.
    pub fn set_prompt_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        validate_explicit_weights(&weights, self.distinct_prompts().len())?;
        self.prompt_weights = Some(weights);
        Ok(())
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn items(&self) -> &[DemoPair] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct prompts in first-appearance order.
    pub fn distinct_prompts(&self) -> Vec<Prompt> {
        empirical_prompt_distribution(self.items.iter().map(|d| &d.prompt), self.items.len()).0
    }

    /// The empirical prompt distribution (or the explicit override), aligned
    /// with [`DemoSet::distinct_prompts`]. Duplicated prompts accumulate
    /// weight under the default.
    pub fn prompt_distribution(&self) -> (Vec<Prompt>, Vec<f64>) {
        let (prompts, empirical) =
            empirical_prompt_distribution(self.items.iter().map(|d| &d.prompt), self.items.len());
        match &self.prompt_weights {
            Some(w) => (prompts, w.clone()),
            None => (prompts, empirical),
        }
    }

    /// Items grouped by distinct prompt, in first-appearance order. Each
    /// group lists indices into [`DemoSet::items`].
    pub fn items_by_prompt(&self) -> Vec<(Prompt, Vec<usize>)> {
        let prompts = self.distinct_prompts();
        let mut index: HashMap<&Prompt, usize> = HashMap::new();
        for (i, p) in prompts.iter().enumerate() {
            index.insert(p, i);
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); prompts.len()];
        for (i, item) in self.items.iter().enumerate() {
            groups[index[&item.prompt]].push(i);
        }
        prompts.into_iter().zip(groups).collect()
    }
}

/// Preference dataset used for evaluation and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefSet {
    vocab: Vocab,
    items: Vec<PrefTriple>,
}

impl PrefSet {
    /// Builds the set, rejecting empty input, out-of-range tokens, and
    /// degenerate pairs. For itemized (non-failing) diagnostics on suspect
    /// data, see [`validate_pref_set`].
    pub fn new(vocab: Vocab, items: Vec<PrefTriple>) -> Result<Self> {
        if items.is_empty() {
            return Err(CoreError::validation("empty dataset"));
        }
        let candidate = PrefSet { vocab, items };
        let violations = validate_pref_set(&candidate);
        if let Some(v) = violations.first() {
            return Err(CoreError::validation(v.to_string()));
        }
        Ok(candidate)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn items(&self) -> &[PrefTriple] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One invariant violation found in a preference set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefViolation {
    /// Index of the offending item.
    pub index: usize,
    /// Which field is at fault (`"prompt"`, `"chosen"`, `"rejected"`, or
    /// `"pair"` for degeneracy).
    pub field: String,
    pub message: String,
}

impl fmt::Display for PrefViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at index {}: {}", self.field, self.index, self.message)
    }
}

/// Checks every item of a preference set, returning all violations rather
/// than stopping at the first: token-range errors per field, and degenerate
/// pairs where chosen and rejected coincide.
pub fn validate_pref_set(prefs: &PrefSet) -> Vec<PrefViolation> {
    let mut violations = Vec::new();
    let vocab_size = prefs.vocab.size();
    let check = |index: usize, field: &str, tokens: &[usize], out: &mut Vec<PrefViolation>| {
        if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_size) {
            out.push(PrefViolation {
                index,
                field: field.to_string(),
                message: format!("token {t} out of range for vocab of size {vocab_size}"),
            });
        }
    };
    for (i, item) in prefs.items.iter().enumerate() {
        check(i, "prompt", item.prompt.tokens(), &mut violations);
        check(i, "chosen", item.chosen.tokens(), &mut violations);
        check(i, "rejected", item.rejected.tokens(), &mut violations);
        if item.chosen == item.rejected {
            violations.push(PrefViolation {
                index: i,
                field: "pair".to_string(),
                message: "degenerate pair: chosen equals rejected".to_string(),
            });
        }
    }
    violations
}

/// Optional first record of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabHeader {
    vocab_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl VocabHeader {
    fn into_vocab(self, line: usize) -> Result<Vocab> {
        let vocab = match self.labels {
            Some(labels) => {
                if labels.len() != self.vocab_size {
                    return Err(CoreError::Parse {
                        line,
                        message: format!(
                            "header declares vocab_size {} but lists {} labels",
                            self.vocab_size,
                            labels.len()
                        ),
                    });
                }
                Vocab::new(labels)
            }
            None => Vocab::with_size(self.vocab_size),
        };
        vocab.map_err(|e| CoreError::Parse {
            line,
            message: e.to_string(),
        })
    }
}

/// Item lines of a dataset file, each with its 1-based line number.
type NumberedLines = Vec<(usize, String)>;

/// Splits a dataset file into (optional header, item lines with 1-based
/// line numbers). Blank lines are skipped.
fn read_lines(path: &Path) -> Result<(Option<(VocabHeader, usize)>, NumberedLines)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut header = None;
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        if items.is_empty() && header.is_none() {
            if let Ok(h) = serde_json::from_str::<VocabHeader>(&text) {
                header = Some((h, line_no));
                continue;
            }
        }
        items.push((line_no, text));
    }
    Ok((header, items))
}

fn infer_vocab(max_token: Option<usize>) -> Result<Vocab> {
    // Headerless files fall back to the smallest vocabulary covering the
    // observed tokens (never below the 2-token minimum).
    let size = max_token.map_or(2, |m| (m + 1).max(2));
    Vocab::with_size(size)
}

/// Loads a demonstration dataset. Parse failures name the offending line;
/// validation failures (token range, emptiness) surface as validation
/// errors naming the item.
pub fn load_demo_set(path: impl AsRef<Path>) -> Result<DemoSet> {
    let (header, lines) = read_lines(path.as_ref())?;
    let mut items = Vec::with_capacity(lines.len());
    for (line_no, text) in &lines {
        let pair: DemoPair = serde_json::from_str(text).map_err(|e| CoreError::Parse {
            line: *line_no,
            message: e.to_string(),
        })?;
        items.push(pair);
    }
    let vocab = match header {
        Some((h, line_no)) => h.into_vocab(line_no)?,
        None => infer_vocab(
            items
                .iter()
                .flat_map(|d| {
                    d.prompt
                        .tokens()
                        .iter()
                        .chain(d.continuation.tokens().iter())
                })
                .max()
                .copied(),
        )?,
    };
    DemoSet::new(vocab, items)
}

/// Loads a preference dataset; same conventions as [`load_demo_set`].
pub fn load_pref_set(path: impl AsRef<Path>) -> Result<PrefSet> {
    let (header, lines) = read_lines(path.as_ref())?;
    let mut items = Vec::with_capacity(lines.len());
    for (line_no, text) in &lines {
        let triple: PrefTriple = serde_json::from_str(text).map_err(|e| CoreError::Parse {
            line: *line_no,
            message: e.to_string(),
        })?;
        items.push(triple);
    }
    let vocab = match header {
        Some((h, line_no)) => h.into_vocab(line_no)?,
        None => infer_vocab(
            items
                .iter()
                .flat_map(|t| {
                    t.prompt
                        .tokens()
                        .iter()
                        .chain(t.chosen.tokens().iter())
                        .chain(t.rejected.tokens().iter())
                })
                .max()
                .copied(),
        )?,
    };
    PrefSet::new(vocab, items)
}

fn write_dataset<T: Serialize>(
    path: &Path,
    vocab: &Vocab,
    items: impl Iterator<Item = T>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = VocabHeader {
        vocab_size: vocab.size(),
        labels: Some(vocab.labels().to_vec()),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for item in items {
        writeln!(out, "{}", serde_json::to_string(&item)?)?;
    }
    Ok(())
}

/// Writes a demonstration dataset with an explicit vocabulary header.
/// `load_demo_set` reproduces the set exactly.
pub fn save_demo_set(demos: &DemoSet, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(path.as_ref(), &demos.vocab, demos.items.iter())
}

/// Writes a preference dataset; inverse of [`load_pref_set`].
pub fn save_pref_set(prefs: &PrefSet, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(path.as_ref(), &prefs.vocab, prefs.items.iter())
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Parse {
            line: e.line(),
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(prompt: Vec<usize>, cont: Vec<usize>) -> DemoPair {
        DemoPair {
            prompt: Prompt::new(prompt),
            continuation: Continuation::new(cont).unwrap(),
        }
    }

    #[test]
    fn vocab_rejects_degenerate_inputs() {
        assert!(Vocab::new(vec!["a".into()]).is_err());
        assert!(Vocab::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocab::new(vec!["a".into(), "b\n".into()]).is_err());
        assert!(Vocab::new(vec!["a".into(), "".into()]).is_err());
        assert!(Vocab::new(vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn continuation_must_be_non_empty() {
        assert!(Continuation::new(vec![]).is_err());
    }

    #[test]
    fn demo_set_rejects_out_of_range_tokens() {
        let vocab = Vocab::with_size(3).unwrap();
        let err = DemoSet::new(vocab, vec![demo(vec![], vec![3])]).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn demo_set_rejects_empty() {
        let vocab = Vocab::with_size(2).unwrap();
        let err = DemoSet::new(vocab, vec![]).unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn duplicated_prompts_accumulate_weight() {
        let vocab = Vocab::with_size(3).unwrap();
        let demos = DemoSet::new(
            vocab,
            vec![
                demo(vec![0], vec![1]),
                demo(vec![0], vec![2]),
                demo(vec![1], vec![1]),
                demo(vec![0], vec![1]),
            ],
        )
        .unwrap();
        let (prompts, weights) = demos.prompt_distribution();
        assert_eq!(prompts, vec![Prompt::new(vec![0]), Prompt::new(vec![1])]);
        assert_eq!(weights, vec![0.75, 0.25]);
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn explicit_weights_must_sum_to_one() {
        let vocab = Vocab::with_size(3).unwrap();
        let mut demos =
            DemoSet::new(vocab, vec![demo(vec![0], vec![1]), demo(vec![1], vec![1])]).unwrap();
        assert!(demos.set_prompt_weights(vec![0.6, 0.5]).is_err());
        assert!(demos.set_prompt_weights(vec![0.6]).is_err());
        assert!(demos.set_prompt_weights(vec![0.6, 0.4]).is_ok());
    }

    #[test]
    fn validate_pref_set_reports_degenerate_pair() {
        let vocab = Vocab::with_size(3).unwrap();
        let items = vec![PrefTriple {
            prompt: Prompt::empty(),
            chosen: Continuation::new(vec![1]).unwrap(),
            rejected: Continuation::new(vec![1]).unwrap(),
        }];
        // Bypass the constructor to inspect the diagnostic directly.
        let prefs = PrefSet { vocab, items };
        let violations = validate_pref_set(&prefs);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].index, 0);
        assert_eq!(violations[0].field, "pair");
        assert!(violations[0].message.contains("degenerate"));
    }

    #[test]
    fn validate_pref_set_reports_one_violation_per_field() {
        let vocab = Vocab::with_size(2).unwrap();
        let items = vec![PrefTriple {
            prompt: Prompt::new(vec![5]),
            chosen: Continuation::new(vec![7]).unwrap(),
            rejected: Continuation::new(vec![0]).unwrap(),
        }];
        let prefs = PrefSet { vocab, items };
        let violations = validate_pref_set(&prefs);
        let fields: Vec<&str> = violations.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(fields, vec!["prompt", "chosen"]);
    }

    #[test]
    fn demo_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let vocab = Vocab::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let demos = DemoSet::new(
            vocab,
            vec![demo(vec![], vec![2]), demo(vec![0, 1], vec![1, 1, 0])],
        )
        .unwrap();
        save_demo_set(&demos, &path).unwrap();
        let loaded = load_demo_set(&path).unwrap();
        assert_eq!(loaded, demos);
    }

    #[test]
    fn pref_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        let vocab = Vocab::with_size(4).unwrap();
        let prefs = PrefSet::new(
            vocab,
            vec![PrefTriple {
                prompt: Prompt::new(vec![3]),
                chosen: Continuation::new(vec![0, 2]).unwrap(),
                rejected: Continuation::new(vec![1]).unwrap(),
            }],
        )
        .unwrap();
        save_pref_set(&prefs, &path).unwrap();
        let loaded = load_pref_set(&path).unwrap();
        assert_eq!(loaded, prefs);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"vocab_size\": 3}\n{\"prompt\": [], \"continuation\": [1]}\nnot json\n",
        )
        .unwrap();
        let err = load_demo_set(&path).unwrap_err();
        match err {
            CoreError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn headerless_file_infers_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        std::fs::write(&path, "{\"prompt\": [4], \"continuation\": [1]}\n").unwrap();
        let demos = load_demo_set(&path).unwrap();
        assert_eq!(demos.vocab().size(), 5);
    }

    #[test]
    fn header_vocab_bounds_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        std::fs::write(
            &path,
            "{\"vocab_size\": 2}\n{\"prompt\": [], \"continuation\": [5]}\n",
        )
        .unwrap();
        let err = load_demo_set(&path).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }
}
