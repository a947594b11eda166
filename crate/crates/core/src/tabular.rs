//! Shared enumeration for tabular models.
//!
//! A [`TabularIndex`] fixes the finite prompt set and, per prompt, the
//! finite continuation set. Tabular policies and tabular rewards are both
//! parameter tables over the same (prompt, continuation) cells; sharing one
//! index (by `Arc`) guarantees the enumerations line up, which the
//! policy-alignment and exact-objective operations require.

use std::collections::HashMap;
use std::sync::Arc;

use crate::domain::{Continuation, Prompt, Vocab};
use crate::error::{CoreError, Result};

/// Upper bound on total enumerated cells; exact operations refuse larger
/// instances rather than grind.
pub const MAX_ENUMERATED_CELLS: usize = 100_000;

/// Finite (prompt, continuation) enumeration with O(1) lookup in both
/// directions. Rows may be ragged: each prompt carries its own continuation
/// list. Cell parameters are stored flat, row-major, by [`TabularIndex::flat`].
#[derive(Debug)]
pub struct TabularIndex {
    vocab: Vocab,
    prompts: Vec<Prompt>,
    continuations: Vec<Vec<Continuation>>,
    offsets: Vec<usize>,
    total_cells: usize,
    prompt_lookup: HashMap<Prompt, usize>,
    cont_lookups: Vec<HashMap<Continuation, usize>>,
}

impl PartialEq for TabularIndex {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.prompts == other.prompts
            && self.continuations == other.continuations
    }
}

impl TabularIndex {
    /// Builds an index over distinct prompts and, per prompt, distinct
    /// continuations. All tokens must be in range for `vocab` and every
    /// prompt needs at least one continuation.
    pub fn new(
        vocab: Vocab,
        prompts: Vec<Prompt>,
        continuations: Vec<Vec<Continuation>>,
    ) -> Result<Arc<Self>> {
        if prompts.is_empty() {
            return Err(CoreError::validation("index needs at least one prompt"));
        }
        if prompts.len() != continuations.len() {
            return Err(CoreError::validation(format!(
                "{} prompts but {} continuation rows",
                prompts.len(),
                continuations.len()
            )));
        }
        let mut prompt_lookup = HashMap::new();
        for (i, p) in prompts.iter().enumerate() {
            for &t in p.tokens() {
                if t >= vocab.size() {
                    return Err(CoreError::validation(format!(
                        "prompt {i}: token {t} out of range for vocab of size {}",
                        vocab.size()
                    )));
                }
            }
            if prompt_lookup.insert(p.clone(), i).is_some() {
                return Err(CoreError::validation(format!("duplicate prompt at row {i}")));
            }
        }
        let mut offsets = Vec::with_capacity(prompts.len());
        let mut cont_lookups = Vec::with_capacity(prompts.len());
        let mut total = 0usize;
        for (i, row) in continuations.iter().enumerate() {
            if row.is_empty() {
                return Err(CoreError::validation(format!(
                    "prompt {i} has no continuations"
                )));
            }
            let mut lookup = HashMap::new();
            for (j, c) in row.iter().enumerate() {
                for &t in c.tokens() {
                    if t >= vocab.size() {
                        return Err(CoreError::validation(format!(
                            "prompt {i} continuation {j}: token {t} out of range"
                        )));
                    }
                }
                if lookup.insert(c.clone(), j).is_some() {
                    return Err(CoreError::validation(format!(
                        "prompt {i}: duplicate continuation at column {j}"
                    )));
                }
            }
            offsets.push(total);
            total += row.len();
            cont_lookups.push(lookup);
        }
        if total > MAX_ENUMERATED_CELLS {
            return Err(CoreError::TooLarge(format!(
                "{total} cells exceeds the {MAX_ENUMERATED_CELLS} enumeration bound"
            )));
        }
        Ok(Arc::new(TabularIndex {
            vocab,
            prompts,
            continuations,
            offsets,
            total_cells: total,
            prompt_lookup,
            cont_lookups,
        }))
    }

    /// Convenience index: one row per prompt, all rows sharing the same
    /// continuation list.
    pub fn with_shared_continuations(
        vocab: Vocab,
        prompts: Vec<Prompt>,
        continuations: Vec<Continuation>,
    ) -> Result<Arc<Self>> {
        let rows = vec![continuations; prompts.len()];
        TabularIndex::new(vocab, prompts, rows)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn prompt(&self, i: usize) -> &Prompt {
        &self.prompts[i]
    }

    /// Continuation row for prompt `i`.
    pub fn row(&self, i: usize) -> &[Continuation] {
        &self.continuations[i]
    }

    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    /// Flat parameter offset of cell `(i, j)`.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    /// Flat offset range covering row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.offsets[i];
        start..start + self.continuations[i].len()
    }

    pub fn prompt_index(&self, p: &Prompt) -> Option<usize> {
        self.prompt_lookup.get(p).copied()
    }

    pub fn cont_index(&self, prompt_i: usize, c: &Continuation) -> Option<usize> {
        self.cont_lookups[prompt_i].get(c).copied()
    }

    /// Looks up the cell of `(x, y)`, with errors naming whichever part is
    /// missing from the enumeration.
    pub fn cell(&self, x: &Prompt, y: &Continuation) -> Result<(usize, usize)> {
        let i = self.prompt_index(x).ok_or_else(|| {
            CoreError::mismatch(format!("prompt {:?} not in the enumeration", x.tokens()))
        })?;
        let j = self.cont_index(i, y).ok_or_else(|| {
            CoreError::mismatch(format!(
                "continuation {y} not in the enumeration for prompt {:?}",
                x.tokens()
            ))
        })?;
        Ok((i, j))
    }
}

/// Index for single-token continuation worlds: `n_prompts` prompts (token
/// sequences `[0], [1], ...`, or one empty prompt when `n_prompts == 1`)
/// over every single-token continuation of `vocab`.
pub fn single_token_index(vocab: Vocab, n_prompts: usize) -> Result<Arc<TabularIndex>> {
    if n_prompts > vocab.size() {
        return Err(CoreError::validation(format!(
            "cannot form {n_prompts} distinct single-token prompts over {} tokens",
            vocab.size()
        )));
    }
    let prompts: Vec<Prompt> = if n_prompts == 1 {
        vec![Prompt::empty()]
    } else {
        (0..n_prompts).map(|t| Prompt::new(vec![t])).collect()
    };
    let conts: Vec<Continuation> = (0..vocab.size())
        .map(|t| Continuation::new(vec![t]).expect("single token is non-empty"))
        .collect();
    TabularIndex::with_shared_continuations(vocab, prompts, conts)
}
