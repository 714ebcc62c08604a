//! Word-level vocabulary shared by the corpus and the model.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AgreementInstance, GrammarConfig};
use crate::error::Result;

pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const SPECIAL_TOKENS: [&str; 3] = [PAD, MASK, UNK];

/// Bidirectional word/id map. Ids 0..3 are the special tokens; words follow
/// in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    fn from_words(words: BTreeSet<String>) -> Self {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().filter(|w| !SPECIAL_TOKENS.contains(&w.as_str())));
        all.into()
    }

    pub fn from_grammar(grammar: &GrammarConfig) -> Result<Self> {
        Ok(Self::from_words(grammar.words()?))
    }

    /// Every token and both candidate forms of every instance.
    pub fn from_instances(instances: &[AgreementInstance]) -> Self {
        let mut words = BTreeSet::new();
        for inst in instances {
            words.extend(inst.tokens.iter().cloned());
            words.insert(inst.target_sg_form.clone());
            words.insert(inst.target_pl_form.clone());
        }
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn mask_id(&self) -> u32 {
        self.id(MASK).expect("special tokens are always present")
    }

    pub fn unk_id(&self) -> u32 {
        self.id(UNK).expect("special tokens are always present")
    }

    /// Maps words to ids, sending unknown words to `[UNK]`.
    pub fn encode(&self, words: &[String]) -> Vec<u32> {
        let unk = self.unk_id();
        words.iter().map(|w| self.id(w).unwrap_or(unk)).collect()
    }
}
