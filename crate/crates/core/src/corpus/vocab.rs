use std::collections::HashMap;

use crate::error::{Error, Result};

/// Ordered word list with a reverse index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Words must be unique.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// The `cap` most frequent tokens, by descending count then ascending word.
pub fn build_vocab(captions: &[Vec<String>], cap: usize) -> Result<Vocab> {
    build_vocab_with(captions, cap, |_| true)
}

/// Like [`build_vocab`], but only tokens accepted by `keep` compete for a slot.
pub fn build_vocab_with(
    captions: &[Vec<String>],
    cap: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<Vocab> {
    if cap == 0 {
        return Err(Error::Config("vocabulary cap must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in captions.iter().flatten() {
        if keep(tok) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Vocab::new(ranked.into_iter().map(|(w, _)| w.to_owned()).collect())
}
