use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Word vectors indexed by a [`Vocab`], stored as one `|V|×d` block.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocab,
    vectors: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocab, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if vectors.len() != vocab.len() * dim {
            return Err(Error::Shape(format!(
                "{} words × {dim} dims needs {} values, got {}",
                vocab.len(),
                vocab.len() * dim,
                vectors.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value in the vector of {:?}",
                vocab.word(i / dim.max(1))
            )));
        }
        Ok(EmbeddingTable {
            vocab,
            vectors,
            dim,
        })
    }

    /// Build from `(word, vector)` pairs; all vectors must share one length.
    pub fn from_pairs<S: Into<String>>(
        pairs: impl IntoIterator<Item = (S, Vec<f32>)>,
    ) -> Result<Self> {
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        for (w, v) in pairs {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::Shape(format!(
                    "vector of length {} after {d}",
                    v.len()
                )));
            }
            words.push(w.into());
            vectors.extend(v);
        }
        Self::new(Vocab::new(words)?, vectors, dim.unwrap_or(0))
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vocab.index(word).map(|i| self.row(i))
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Rows for `vocab`'s words, in `vocab` order. Every word must be present.
    pub fn select(&self, vocab: &Vocab) -> Result<EmbeddingTable> {
        let mut vectors = Vec::with_capacity(vocab.len() * self.dim);
        for w in vocab.words() {
            let v = self
                .get(w)
                .ok_or_else(|| Error::Data(format!("no pre-trained vector for {w:?}")))?;
            vectors.extend_from_slice(v);
        }
        EmbeddingTable::new(vocab.clone(), vectors, self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        (0..self.len()).map(move |i| (self.vocab.word(i), self.row(i)))
    }

    pub fn map_vectors(&self, f: impl Fn(f32) -> f32) -> Result<EmbeddingTable> {
        EmbeddingTable::new(
            self.vocab.clone(),
            self.vectors.iter().map(|&x| f(x)).collect(),
            self.dim,
        )
    }
}

fn is_header(line: &str) -> bool {
    let mut it = line.split_ascii_whitespace();
    matches!(
        (it.next(), it.next(), it.next()),
        (Some(a), Some(b), None) if a.parse::<u64>().is_ok() && b.parse::<u64>().is_ok()
    )
}

/// Read the usual text format: optional `"<count> <dim>"` header, then one
/// `word v1 … vd` row per line. Repeated words keep their first vector;
/// `limit` stops after that many data rows.
pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut words = Vec::new();
    let mut seen = HashSet::new();
    let mut vectors = Vec::new();
    let mut dim: Option<usize> = None;
    let mut rows = 0usize;

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 1 && is_header(&line) {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if limit.is_some_and(|l| rows >= l) {
            break;
        }
        rows += 1;
        let mut fields = line.split_ascii_whitespace();
        let word = fields.next().unwrap();
        let start = vectors.len();
        for f in fields {
            match f.parse::<f32>() {
                Ok(x) if x.is_finite() => vectors.push(x),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        what: "vector component",
                        value: f.to_string(),
                    })
                }
            }
        }
        let got = vectors.len() - start;
        match dim {
            None if got == 0 => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("word {word:?} has no vector"),
                })
            }
            None => dim = Some(got),
            Some(d) if d != got => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("dimension mismatch: expected {d} values, found {got}"),
                })
            }
            Some(_) => {}
        }
        if !seen.insert(word.to_string()) {
            vectors.truncate(start);
            continue;
        }
        words.push(word.to_string());
    }
    EmbeddingTable::new(Vocab::new(words)?, vectors, dim.unwrap_or(0))
}
