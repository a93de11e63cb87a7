use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::tokenize::tokenize;
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// A tokenized caption before vocabulary resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCaption {
    pub image_id: String,
    pub tokens: Vec<String>,
}

/// A caption whose tokens are all in-vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub tokens: Vec<usize>,
    /// Token count before out-of-vocabulary words were dropped.
    pub raw_length: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ImageId {
    Str(String),
    Int(i64),
}

#[derive(Deserialize)]
struct CaptionLine {
    image_id: ImageId,
    caption: String,
}

/// Read JSON-lines `{"image_id": ..., "caption": ...}` and tokenize.
pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<RawCaption>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: n + 1,
            msg: format!("bad caption record: {e}"),
        })?;
        let image_id = match rec.image_id {
            ImageId::Str(s) => s,
            ImageId::Int(i) => i.to_string(),
        };
        out.push(RawCaption {
            image_id,
            tokens: tokenize(&rec.caption),
        });
    }
    Ok(out)
}

/// Map tokens to ids, dropping out-of-vocabulary words and then any caption
/// left empty.
pub fn resolve_captions(raw: &[RawCaption], vocab: &Vocab) -> Vec<CaptionRecord> {
    raw.iter()
        .filter_map(|c| {
            let tokens: Vec<usize> = c.tokens.iter().filter_map(|t| vocab.index(t)).collect();
            (!tokens.is_empty()).then(|| CaptionRecord {
                image_id: c.image_id.clone(),
                tokens,
                raw_length: c.tokens.len(),
            })
        })
        .collect()
}
