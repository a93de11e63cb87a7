use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Precomputed image vectors keyed by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageFeatureStore {
    vectors: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl ImageFeatureStore {
    pub fn new(dim: usize) -> Self {
        ImageFeatureStore {
            vectors: HashMap::new(),
            dim,
        }
    }

    /// Insert or replace; the vector length must match the store's width.
    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f32>) -> Result<Option<Vec<f32>>> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "image vector of length {} in a store of width {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite image feature".into()));
        }
        Ok(self.vectors.insert(id.into(), v))
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Read `image_id v1 … vp` rows. A repeated id keeps its last vector.
pub fn load_image_features(path: impl AsRef<Path>) -> Result<ImageFeatureStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store: Option<ImageFeatureStore> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_ascii_whitespace();
        let Some(id) = fields.next() else { continue };
        let mut v = Vec::new();
        for f in fields {
            match f.parse::<f32>() {
                Ok(x) if x.is_finite() => v.push(x),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        what: "image feature",
                        value: f.to_string(),
                    })
                }
            }
        }
        let s = store.get_or_insert_with(|| ImageFeatureStore::new(v.len()));
        if v.is_empty() || v.len() != s.dim {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected {} feature values, found {}", s.dim, v.len()),
            });
        }
        if s.insert(id, v)?.is_some() {
            log::warn!(
                "{}:{lineno}: duplicate image id {id:?}, keeping the later row",
                path.display()
            );
        }
    }
    Ok(store.unwrap_or_default())
}
