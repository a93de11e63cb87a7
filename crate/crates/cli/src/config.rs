//! Flat JSON run configuration. Every key is optional; command-line flags
//! win over file values, file values win over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vgembed::model::LossMask;

use crate::exit::CliError;

/// Loss mask as either `"fw,bw"` or `{"fw": true, "bw": true, "bin": false}`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Text(String),
    Flags(LossMask),
}

impl MaskSpec {
    pub fn resolve(&self) -> Result<LossMask, CliError> {
        match self {
            MaskSpec::Text(s) => s.parse().map_err(CliError::from),
            MaskSpec::Flags(m) if m.is_empty() => {
                Err(CliError::config("loss mask must enable at least one task"))
            }
            MaskSpec::Flags(m) => Ok(*m),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // shared
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,

    // inputs
    pub embeddings: Option<PathBuf>,
    pub embed_limit: Option<usize>,
    pub train_captions: Option<PathBuf>,
    pub val_captions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    // training
    pub vocab_size: Option<usize>,
    pub grounded_dim: Option<usize>,
    pub projector_dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub freeze_embeddings: Option<bool>,
    pub loss_mask: Option<MaskSpec>,
    pub reg_enabled: Option<bool>,

    // grounding
    pub output: Option<PathBuf>,
    pub fine_tuned_rows: Option<bool>,

    // evaluation
    pub datasets: Option<Vec<PathBuf>>,
    pub categories: Option<bool>,
    pub k: Option<usize>,

    // gradient check
    pub embed_dim: Option<usize>,
    pub feature_dim: Option<usize>,
    pub threshold: Option<f64>,
    pub step: Option<f64>,
    pub corrupt_grad: Option<bool>,
}

impl FileConfig {
    /// Parse `path`. Relative paths inside the file are taken relative to
    /// the file's own directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut cfg.out_dir);
        fix(&mut cfg.embeddings);
        fix(&mut cfg.train_captions);
        fix(&mut cfg.val_captions);
        fix(&mut cfg.features);
        fix(&mut cfg.checkpoint);
        fix(&mut cfg.output);
        if let Some(ds) = &mut cfg.datasets {
            for d in ds.iter_mut() {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
        Ok(cfg)
    }
}

/// Flag, then file, then nothing.
pub fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

/// A setting that has no default.
pub fn require<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::config(format!(
            "missing required setting `{key}` (flag --{})",
            key.replace('_', "-")
        ))
    })
}

/// A required input file that must already exist.
pub fn existing(value: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = require(value, key)?;
    if !p.is_file() {
        return Err(CliError::config(format!(
            "`{key}`: no such file {}",
            p.display()
        )));
    }
    Ok(p)
}

/// Absolute form of an existing path, for provenance records.
pub fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}
