use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which task losses are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub fw: bool,
    pub bw: bool,
    pub bin: bool,
}

impl LossMask {
    pub const ALL: LossMask = LossMask {
        fw: true,
        bw: true,
        bin: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.fw || self.bw || self.bin)
    }
}

impl Default for LossMask {
    fn default() -> Self {
        LossMask::ALL
    }
}

impl FromStr for LossMask {
    type Err = Error;

    /// Comma-separated subset of `fw`, `bw`, `bin` (or `all`).
    fn from_str(s: &str) -> Result<Self> {
        let mut m = LossMask {
            fw: false,
            bw: false,
            bin: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "fw" => m.fw = true,
                "bw" => m.bw = true,
                "bin" | "b" => m.bin = true,
                "all" => m = LossMask::ALL,
                other => return Err(Error::Config(format!("unknown loss term {other:?}"))),
            }
        }
        if m.is_empty() {
            return Err(Error::Config(
                "loss mask must enable at least one task".into(),
            ));
        }
        Ok(m)
    }
}

impl fmt::Display for LossMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.fw, "fw"), (self.bw, "bw"), (self.bin, "bin")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Training hyper-parameters. Defaults follow the GloVe setting:
/// B=256, c=1024, NAdam lr 0.001, 20 epochs with patience 5, R(α=0.001, β=1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Grounded width c.
    pub grounded_dim: usize,
    /// Projector hidden width q; `None` means q = c.
    pub projector_dim: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub freeze_embeddings: bool,
    pub loss_mask: LossMask,
    pub reg_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grounded_dim: 1024,
            projector_dim: None,
            batch_size: 256,
            lr: 0.001,
            epochs: 20,
            patience: 5,
            alpha: 0.001,
            beta: 1.0,
            seed: 0,
            freeze_embeddings: false,
            loss_mask: LossMask::ALL,
            reg_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn projector_width(&self) -> usize {
        self.projector_dim.unwrap_or(self.grounded_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.loss_mask.is_empty() {
            return bad("loss mask must enable at least one task".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!(
                "alpha must be a non-negative number, got {}",
                self.alpha
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.grounded_dim == 0 || self.projector_width() == 0 {
            return bad("grounded and projector widths must be positive".into());
        }
        if self.batch_size < 2 && self.loss_mask.bin {
            return bad("the matching task needs batches of at least 2".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        Ok(())
    }
}
