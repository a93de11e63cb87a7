use serde::{Deserialize, Serialize};

use super::{GroundedModel, LossBreakdown, TrainConfig};
use crate::corpus::{make_batches, CaptionBatch, CaptionRecord, EmbeddingTable, ImageFeatureStore};
use crate::error::{Error, Result};
use crate::numerics::{nadam_step, BnMode, Real};

const VALIDATION_SALT: u64 = 0x5e_ed0f_7a11_da7e;

/// Everything training reads.
pub struct TrainData<'a> {
    /// Pre-trained rows of the training vocabulary, in vocabulary order.
    pub embeddings: &'a EmbeddingTable,
    pub train: &'a [CaptionRecord],
    pub val: &'a [CaptionRecord],
    pub features: &'a ImageFeatureStore,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_FW")]
    pub fw: Option<f64>,
    #[serde(rename = "L_BW")]
    pub bw: Option<f64>,
    #[serde(rename = "L_B")]
    pub bin: Option<f64>,
    #[serde(rename = "R")]
    pub reg: Option<f64>,
    pub total: f64,
    pub val_total: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: GroundedModel<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Set when a non-finite value aborted training; `model` is then the
    /// last good checkpoint.
    pub diverged: Option<String>,
}

/// Shuffle seed of epoch `epoch` (1-based).
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One optimizer step on one batch: train-mode forward, backward, running
/// statistics update and NAdam.
pub fn train_step<F: Real>(
    model: &mut GroundedModel<F>,
    batch: &CaptionBatch,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (bd, grads, updates) = model.loss_and_grads(batch, cfg, BnMode::Train)?;
    if !bd.total.is_finite() {
        return Err(Error::Numerical(format!(
            "training loss became {}",
            bd.total
        )));
    }
    for (id, g) in &grads {
        model.store.accumulate(*id, g);
    }
    model.apply_bn_updates(&updates);
    nadam_step(&mut model.store, cfg.lr)?;
    Ok(bd)
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> Option<f64>| {
        items
            .first()
            .and_then(f)
            .map(|_| items.iter().filter_map(f).sum::<f64>() / n)
    };
    LossBreakdown {
        fw: avg(|b| b.fw),
        bw: avg(|b| b.bw),
        bin: avg(|b| b.bin),
        reg: avg(|b| b.reg),
        total: items.iter().map(|b| b.total).sum::<f64>() / n,
    }
}

/// Mean total loss over validation batches with inference-mode batch norm.
/// Negatives are mined with a seed that does not change between epochs.
pub fn validation_loss<F: Real>(
    model: &GroundedModel<F>,
    records: &[CaptionRecord],
    features: &ImageFeatureStore,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let batches = make_batches(
        records,
        features,
        model.dims.vocab,
        cfg.batch_size,
        cfg.loss_mask.bin,
        cfg.seed ^ VALIDATION_SALT,
    )?;
    let parts = batches
        .iter()
        .map(|b| model.total_loss(b, cfg, BnMode::Infer))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_breakdown(&parts))
}

/// Fraction of rows whose matcher decision (`logit > 0`) equals the label.
pub fn matcher_accuracy<F: Real>(
    model: &GroundedModel<F>,
    batches: &[CaptionBatch],
) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for b in batches {
        let (logits, labels) = model.matcher_scores(b, BnMode::Infer)?;
        for (z, y) in logits.iter().zip(&labels) {
            let pred = *z > F::zero();
            right += usize::from(pred == (*y > F::of(0.5)));
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("no rows to score".into()));
    }
    Ok(right as f64 / total as f64)
}

/// Train from scratch. Each epoch reshuffles the training captions, takes one
/// NAdam step per batch, then scores the validation split; the epoch with the
/// lowest validation loss is kept. Training stops after `patience`
/// consecutive epochs without improvement (at least one) or after `epochs`.
pub fn train(cfg: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("no training captions".into()));
    }
    let mut model = GroundedModel::<f32>::new(
        data.embeddings,
        cfg.grounded_dim,
        data.features.dim(),
        cfg.projector_width(),
        cfg.seed,
    )?;
    model.set_embeddings_frozen(cfg.freeze_embeddings);

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            data.train,
            data.features,
            model.dims.vocab,
            cfg.batch_size,
            cfg.loss_mask.bin,
            epoch_seed(cfg.seed, epoch),
        )?;
        let mut parts = Vec::with_capacity(batches.len());
        for b in &batches {
            match train_step(&mut model, b, cfg) {
                Ok(bd) => parts.push(bd),
                Err(Error::Numerical(msg)) => {
                    log::error!("epoch {epoch}: {msg}; keeping the epoch-{best_epoch} parameters");
                    return Ok(TrainOutcome {
                        model: best,
                        best_epoch,
                        log,
                        stopped_early: true,
                        diverged: Some(msg),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let train_mean = mean_breakdown(&parts);
        let val_total = if data.val.is_empty() {
            train_mean.total
        } else {
            validation_loss(&model, data.val, data.features, cfg)?.total
        };
        if !val_total.is_finite() {
            let msg = format!("validation loss became {val_total}");
            log::error!("epoch {epoch}: {msg}");
            return Ok(TrainOutcome {
                model: best,
                best_epoch,
                log,
                stopped_early: true,
                diverged: Some(msg),
            });
        }
        let improved = val_total < best_val;
        if improved {
            best_val = val_total;
            best = model.clone();
            best_epoch = epoch;
            wait = 0;
        } else {
            wait += 1;
        }
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4}{}",
            train_mean.total,
            val_total,
            if improved { " *" } else { "" }
        );
        log.push(EpochLog {
            epoch,
            fw: train_mean.fw,
            bw: train_mean.bw,
            bin: train_mean.bin,
            reg: train_mean.reg,
            total: train_mean.total,
            val_total,
            improved,
        });
        if !improved && wait >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        best_epoch,
        log,
        stopped_early,
        diverged: None,
    })
}
