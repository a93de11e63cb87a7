use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GroundedModel, TrainConfig};
use crate::corpus::make_batches;
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check_with, BnMode, GradCheckReport, Stencil};
use crate::synthetic::random_corpus;

/// A tiny random model whose analytic gradients are compared against
/// finite differences of the full loss.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientProbe {
    pub vocab: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    /// Captions in the single probe batch.
    pub captions: usize,
    pub max_len: usize,
    pub seed: u64,
    pub stencil: Stencil,
    /// Double every analytic gradient before checking, to prove the check bites.
    pub corrupt: bool,
}

impl Default for GradientProbe {
    fn default() -> Self {
        GradientProbe {
            vocab: 12,
            embed_dim: 5,
            feature_dim: 6,
            captions: 3,
            max_len: 4,
            seed: 21,
            stencil: Stencil::Extrapolated { initial_step: 0.01 },
            corrupt: false,
        }
    }
}

/// Build the probe model in f64 and check the gradient of the total loss
/// configured by `cfg` (widths, loss mask, α, β).
///
/// `T_e` is moved away from its pre-trained rows and the batch-norm affine
/// parameters away from (1, 0), so neither the |β − cos| kink at cos = 1 nor
/// a degenerate normalisation hides an error.
pub fn probe_gradients(cfg: &TrainConfig, probe: &GradientProbe) -> Result<GradCheckReport> {
    cfg.validate()?;
    if probe.captions < 2 && cfg.loss_mask.bin {
        return Err(Error::Config(
            "the matching task needs at least 2 probe captions".into(),
        ));
    }
    let (emb, feats, recs) = random_corpus(
        probe.vocab,
        probe.embed_dim,
        probe.feature_dim,
        probe.captions,
        probe.max_len,
        probe.seed,
    )?;
    let (c, q) = (cfg.grounded_dim, cfg.projector_width());
    let mut model = GroundedModel::<f64>::new(&emb, c, probe.feature_dim, q, probe.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for x in model.store.value_mut(model.emb).data_mut() {
        *x += rng.gen_range(-0.3..0.3);
    }
    for id in [
        model.bn_f.gamma,
        model.bn_b.gamma,
        model.bn_m.gamma,
        model.bn_f.beta,
        model.bn_m.beta,
    ] {
        for x in model.store.value_mut(id).data_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    let batch = make_batches(
        &recs,
        &feats,
        probe.vocab,
        probe.captions,
        cfg.loss_mask.bin,
        3,
    )?
    .remove(0);
    let (_, grads, _) = model.loss_and_grads(&batch, cfg, BnMode::Train)?;
    for (id, g) in &grads {
        model.store.accumulate(*id, g);
        if probe.corrupt {
            model.store.accumulate(*id, g);
        }
    }
    let base = model.clone();
    finite_diff_check_with(
        |s| {
            let mut m = base.clone();
            m.store = s.clone();
            m.total_loss(&batch, cfg, BnMode::Train).map(|bd| bd.total)
        },
        &mut model.store,
        probe.stencil,
    )
}
