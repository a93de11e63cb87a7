use serde::{Deserialize, Serialize};

use super::{GroundedModel, TrainConfig};
use crate::corpus::CaptionBatch;
use crate::error::{Error, Result};
use crate::numerics::graph::{BnStatUpdate, Graph, Var};
use crate::numerics::{BatchNormState, BnMode, GruParams, ParamId, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Loss values of one batch; disabled terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_FW")]
    pub fw: Option<f64>,
    #[serde(rename = "L_BW")]
    pub bw: Option<f64>,
    #[serde(rename = "L_B")]
    pub bin: Option<f64>,
    #[serde(rename = "R")]
    pub reg: Option<f64>,
    pub total: f64,
}

/// Per-step batch-norm outputs and decode logits of a language-model pass.
#[derive(Debug, Default)]
pub struct LmTrace {
    pub outputs: Vec<Var>,
    pub logits: Vec<Var>,
}

pub(crate) struct LossVars {
    pub fw: Option<Var>,
    pub bw: Option<Var>,
    pub bin: Option<Var>,
    pub reg: Option<Var>,
    pub total: Var,
}

fn sum_into<F: Real>(g: &mut Graph<'_, F>, acc: Option<Var>, x: Var) -> Var {
    match acc {
        None => x,
        Some(a) => g.add(a, x),
    }
}

impl<F: Real> GroundedModel<F> {
    pub(crate) fn project_images<'s>(&'s self, g: &mut Graph<'s, F>, feats: Var) -> Var {
        let (w1, b1) = (g.param(self.proj_w1), g.param(self.proj_b1));
        let (w2, b2) = (g.param(self.proj_w2), g.param(self.proj_b2));
        let a = g.matmul(feats, w1);
        let a = g.add_row(a, b1);
        let a = g.tanh(a);
        let h = g.matmul(a, w2);
        g.add_row(h, b2)
    }

    /// Every caption position grounded at once: row `r·L + t` is `T_e[token(r,t)]·M`.
    pub(crate) fn ground_batch<'s>(&'s self, g: &mut Graph<'s, F>, batch: &CaptionBatch) -> Var {
        let emb = g.param(self.emb);
        let m = g.param(self.mapping);
        let rows = g.gather(emb, &batch.token_ids);
        g.matmul(rows, m)
    }

    pub(crate) fn initial_state<'s>(&'s self, g: &mut Graph<'s, F>, batch: &CaptionBatch) -> Var {
        let feats = g.constant(batch.image_feats.cast());
        self.project_images(g, feats)
    }

    fn lm_parts(&self, dir: Direction) -> (&GruParams, &BatchNormState<F>) {
        match dir {
            Direction::Forward => (&self.gru_f, &self.bn_f),
            Direction::Backward => (&self.gru_b, &self.bn_b),
        }
    }

    /// Sum of next-word cross entropies and the number of predicted positions.
    ///
    /// Inputs are tokens 1..n−1 and targets tokens 2..n of each true
    /// (label 1) caption, read back to front for [`Direction::Backward`].
    /// Returns `None` when the batch has nothing to predict.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn lm_terms<'s>(
        &'s self,
        g: &mut Graph<'s, F>,
        batch: &CaptionBatch,
        grounded: Var,
        h0: Var,
        dir: Direction,
        mode: BnMode,
        mut trace: Option<&mut LmTrace>,
    ) -> Option<(Var, usize)> {
        let (gru, bn) = self.lm_parts(dir);
        let (b, l) = (batch.batch_size(), batch.max_len);
        let pos = |r: usize, t: usize| {
            let len = batch.lengths[r];
            match dir {
                Direction::Backward if t < len => r * l + (len - 1 - t),
                _ => r * l + t,
            }
        };
        let emb = g.param(self.emb);
        let m = g.param(self.mapping);
        let mut h = h0;
        let mut sum = None;
        let mut count = 0;
        for t in 0..l.saturating_sub(1) {
            let active: Vec<bool> = (0..b)
                .map(|r| batch.match_label[r] == 1 && t + 1 < batch.lengths[r])
                .collect();
            let n_active = active.iter().filter(|&&a| a).count();
            if n_active == 0 {
                break;
            }
            let idx: Vec<usize> = (0..b).map(|r| pos(r, t)).collect();
            let x = g.gather(grounded, &idx);
            h = gru.step(g, x, h);
            let o = g.batch_norm(h, &active, &bn.args(mode));
            let w_next = g.matmul_bt(o, m);
            let logits = g.matmul_bt(w_next, emb);
            let targets: Vec<usize> = (0..b)
                .map(|r| {
                    if active[r] {
                        batch.token_ids[pos(r, t + 1)]
                    } else {
                        0
                    }
                })
                .collect();
            let ce = g.softmax_ce_sum(logits, &targets, &active);
            sum = Some(sum_into(g, sum, ce));
            count += n_active;
            if let Some(tr) = trace.as_deref_mut() {
                tr.outputs.push(o);
                tr.logits.push(logits);
            }
        }
        sum.map(|s| (s, count))
    }

    /// Matcher logit per row (`B×1`): the GRU state at each caption's last
    /// real token, batch-normalized, through the linear head.
    pub(crate) fn matcher_logits<'s>(
        &'s self,
        g: &mut Graph<'s, F>,
        batch: &CaptionBatch,
        grounded: Var,
        h0: Var,
        mode: BnMode,
    ) -> Var {
        let (b, l) = (batch.batch_size(), batch.max_len);
        let mut h = h0;
        for t in 0..l {
            let real: Vec<bool> = (0..b).map(|r| batch.is_real(r, t)).collect();
            let idx: Vec<usize> = (0..b).map(|r| r * l + t).collect();
            let x = g.gather(grounded, &idx);
            let next = self.gru_m.step(g, x, h);
            h = g.select_rows(&real, next, h);
        }
        let all = vec![true; b];
        let o = g.batch_norm(h, &all, &self.bn_m.args(mode));
        let w = g.param(self.head_w);
        let bias = g.param(self.head_b);
        let z = g.matmul(o, w);
        g.add_row(z, bias)
    }

    /// `(α/|V|) Σ_w |β − cos(w_n, w_e)|` as a graph node.
    pub(crate) fn regularizer_var<'s>(
        &'s self,
        g: &mut Graph<'s, F>,
        alpha: f64,
        beta: f64,
    ) -> Var {
        let emb = g.param(self.emb);
        let dev = g.cosine_deviation_sum(emb, &self.emb_orig, F::of(beta));
        g.scale(dev, F::of(alpha / self.dims.vocab as f64))
    }

    pub(crate) fn build_losses<'s>(
        &'s self,
        g: &mut Graph<'s, F>,
        batch: &CaptionBatch,
        cfg: &TrainConfig,
        mode: BnMode,
    ) -> Result<LossVars> {
        self.check_batch(batch)?;
        let grounded = self.ground_batch(g, batch);
        let h0 = self.initial_state(g, batch);
        let lm = |g: &mut Graph<'s, F>, dir| {
            self.lm_terms(g, batch, grounded, h0, dir, mode, None)
                .map(|(s, n)| g.scale(s, F::one() / F::of(n as f64)))
        };
        let fw = if cfg.loss_mask.fw {
            lm(g, Direction::Forward)
        } else {
            None
        };
        let bw = if cfg.loss_mask.bw {
            lm(g, Direction::Backward)
        } else {
            None
        };
        let bin = if cfg.loss_mask.bin {
            let logits = self.matcher_logits(g, batch, grounded, h0, mode);
            let labels: Vec<F> = batch.match_label.iter().map(|&y| F::of(y as f64)).collect();
            let s = g.sigmoid_bce_sum(logits, &labels);
            Some(g.scale(s, F::one() / F::of(batch.batch_size() as f64)))
        } else {
            None
        };
        let reg = cfg
            .reg_enabled
            .then(|| self.regularizer_var(g, cfg.alpha, cfg.beta));

        let mut total = None;
        for v in [fw, bw, bin, reg].into_iter().flatten() {
            total = Some(sum_into(g, total, v));
        }
        let total = match total {
            Some(t) => t,
            None => g.constant(Tensor::scalar(F::zero())),
        };
        g.check_finite()?;
        Ok(LossVars {
            fw,
            bw,
            bin,
            reg,
            total,
        })
    }

    fn check_batch(&self, batch: &CaptionBatch) -> Result<()> {
        if batch.image_feats.cols() != self.dims.p {
            return Err(Error::Shape(format!(
                "batch image features have width {}, model expects {}",
                batch.image_feats.cols(),
                self.dims.p
            )));
        }
        if let Some(&t) = batch.token_ids.iter().find(|&&t| t >= self.dims.vocab) {
            return Err(Error::Data(format!(
                "token id {t} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    fn breakdown(&self, g: &Graph<'_, F>, vars: &LossVars, cfg: &TrainConfig) -> LossBreakdown {
        let val = |v: Option<Var>, on: bool| on.then(|| v.map_or(0.0, |v| g.scalar(v).to_f64()));
        LossBreakdown {
            fw: val(vars.fw, cfg.loss_mask.fw),
            bw: val(vars.bw, cfg.loss_mask.bw),
            bin: val(vars.bin, cfg.loss_mask.bin),
            reg: val(vars.reg, cfg.reg_enabled),
            total: g.scalar(vars.total).to_f64(),
        }
    }

    /// Masked mean next-word cross entropy of one direction.
    pub fn forward_lm_loss(&self, batch: &CaptionBatch, dir: Direction, mode: BnMode) -> Result<F> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let grounded = self.ground_batch(&mut g, batch);
        let h0 = self.initial_state(&mut g, batch);
        let (sum, n) = self
            .lm_terms(&mut g, batch, grounded, h0, dir, mode, None)
            .ok_or_else(|| Error::Data("batch has no next-word positions to predict".into()))?;
        g.check_finite()?;
        Ok(g.scalar(sum) / F::of(n as f64))
    }

    /// Language-model pass that also returns every step's batch-norm output
    /// and decode logits.
    pub fn lm_trace(
        &self,
        batch: &CaptionBatch,
        dir: Direction,
        mode: BnMode,
    ) -> Result<Vec<(Tensor<F>, Tensor<F>)>> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let grounded = self.ground_batch(&mut g, batch);
        let h0 = self.initial_state(&mut g, batch);
        let mut trace = LmTrace::default();
        self.lm_terms(&mut g, batch, grounded, h0, dir, mode, Some(&mut trace));
        g.check_finite()?;
        Ok(trace
            .outputs
            .iter()
            .zip(&trace.logits)
            .map(|(&o, &z)| (g.value(o).clone(), g.value(z).clone()))
            .collect())
    }

    /// Mean binary cross entropy of the matcher.
    pub fn matcher_loss(&self, batch: &CaptionBatch, mode: BnMode) -> Result<F> {
        let (logits, labels) = self.matcher_scores(batch, mode)?;
        crate::numerics::sigmoid_bce(&logits, &labels)
    }

    /// Matcher logits and the batch labels.
    pub fn matcher_scores(&self, batch: &CaptionBatch, mode: BnMode) -> Result<(Vec<F>, Vec<F>)> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let grounded = self.ground_batch(&mut g, batch);
        let h0 = self.initial_state(&mut g, batch);
        let z = self.matcher_logits(&mut g, batch, grounded, h0, mode);
        g.check_finite()?;
        let labels = batch.match_label.iter().map(|&y| F::of(y as f64)).collect();
        Ok((g.value(z).data().to_vec(), labels))
    }

    /// `R(α, β)` on the current embedding rows.
    pub fn regularizer(&self, alpha: f64, beta: f64) -> F {
        let mut g = Graph::new(&self.store);
        let r = self.regularizer_var(&mut g, alpha, beta);
        g.scalar(r)
    }

    /// Enabled terms and their unweighted sum.
    pub fn total_loss(
        &self,
        batch: &CaptionBatch,
        cfg: &TrainConfig,
        mode: BnMode,
    ) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.store);
        let vars = self.build_losses(&mut g, batch, cfg, mode)?;
        Ok(self.breakdown(&g, &vars, cfg))
    }

    /// Loss breakdown, parameter gradients of the total, and the batch-norm
    /// statistics a train-mode pass observed.
    #[allow(clippy::type_complexity)]
    pub fn loss_and_grads(
        &self,
        batch: &CaptionBatch,
        cfg: &TrainConfig,
        mode: BnMode,
    ) -> Result<(
        LossBreakdown,
        Vec<(ParamId, Tensor<F>)>,
        Vec<BnStatUpdate<F>>,
    )> {
        let mut g = Graph::new(&self.store);
        let vars = self.build_losses(&mut g, batch, cfg, mode)?;
        let bd = self.breakdown(&g, &vars, cfg);
        let grads = g.backward(vars.total)?;
        Ok((bd, grads, g.take_bn_updates()))
    }
}
