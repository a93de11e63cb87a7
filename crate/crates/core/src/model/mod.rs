//! The three-task grounding model.
//!
//! Shared pieces: the embedding table `T_e` (|V|×d), the mapping matrix `M`
//! (d×c) and an image projector that turns an image vector into the initial
//! GRU state. Task heads: a forward and a backward GRU language model that
//! decode through `Mᵀ` and `T_eᵀ`, and a GRU matcher that scores whether a
//! caption belongs to an image.

mod checkpoint;
mod config;
mod forward;
mod probe;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{LossMask, TrainConfig};
pub use forward::{Direction, LmTrace, LossBreakdown};
pub use probe::{probe_gradients, GradientProbe};
pub use train::{
    epoch_seed, matcher_accuracy, train, train_step, validation_loss, EpochLog, TrainData,
    TrainOutcome,
};

use crate::corpus::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::numerics::graph::BnStatUpdate;
use crate::numerics::{BatchNormState, GruParams, ParamId, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    /// Training vocabulary size |V|.
    pub vocab: usize,
    /// Textual embedding width.
    pub d: usize,
    /// Grounded width (also the GRU state width).
    pub c: usize,
    /// Image feature width.
    pub p: usize,
    /// Projector hidden width.
    pub q: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundedModel<F: Real> {
    pub store: ParamStore<F>,
    pub dims: ModelDims,
    pub vocab: Vocab,
    /// `T_e`, trainable unless frozen.
    pub emb: ParamId,
    /// `M`.
    pub mapping: ParamId,
    /// The pre-trained rows `T_e` started from.
    pub emb_orig: Tensor<F>,
    pub proj_w1: ParamId,
    pub proj_b1: ParamId,
    pub proj_w2: ParamId,
    pub proj_b2: ParamId,
    pub gru_f: GruParams,
    pub gru_b: GruParams,
    pub gru_m: GruParams,
    pub bn_f: BatchNormState<F>,
    pub bn_b: BatchNormState<F>,
    pub bn_m: BatchNormState<F>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl<F: Real> GroundedModel<F> {
    /// Fresh model over `embeddings` (the training vocabulary with its
    /// pre-trained rows). Weight matrices are Glorot-uniform, biases zero.
    pub fn new(
        embeddings: &EmbeddingTable,
        c: usize,
        p: usize,
        q: usize,
        seed: u64,
    ) -> Result<Self> {
        let (v, d) = (embeddings.len(), embeddings.dim());
        if v == 0 || d == 0 || c == 0 || p == 0 || q == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be positive (|V|={v}, d={d}, c={c}, p={p}, q={q})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb_t = Tensor::from_vec(
            &[v, d],
            embeddings
                .vectors()
                .iter()
                .map(|&x| F::of(x as f64))
                .collect(),
        )?;
        let emb = store.add("T_e", emb_t.clone());
        let mapping = store.add_glorot("M", d, c, &mut rng);
        let proj_w1 = store.add_glorot("proj.W1", p, q, &mut rng);
        let proj_b1 = store.add("proj.b1", Tensor::zeros(&[1, q]));
        let proj_w2 = store.add_glorot("proj.W2", q, c, &mut rng);
        let proj_b2 = store.add("proj.b2", Tensor::zeros(&[1, c]));
        let gru_f = GruParams::register(&mut store, "gru_f", c, c, &mut rng);
        let gru_b = GruParams::register(&mut store, "gru_b", c, c, &mut rng);
        let gru_m = GruParams::register(&mut store, "gru_m", c, c, &mut rng);
        let bn_f = BatchNormState::register(&mut store, "bn_f", c);
        let bn_b = BatchNormState::register(&mut store, "bn_b", c);
        let bn_m = BatchNormState::register(&mut store, "bn_m", c);
        let head_w = store.add_glorot("head.w", c, 1, &mut rng);
        let head_b = store.add("head.b", Tensor::zeros(&[1, 1]));
        Ok(GroundedModel {
            store,
            dims: ModelDims {
                vocab: v,
                d,
                c,
                p,
                q,
            },
            vocab: embeddings.vocab().clone(),
            emb,
            mapping,
            emb_orig: emb_t,
            proj_w1,
            proj_b1,
            proj_w2,
            proj_b2,
            gru_f,
            gru_b,
            gru_m,
            bn_f,
            bn_b,
            bn_m,
            head_w,
            head_b,
        })
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> GroundedModel<G> {
        GroundedModel {
            store: self.store.cast(),
            dims: self.dims,
            vocab: self.vocab.clone(),
            emb: self.emb,
            mapping: self.mapping,
            emb_orig: self.emb_orig.cast(),
            proj_w1: self.proj_w1,
            proj_b1: self.proj_b1,
            proj_w2: self.proj_w2,
            proj_b2: self.proj_b2,
            gru_f: self.gru_f.clone(),
            gru_b: self.gru_b.clone(),
            gru_m: self.gru_m.clone(),
            bn_f: self.bn_f.cast(),
            bn_b: self.bn_b.cast(),
            bn_m: self.bn_m.cast(),
            head_w: self.head_w,
            head_b: self.head_b,
        }
    }

    pub fn embeddings(&self) -> &Tensor<F> {
        self.store.value(self.emb)
    }

    pub fn mapping_matrix(&self) -> &Tensor<F> {
        self.store.value(self.mapping)
    }

    pub fn set_embeddings_frozen(&mut self, frozen: bool) {
        self.store.set_frozen(self.emb, frozen);
    }

    pub(crate) fn batch_norms_mut(&mut self) -> [&mut BatchNormState<F>; 3] {
        [&mut self.bn_f, &mut self.bn_b, &mut self.bn_m]
    }

    pub(crate) fn apply_bn_updates(&mut self, updates: &[BnStatUpdate<F>]) {
        for u in updates {
            for bn in self.batch_norms_mut() {
                if bn.gamma == u.key {
                    bn.apply_update(u);
                }
            }
        }
    }

    /// `x_i = T_e[id_i] · M` for each id.
    pub fn ground_words(&self, ids: &[usize]) -> Result<Vec<Vec<F>>> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.dims.vocab) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        let emb = self.embeddings();
        let m = self.mapping_matrix();
        Ok(ids
            .iter()
            .map(|&i| {
                let row = Tensor::row_vector(emb.row(i).to_vec());
                crate::numerics::matmul(&row, m).into_data()
            })
            .collect())
    }

    /// `h_0 = tanh(feature·W1 + b1)·W2 + b2`.
    pub fn project_image(&self, feature: &[F]) -> Result<Vec<F>> {
        if feature.len() != self.dims.p {
            return Err(Error::Shape(format!(
                "image vector of length {} for a projector expecting {}",
                feature.len(),
                self.dims.p
            )));
        }
        let mut g = crate::numerics::Graph::new(&self.store);
        let x = g.constant(Tensor::row_vector(feature.to_vec()));
        let h = self.project_images(&mut g, x);
        g.check_finite()?;
        Ok(g.value(h).data().to_vec())
    }

    /// Tied decode from raw parameter storage: `(o·Mᵀ)·T_eᵀ`.
    pub fn decode_logits_raw(&self, o: &Tensor<F>) -> Tensor<F> {
        let w_next = crate::numerics::matmul_bt(o, self.mapping_matrix());
        crate::numerics::matmul_bt(&w_next, self.embeddings())
    }
}

#[cfg(test)]
mod tests;
