use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroundedModel, ModelDims, TrainConfig};
use crate::corpus::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{read_tensor_file, write_tensor_file};
use crate::numerics::Tensor;

const FORMAT_VERSION: u32 = 1;
const ORIG_EMB: &str = "T_e@orig";

/// Non-tensor state stored in the checkpoint manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub dims: ModelDims,
    pub vocab: Vec<String>,
    pub step: u64,
    /// Bit pattern of the NAdam momentum product, kept exact.
    pub mu_product_bits: u64,
    pub frozen: Vec<String>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub config: Option<TrainConfig>,
}

/// Write parameters, optimizer moments, batch-norm buffers and the original
/// embedding rows. Reloading gives a bitwise identical model.
pub fn save_checkpoint(
    model: &GroundedModel<f32>,
    config: Option<&TrainConfig>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let store = &model.store;
    let meta = CheckpointMeta {
        version: FORMAT_VERSION,
        dims: model.dims,
        vocab: model.vocab.words().to_vec(),
        step: store.step,
        mu_product_bits: store.mu_product.to_bits(),
        frozen: store
            .iter()
            .filter(|(_, p)| p.frozen)
            .map(|(_, p)| p.name.clone())
            .collect(),
        bn_momentum: model.bn_f.momentum,
        bn_eps: model.bn_f.eps,
        config: config.cloned(),
    };
    let mut tensors = Vec::new();
    for (_, p) in store.iter() {
        tensors.push((p.name.clone(), p.value.clone()));
        tensors.push((format!("{}@nadam_m", p.name), p.nadam_m.clone()));
        tensors.push((format!("{}@nadam_v", p.name), p.nadam_v.clone()));
    }
    for (name, bn) in [
        ("bn_f", &model.bn_f),
        ("bn_b", &model.bn_b),
        ("bn_m", &model.bn_m),
    ] {
        tensors.push((
            format!("{name}@running_mean"),
            Tensor::row_vector(bn.running_mean.clone()),
        ));
        tensors.push((
            format!("{name}@running_var"),
            Tensor::row_vector(bn.running_var.clone()),
        ));
    }
    tensors.push((ORIG_EMB.to_string(), model.emb_orig.clone()));
    let meta = serde_json::to_value(&meta)
        .map_err(|e| Error::Data(format!("cannot encode checkpoint metadata: {e}")))?;
    write_tensor_file(path.as_ref(), meta, &tensors)
}

/// Load a checkpoint written by [`save_checkpoint`], with the training
/// configuration if one was stored.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(GroundedModel<f32>, Option<TrainConfig>)> {
    let path = path.as_ref();
    let (meta, tensors) = read_tensor_file(path)?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| bad(format!("checkpoint metadata: {e}")))?;
    if meta.version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    let mut by_name: HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let t = by_name
            .remove(name)
            .ok_or_else(|| bad(format!("missing tensor {name:?}")))?;
        if t.shape() != shape {
            return Err(bad(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };

    let dims = meta.dims;
    let orig = take(ORIG_EMB, &[dims.vocab, dims.d])?;
    let table = EmbeddingTable::new(
        Vocab::new(meta.vocab.clone())?,
        orig.data().to_vec(),
        dims.d,
    )?;
    let mut model = GroundedModel::<f32>::new(&table, dims.c, dims.p, dims.q, 0)?;

    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        let shape = model.store.value(id).shape().to_vec();
        let value = take(&name, &shape)?;
        let m = take(&format!("{name}@nadam_m"), &shape)?;
        let v = take(&format!("{name}@nadam_v"), &shape)?;
        let p = model.store.param_mut(id);
        p.value = value;
        p.nadam_m = m;
        p.nadam_v = v;
        p.frozen = meta.frozen.contains(&name);
    }
    model.store.step = meta.step;
    model.store.mu_product = f64::from_bits(meta.mu_product_bits);
    let c = dims.c;
    for (name, bn) in [
        ("bn_f", &mut model.bn_f),
        ("bn_b", &mut model.bn_b),
        ("bn_m", &mut model.bn_m),
    ] {
        bn.running_mean = take(&format!("{name}@running_mean"), &[1, c])?.into_data();
        bn.running_var = take(&format!("{name}@running_var"), &[1, c])?.into_data();
        bn.momentum = meta.bn_momentum;
        bn.eps = meta.bn_eps;
    }
    if let Some(extra) = by_name.keys().next() {
        log::warn!("ignoring unknown tensor {extra:?} in {}", path.display());
    }
    Ok((model, meta.config))
}
