//! Zero-shot grounding of a full embedding vocabulary through a trained
//! mapping matrix, and export in the plain-text embedding format.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::GroundedModel;
use crate::numerics::Tensor;

/// Grounded vectors share the embedding-table layout.
pub type GroundedEmbeddings = EmbeddingTable;

/// Which rows training-vocabulary words are grounded from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RowSource {
    /// The source table for every word, in or out of the training vocabulary.
    #[default]
    Original,
    /// The fine-tuned `T_e` rows for training words, the source table for the rest.
    FineTuned,
}

/// Map every row of `source` through `mapping` (d×c), accumulating in f64.
pub fn ground_with_mapping(
    source: &EmbeddingTable,
    mapping: &Tensor<f32>,
) -> Result<GroundedEmbeddings> {
    let d = source.dim();
    if mapping.rows() != d {
        return Err(Error::Shape(format!(
            "embeddings have width {d} but the mapping matrix expects {}",
            mapping.rows()
        )));
    }
    let c = mapping.cols();
    let m = mapping.data();
    let mut out = Vec::with_capacity(source.len() * c);
    let mut acc = vec![0f64; c];
    for i in 0..source.len() {
        acc.fill(0.0);
        for (k, &x) in source.row(i).iter().enumerate() {
            let x = x as f64;
            for (a, &w) in acc.iter_mut().zip(&m[k * c..(k + 1) * c]) {
                *a += x * w as f64;
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    EmbeddingTable::new(source.vocab().clone(), out, c)
}

/// Ground the whole of `source` with the model's mapping matrix.
pub fn ground_vocabulary(
    source: &EmbeddingTable,
    model: &GroundedModel<f32>,
    rows: RowSource,
) -> Result<GroundedEmbeddings> {
    match rows {
        RowSource::Original => ground_with_mapping(source, model.mapping_matrix()),
        RowSource::FineTuned => {
            if source.dim() != model.dims.d {
                return Err(Error::Shape(format!(
                    "embeddings have width {} but the model expects {}",
                    source.dim(),
                    model.dims.d
                )));
            }
            let tuned = model.embeddings();
            let swapped = source
                .iter()
                .map(|(w, v)| match model.vocab.index(w) {
                    Some(i) => (w.to_string(), tuned.row(i).to_vec()),
                    None => (w.to_string(), v.to_vec()),
                })
                .collect::<Vec<_>>();
            ground_with_mapping(
                &EmbeddingTable::from_pairs(swapped)?,
                model.mapping_matrix(),
            )
        }
    }
}

/// Round to six significant digits and print without trailing noise.
fn fmt_g6(x: f32) -> String {
    let rounded: f64 = format!("{:.5e}", x as f64).parse().unwrap_or(0.0);
    let s = format!("{rounded}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Write `"<N> <c>"` then one `word v1 … vc` line per row.
pub fn export_embeddings(ge: &GroundedEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ge.is_empty() {
        return Err(Error::Data("refusing to export an empty vocabulary".into()));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", ge.len(), ge.dim()).map_err(io)?;
    for (word, row) in ge.iter() {
        w.write_all(word.as_bytes()).map_err(io)?;
        for &x in row {
            write!(w, " {}", fmt_g6(x)).map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
