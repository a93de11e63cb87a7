use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::captions::CaptionRecord;
use super::features::ImageFeatureStore;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One padded training batch.
///
/// Row `i` pairs the caption `token_ids[i]` with the image `image_ids[i]`;
/// for mined negatives the caption was taken from `caption_image_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionBatch {
    /// Row-major `B×max_len`, padded with id 0.
    pub token_ids: Vec<usize>,
    /// Row-major `B×max_len`; each row is a run of `true` then `false`.
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    /// `B×p`.
    pub image_feats: Tensor<f32>,
    /// 1 for a true caption–image pair, 0 for a mined negative.
    pub match_label: Vec<u8>,
    pub image_ids: Vec<String>,
    pub caption_image_ids: Vec<String>,
}

impl CaptionBatch {
    /// Assemble a batch from `(caption tokens, caption's image id, image id, label)` rows.
    pub fn from_rows(
        rows: &[(&[usize], &str, &str, u8)],
        store: &ImageFeatureStore,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let max_len = rows.iter().map(|r| r.0.len()).max().unwrap();
        let b = rows.len();
        let mut token_ids = vec![0; b * max_len];
        let mut mask = vec![false; b * max_len];
        let mut feats = Vec::with_capacity(b * store.dim());
        for (i, (toks, _, img, _)) in rows.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::Data("empty caption in batch".into()));
            }
            token_ids[i * max_len..i * max_len + toks.len()].copy_from_slice(toks);
            mask[i * max_len..i * max_len + toks.len()].fill(true);
            let f = store
                .get(img)
                .ok_or_else(|| Error::Data(format!("no image features for {img:?}")))?;
            feats.extend_from_slice(f);
        }
        Ok(CaptionBatch {
            token_ids,
            mask,
            lengths: rows.iter().map(|r| r.0.len()).collect(),
            max_len,
            image_feats: Tensor::from_vec(&[b, store.dim()], feats)?,
            match_label: rows.iter().map(|r| r.3).collect(),
            image_ids: rows.iter().map(|r| r.2.to_string()).collect(),
            caption_image_ids: rows.iter().map(|r| r.1.to_string()).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn token(&self, row: usize, t: usize) -> usize {
        self.token_ids[row * self.max_len + t]
    }

    pub fn is_real(&self, row: usize, t: usize) -> bool {
        t < self.max_len && self.mask[row * self.max_len + t]
    }

    /// Token ids at step `t` for every row (padding reads as 0).
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch_size()).map(|r| self.token(r, t)).collect()
    }

    /// Each caption reversed within its own length; padding stays trailing.
    pub fn reversed(&self) -> CaptionBatch {
        let mut out = self.clone();
        for (r, &len) in self.lengths.iter().enumerate() {
            let row = &mut out.token_ids[r * self.max_len..r * self.max_len + len];
            row.reverse();
        }
        out
    }

    /// The same batch with `extra` all-padding steps appended.
    pub fn with_extra_padding(&self, extra: usize) -> CaptionBatch {
        let new_len = self.max_len + extra;
        let b = self.batch_size();
        let mut token_ids = vec![0; b * new_len];
        let mut mask = vec![false; b * new_len];
        for r in 0..b {
            token_ids[r * new_len..r * new_len + self.max_len]
                .copy_from_slice(&self.token_ids[r * self.max_len..(r + 1) * self.max_len]);
            mask[r * new_len..r * new_len + self.max_len]
                .copy_from_slice(&self.mask[r * self.max_len..(r + 1) * self.max_len]);
        }
        CaptionBatch {
            token_ids,
            mask,
            max_len: new_len,
            ..self.clone()
        }
    }

    pub fn num_negatives(&self) -> usize {
        self.match_label.iter().filter(|&&l| l == 0).count()
    }
}

/// Shuffle `records` with a generator seeded by `seed`, cut them into
/// batches of `batch_size` (the last one may be shorter) and, when
/// `negative_mining` is set, replace the captions of the last ⌊n/2⌋ rows of
/// every batch with captions of randomly drawn records from other images.
pub fn make_batches(
    records: &[CaptionRecord],
    store: &ImageFeatureStore,
    vocab_size: usize,
    batch_size: usize,
    negative_mining: bool,
    seed: u64,
) -> Result<Vec<CaptionBatch>> {
    if records.is_empty() {
        return Err(Error::Data("no caption records to batch".into()));
    }
    if batch_size == 0 || (negative_mining && batch_size < 2) {
        return Err(Error::Config(format!(
            "batch size {batch_size} is too small{}",
            if negative_mining {
                " for negative mining"
            } else {
                ""
            }
        )));
    }
    if let Some(r) = records
        .iter()
        .find(|r| r.tokens.iter().any(|&t| t >= vocab_size))
    {
        return Err(Error::Data(format!(
            "caption of image {:?} has a token id outside the vocabulary of {vocab_size}",
            r.image_id
        )));
    }
    if negative_mining && records.iter().all(|r| r.image_id == records[0].image_id) {
        return Err(Error::Data(
            "negative mining needs captions of at least two different images".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);

    let mut batches = Vec::with_capacity(records.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let n = chunk.len();
        let n_neg = if negative_mining { n / 2 } else { 0 };
        let mut rows: Vec<(&[usize], &str, &str, u8)> = Vec::with_capacity(n);
        for (pos, &ri) in chunk.iter().enumerate() {
            let rec = &records[ri];
            if pos < n - n_neg {
                rows.push((&rec.tokens, &rec.image_id, &rec.image_id, 1));
            } else {
                let donor = loop {
                    let j = rng.gen_range(0..records.len());
                    if records[j].image_id != rec.image_id {
                        break &records[j];
                    }
                };
                rows.push((&donor.tokens, &donor.image_id, &rec.image_id, 0));
            }
        }
        batches.push(CaptionBatch::from_rows(&rows, store)?);
    }
    Ok(batches)
}
