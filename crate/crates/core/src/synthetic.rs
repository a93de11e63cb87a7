//! Seeded toy corpora with planted structure, for tests and smoke runs.
//!
//! The planted corpus has images drawn around a few cluster centres and
//! template captions whose content words belong to the image's cluster, so
//! both the language models and the matcher have something to learn.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CaptionBatch, CaptionRecord, EmbeddingTable, ImageFeatureStore, Vocab};
use crate::error::{Error, Result};

const SHARED: [&str; 20] = [
    "a", "the", "is", "on", "in", "near", "two", "some", "with", "and", "of", "very", "at", "by",
    "one", "this", "there", "here", "its", "are",
];

const CONTENT: [[&str; 10]; 4] = [
    [
        "dog", "puppy", "cat", "brown", "fluffy", "small", "runs", "sleeps", "grass", "sofa",
    ],
    [
        "car", "truck", "bus", "red", "shiny", "old", "drives", "parks", "road", "garage",
    ],
    [
        "pizza", "cake", "salad", "tasty", "fresh", "warm", "sits", "waits", "plate", "table",
    ],
    [
        "boat", "ship", "kayak", "white", "wooden", "large", "floats", "sails", "lake", "harbor",
    ],
];

#[derive(Clone, Debug)]
pub struct PlantedConfig {
    pub images: usize,
    pub clusters: usize,
    pub captions_per_image: usize,
    /// Image feature width p.
    pub feature_dim: usize,
    /// Word vector width d.
    pub embed_dim: usize,
    /// Spread of image features around their cluster centre.
    pub noise: f32,
    pub val_images: usize,
    pub test_images: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            images: 100,
            clusters: 4,
            captions_per_image: 5,
            feature_dim: 16,
            embed_dim: 16,
            noise: 0.5,
            val_images: 10,
            test_images: 10,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    /// Pre-trained vectors of the whole vocabulary.
    pub embeddings: EmbeddingTable,
    pub features: ImageFeatureStore,
    pub train: Vec<CaptionRecord>,
    pub val: Vec<CaptionRecord>,
    pub test: Vec<CaptionRecord>,
    pub image_cluster: BTreeMap<String, usize>,
    /// Caption text per record, aligned with `train`, `val` and `test` in turn.
    pub texts: Vec<(String, String)>,
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn caption(rng: &mut ChaCha8Rng, words: &[&str; 10]) -> String {
    let noun = words[rng.gen_range(0..3)];
    let adj = words[rng.gen_range(3..6)];
    let verb = words[rng.gen_range(6..8)];
    let place = words[rng.gen_range(8..10)];
    match rng.gen_range(0..4) {
        0 => format!("a {adj} {noun} {verb} on the {place}"),
        1 => format!("the {noun} is very {adj}"),
        2 => format!("two {adj} {noun} {verb} near a {place}"),
        _ => format!("there {verb} one {noun} in the {place}"),
    }
}

/// Planted-structure corpus; the same config always gives the same corpus.
pub fn planted_corpus(cfg: &PlantedConfig) -> Result<SyntheticCorpus> {
    if cfg.clusters == 0 || cfg.clusters > CONTENT.len() {
        return Err(Error::Config(format!(
            "clusters must be in 1..={}",
            CONTENT.len()
        )));
    }
    if cfg.val_images + cfg.test_images >= cfg.images {
        return Err(Error::Config("no images left for training".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut words: Vec<&str> = SHARED.to_vec();
    for c in &CONTENT[..cfg.clusters] {
        words.extend_from_slice(c);
    }
    let embeddings = EmbeddingTable::from_pairs(
        words
            .iter()
            .map(|w| (w.to_string(), uniform_vec(&mut rng, cfg.embed_dim, 1.0)))
            .collect::<Vec<_>>(),
    )?;

    let centres: Vec<Vec<f32>> = (0..cfg.clusters)
        .map(|_| uniform_vec(&mut rng, cfg.feature_dim, 1.0))
        .collect();
    let mut features = ImageFeatureStore::new(cfg.feature_dim);
    let mut image_cluster = BTreeMap::new();
    let mut per_image = Vec::new();
    for i in 0..cfg.images {
        let k = i % cfg.clusters;
        let id = format!("img{i:03}");
        let v: Vec<f32> = centres[k]
            .iter()
            .map(|&c| c + rng.gen_range(-cfg.noise..cfg.noise))
            .collect();
        features.insert(id.clone(), v)?;
        image_cluster.insert(id.clone(), k);
        let caps: Vec<String> = (0..cfg.captions_per_image)
            .map(|_| caption(&mut rng, &CONTENT[k]))
            .collect();
        per_image.push((id, caps));
    }
    per_image.shuffle(&mut rng);

    let vocab = embeddings.vocab();
    let encode = |text: &str| -> CaptionRecord {
        let tokens: Vec<usize> = text
            .split_whitespace()
            .map(|w| vocab.index(w).expect("template words are in vocabulary"))
            .collect();
        CaptionRecord {
            image_id: String::new(),
            raw_length: tokens.len(),
            tokens,
        }
    };
    let n_test = cfg.test_images;
    let n_val = cfg.val_images;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut texts = Vec::new();
    for (i, (id, caps)) in per_image.iter().enumerate() {
        let bucket = if i < n_test {
            &mut test
        } else if i < n_test + n_val {
            &mut val
        } else {
            &mut train
        };
        for c in caps {
            let mut r = encode(c);
            r.image_id = id.clone();
            bucket.push(r);
        }
    }
    for split in [&train, &val, &test] {
        for r in split {
            let text: Vec<&str> = r.tokens.iter().map(|&t| vocab.word(t)).collect();
            texts.push((r.image_id.clone(), text.join(" ")));
        }
    }
    Ok(SyntheticCorpus {
        embeddings,
        features,
        train,
        val,
        test,
        image_cluster,
        texts,
    })
}

impl SyntheticCorpus {
    pub fn vocab(&self) -> &Vocab {
        self.embeddings.vocab()
    }

    /// Held-out matching set: every record once with its own image (label 1)
    /// and once with an image from a different cluster (label 0).
    pub fn matching_batches(
        &self,
        records: &[CaptionRecord],
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<CaptionBatch>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let by_cluster: Vec<Vec<&String>> =
            (0..=self.image_cluster.values().copied().max().unwrap_or(0))
                .map(|k| {
                    self.image_cluster
                        .iter()
                        .filter(|(_, &c)| c == k)
                        .map(|(id, _)| id)
                        .collect()
                })
                .collect();
        if by_cluster.len() < 2 {
            return Err(Error::Data(
                "need at least two clusters for cross-cluster negatives".into(),
            ));
        }
        let mut rows: Vec<(&[usize], &str, &str, u8)> = Vec::new();
        for r in records {
            let own = self.image_cluster[&r.image_id];
            rows.push((&r.tokens, &r.image_id, &r.image_id, 1));
            let other = loop {
                let k = rng.gen_range(0..by_cluster.len());
                if k != own && !by_cluster[k].is_empty() {
                    break k;
                }
            };
            let img = by_cluster[other][rng.gen_range(0..by_cluster[other].len())];
            rows.push((&r.tokens, &r.image_id, img, 0));
        }
        rows.chunks(batch_size.max(1))
            .map(|chunk| CaptionBatch::from_rows(chunk, &self.features))
            .collect()
    }

    /// Write `embeddings.txt`, `features.txt`, `train.jsonl`, `val.jsonl` and
    /// `test.jsonl` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e| Error::io(&p, e)
        };
        let p = dir.join("embeddings.txt");
        let mut s = format!("{} {}\n", self.embeddings.len(), self.embeddings.dim());
        for (w, v) in self.embeddings.iter() {
            s.push_str(w);
            for x in v {
                s.push_str(&format!(" {x}"));
            }
            s.push('\n');
        }
        fs::write(&p, s).map_err(io(&p))?;

        let p = dir.join("features.txt");
        let mut s = String::new();
        for id in self.image_cluster.keys() {
            s.push_str(id);
            for x in self.features.get(id).unwrap() {
                s.push_str(&format!(" {x}"));
            }
            s.push('\n');
        }
        fs::write(&p, s).map_err(io(&p))?;

        let mut texts = self.texts.iter();
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            let p = dir.join(format!("{name}.jsonl"));
            let mut f = fs::File::create(&p).map_err(io(&p))?;
            for _ in split {
                let (id, text) = texts.next().unwrap();
                let line = serde_json::json!({ "image_id": id, "caption": text });
                writeln!(f, "{line}").map_err(io(&p))?;
            }
        }
        Ok(())
    }
}

/// Small random corpus without structure: `n_captions` captions of length
/// 2..=`max_len` over `vocab` words, one image per caption.
pub fn random_corpus(
    vocab: usize,
    embed_dim: usize,
    feature_dim: usize,
    n_captions: usize,
    max_len: usize,
    seed: u64,
) -> Result<(EmbeddingTable, ImageFeatureStore, Vec<CaptionRecord>)> {
    if max_len < 2 {
        return Err(Error::Config("captions need at least two tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = EmbeddingTable::from_pairs(
        (0..vocab)
            .map(|i| (format!("w{i}"), uniform_vec(&mut rng, embed_dim, 1.0)))
            .collect::<Vec<_>>(),
    )?;
    let mut feats = ImageFeatureStore::new(feature_dim);
    let mut records = Vec::new();
    for i in 0..n_captions {
        let id = format!("img{i}");
        feats.insert(id.clone(), uniform_vec(&mut rng, feature_dim, 1.0))?;
        let len = rng.gen_range(2..=max_len);
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        records.push(CaptionRecord {
            image_id: id,
            raw_length: len,
            tokens,
        });
    }
    Ok((emb, feats, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shape() {
        let c = planted_corpus(&PlantedConfig::default()).unwrap();
        assert_eq!(c.embeddings.len(), 60);
        assert_eq!(c.features.len(), 100);
        assert_eq!((c.train.len(), c.val.len(), c.test.len()), (400, 50, 50));
        assert_eq!(c.texts.len(), 500);
        let test_imgs: std::collections::BTreeSet<_> = c.test.iter().map(|r| &r.image_id).collect();
        assert!(c.train.iter().all(|r| !test_imgs.contains(&r.image_id)));
    }

    #[test]
    fn planted_is_deterministic() {
        let a = planted_corpus(&PlantedConfig::default()).unwrap();
        let b = planted_corpus(&PlantedConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.texts, b.texts);
    }

    #[test]
    fn held_out_negatives_cross_clusters() {
        let c = planted_corpus(&PlantedConfig::default()).unwrap();
        let batches = c.matching_batches(&c.test, 16, 1).unwrap();
        let mut n = 0;
        for b in &batches {
            for r in 0..b.batch_size() {
                let own = c.image_cluster[&b.caption_image_ids[r]];
                let shown = c.image_cluster[&b.image_ids[r]];
                assert_eq!(b.match_label[r] == 1, own == shown);
                n += 1;
            }
        }
        assert_eq!(n, 100);
    }

    #[test]
    fn random_corpus_bounds() {
        let (emb, feats, recs) = random_corpus(12, 5, 6, 9, 4, 3).unwrap();
        assert_eq!((emb.len(), emb.dim(), feats.dim()), (12, 5, 6));
        assert!(recs.iter().all(|r| (2..=4).contains(&r.tokens.len())));
    }
}
