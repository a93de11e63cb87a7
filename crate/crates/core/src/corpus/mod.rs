//! Input side: tokenizer, vocabulary, file loaders and batch construction.

mod batches;
mod captions;
mod datasets;
mod embeddings;
mod features;
mod tokenize;
mod vocab;

pub use batches::{make_batches, CaptionBatch};
pub use captions::{read_captions, resolve_captions, CaptionRecord, RawCaption};
pub use datasets::{
    load_similarity_dataset, load_sts_dataset, PairMeta, Pos, SimilarityPair, StsPair,
};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use features::{load_image_features, ImageFeatureStore};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, build_vocab_with, Vocab};
