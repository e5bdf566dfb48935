//! Corpus ingestion, vocabularies, pretrained vectors and the synthetic task.

mod corpus;
mod embeddings;
mod synthetic;

pub use corpus::{
    read_corpus, split, write_corpus, Corpus, Instance, RawInstance, Record, Vocab, PAD, PAD_ID,
    UNK, UNK_ID,
};
pub use embeddings::{load_embeddings, random_embeddings, INIT_RANGE};
pub use synthetic::{cue_token, generate_synthetic, label_name, SyntheticSpec};
