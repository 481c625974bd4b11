//! Case-aware subword tokenization with a base+shape vocabulary, plus a small
//! masked-language-model core that consumes (base id, shape id) token pairs.
//!
//! The pipeline:
//!
//! 1. [`normalize`] splits text into word/neutral units, classifies the case
//!    shape of each word (lowercase, uppercase, titlecase) and splits
//!    mixed-case words at case boundaries.
//! 2. [`trainer`] learns a unigram subword vocabulary over the case-folded
//!    corpus with EM and likelihood-based pruning.
//! 3. [`vocab`] expands the base vocabulary into surface entries, one per
//!    observed (base piece, shape) variant.
//! 4. [`encoder`] segments text into `(base_id, shape)` tokens via Viterbi
//!    decoding and decodes them back.
//! 5. [`model`] is a small transformer MLM whose input embeddings are the sum
//!    of base, case and positional embeddings, trained with a weighted
//!    base-prediction + case-prediction loss.
//! 6. [`harness`] audits case invariance and compares fragmentation against a
//!    conventional cased tokenizer.

pub mod encoder;
pub mod harness;
pub mod lattice;
pub mod model;
pub mod normalize;
pub mod trainer;
pub mod vocab;

pub use encoder::{decode, encode, Encoding, Token};
pub use normalize::Shape;
pub use trainer::{BaseVocab, CorpusTable, TrainerConfig};
pub use vocab::UniCaseVocab;
