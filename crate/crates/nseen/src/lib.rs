//! Normalize noisy entity-name mentions to canonical IDs in a reference set.
//!
//! The pipeline has three stages:
//!
//! 1. **Similarity learning** ([`training`]): a character-level Siamese
//!    encoder ([`encoder`]) is trained with a soft-label contrastive loss on
//!    pairs built from the reference set ([`pairs`]) — same-entity positives,
//!    random negatives, string-similarity-labeled syntactic variants
//!    ([`strsim`]) and iteratively mined hard negatives.
//! 2. **Embedding and indexing** ([`retrieval::embed_reference`]): every
//!    reference name is embedded and stored in a random-projection tree
//!    forest ([`ann`]) for sublinear nearest-neighbor search.
//! 3. **Retrieval** ([`retrieval`]): a query mention is embedded with the
//!    same encoder and its nearest reference names vote for entity IDs,
//!    evaluated with Hits@k.

pub mod ann;
pub mod encoder;
pub mod pairs;
pub mod refset;
pub mod retrieval;
pub mod strsim;
pub mod training;

mod bytesio;
mod error;

pub use error::{Error, Result};
