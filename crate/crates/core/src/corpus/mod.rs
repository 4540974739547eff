//! Dataset schema, character vocabulary, encodings, validation and splits.

pub mod behavior;
mod encode;
mod io;
mod record;
mod split;
pub mod synthetic;
mod validate;
mod vocab;

pub use behavior::{BehaviorNorm, BEHAVIOR_DIM};
pub use encode::{
    decode, decode_ids, encode_condition, encode_text, encode_with_context, ConditionalFeature,
    TokenSequence, COND_DIM,
};
pub use io::{parse_dataset, read_dataset, write_dataset, write_records};
pub use record::{
    BehaviorSource, CommentRecord, Hierarchy, Label, Provenance, Topic, UserBehavior,
};
pub use split::{split_dataset, Split};
pub use validate::{check_record, validate_record, FileKind, SIMPLEX_TOL};
pub use vocab::{build_vocab, Vocab, EOS, NUM_RESERVED, PAD, SOS, UNK};

/// Default maximum encoded length, in tokens.
pub const DEFAULT_T_MAX: usize = 64;
