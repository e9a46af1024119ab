//! WordPiece tokenization and assembly of the two-segment dialogue context.

mod context;
mod vocab;
mod wordpiece;

use thiserror::Error;

pub use context::{align_span, build_context, CharSpan, ContextOptions, EncodedContext, Segment, Source};
pub use vocab::{Vocab, CLS, PAD, SEP, UNK};
pub(crate) use wordpiece::fold_case;
pub use wordpiece::{pre_split, wordpiece_tokenize, WordPiece, MAX_WORD_CHARS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("reserved token {0} missing from vocabulary")]
    MissingReserved(&'static str),
    #[error("token {token:?} appears at ids {first} and {second}")]
    Duplicate { token: String, first: u32, second: u32 },
    #[error("empty token at id {0}")]
    EmptyToken(u32),
    #[error("vocabulary I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot align {span:?}: {reason}")]
pub struct AlignError {
    pub span: CharSpan,
    pub reason: &'static str,
}
