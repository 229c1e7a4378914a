//! Recurrent query-suggestion models over search-log sessions.
//!
//! The crate implements three next-query prediction models sharing one
//! trainable core:
//!
//! * **NQS** — a session-level GRU that reads the queries of the current
//!   session one by one and scores every vocabulary entry as the next query.
//! * **HNQS** — adds a user-level GRU consuming one session summary per
//!   session; its state initializes the next session's hidden state, so a
//!   user's past sessions inform predictions in the current one.
//! * **AHNQS** — replaces the session summary with an attention-weighted sum
//!   of all session hidden states, letting the user-level GRU focus on the
//!   queries that say the most about the user.
//!
//! Around the models sit a query-log preprocessing pipeline (parsing,
//! sessionization, filtering, vocabulary and time-based splits), a
//! session-parallel mini-batcher, a TOP1 pairwise-ranking trainer with
//! AdaGrad, a co-occurrence baseline, and an MRR/Recall evaluation harness.
//! Everything is 64-bit, deterministic under a fixed seed, and trained from
//! scratch; there is no autodiff framework underneath.

pub mod adj;
pub mod batcher;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gru;
pub mod linalg;
pub mod models;
pub mod querylog;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

// The guide's code blocks run as doctests, so the book cannot drift from
// the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/recurrent-core.md")]
    mod recurrent_core {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/batching.md")]
    mod batching {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
