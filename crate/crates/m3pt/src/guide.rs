//! The narrative guide, one module per book chapter.
//!
//! The book sources live in `book/` (render with `mdbook build book`). They
//! are included here as doc comments so `cargo test --doc` compiles and
//! runs every code block in the book — the guide cannot drift from the
//! library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}

#[doc = include_str!("../../../book/src/tokenizers.md")]
pub mod tokenizers {}

#[doc = include_str!("../../../book/src/masking.md")]
pub mod masking {}

#[doc = include_str!("../../../book/src/transformer.md")]
pub mod transformer {}

#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub mod synthetic_data {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
