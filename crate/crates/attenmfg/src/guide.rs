//! The book, compiled.
//!
//! mdbook cannot run a book's code blocks against the crate, so each chapter
//! from `book/src/` is attached here as module documentation: `cargo test`
//! builds and executes every snippet the guide shows, and the rendered book
//! and the tested code are the same bytes. One module per chapter keeps
//! doc-test failures attributable to a page.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/instances.md")]
pub mod instances {}

#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}

#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedules {}

#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
