//! Compile-and-run harness for the guide's code examples.
//!
//! Each chapter of the book is attached here as a doc comment, which
//! makes every ```rust fence in the guide a doctest: `cargo test --doc`
//! fails if the book drifts from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/model.md")]
pub struct ModelChapter;

#[doc = include_str!("../../../book/src/autoencoders.md")]
pub struct AutoencodersChapter;

#[doc = include_str!("../../../book/src/density.md")]
pub struct DensityChapter;

#[doc = include_str!("../../../book/src/importance.md")]
pub struct ImportanceChapter;

#[doc = include_str!("../../../book/src/allocation.md")]
pub struct AllocationChapter;

#[doc = include_str!("../../../book/src/simulation.md")]
pub struct SimulationChapter;

#[doc = include_str!("../../../book/src/pipeline.md")]
pub struct PipelineChapter;

#[doc = include_str!("../../../book/src/formats.md")]
pub struct FormatsChapter;
