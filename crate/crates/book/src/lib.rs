//! Runs the code in the mdbook guide under `book/` as doc-tests.
//!
//! mdbook cannot test snippets that depend on external crates, so each
//! chapter is included here as the documentation of an empty module.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/polarization.md")]
pub mod polarization {}

#[doc = include_str!("../../../book/src/weak-coupling.md")]
pub mod weak_coupling {}

#[doc = include_str!("../../../book/src/estimator.md")]
pub mod estimator {}

#[doc = include_str!("../../../book/src/decoherence.md")]
pub mod decoherence {}

#[doc = include_str!("../../../book/src/tomography.md")]
pub mod tomography {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
