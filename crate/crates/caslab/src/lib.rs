//! Competence-aware planning with online feature discovery.
//!
//! The crate builds stochastic shortest path models, lifts them into
//! competence-aware systems over four levels of autonomy, learns a human
//! feedback profile from logged interactions, and grows the agent's state
//! representation when that feedback looks inconsistent. A simulated campus
//! delivery world and an experiment harness exercise the whole loop.

pub mod campus;
pub mod cas;
pub mod feedback;
pub mod harness;
pub mod refinement;
pub mod ssp;

/// The guide's chapters, compiled as doc-tests so their snippets keep working.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/ssp.md")]
    mod ssp {}
    #[doc = include_str!("../../../book/src/cas.md")]
    mod cas {}
    #[doc = include_str!("../../../book/src/feedback.md")]
    mod feedback {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/campus.md")]
    mod campus {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
