//! Fractional Gaussian fields and their lattice approximations.
//!
//! The guide in `book/` walks through each module; its snippets run as doc-tests.

pub mod dense;
pub mod error;
pub mod fit;
pub mod hlik;
pub mod io;
pub mod numopt;
pub mod simulate;
pub mod spectral;
pub mod variogram;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattices.md")]
    mod lattices {}
    #[doc = include_str!("../../../book/src/variograms.md")]
    mod variograms {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/dense.md")]
    mod dense {}
    #[doc = include_str!("../../../book/src/lattice_fit.md")]
    mod lattice_fit {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
