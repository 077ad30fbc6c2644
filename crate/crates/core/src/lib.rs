//! Growth constants and running-maximum statistics for affine neutral
//! stochastic functional differential equations with finite delay,
//!
//! ```text
//! d[X(t) − D(X_t)] = L(X_t) dt + Σ dB(t),   D(φ) = ∫ μ(ds) φ(s),   L(φ) = ∫ ν(ds) φ(s),
//! ```
//!
//! where `μ` and `ν` are matrix-valued measures on `[-τ, 0]`.
//!
//! The pipeline runs bottom-up:
//!
//! * [`measures`] grids `μ`, `ν` and implements their convolution algebra;
//! * [`spectral`] locates characteristic roots and the stability abscissa `v₀`;
//! * [`resolvent`] builds the differential resolvent `ρ` and the growth constants `σᵢ`;
//! * [`simulate`] produces paths by variation of constants and by Euler–Maruyama;
//! * [`asymptotics`] turns paths into running-maximum estimates of `σᵢ`;
//! * [`config`] holds the JSON experiment description shared with the CLI.

pub mod asymptotics;
pub mod config;
pub mod measures;
pub mod resolvent;
pub mod simulate;
pub mod spectral;
mod grid;
mod linalg;

pub use grid::{fmt17, to_json17, GridFunction};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/resolvent.md")]
    mod resolvent {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/maxima.md")]
    mod maxima {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
