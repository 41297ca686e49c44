//! Generalized spiked covariance models.
//!
//! A population covariance Σ = T diag(spec) Tᵀ whose spectrum is a fixed
//! "bulk" distribution plus finitely many spiked eigenvalues α produces, for
//! each spike above the phase-transition threshold, a sample eigenvalue that
//! separates from the bulk near φ(α) and fluctuates at the 1/√n scale with a
//! non-universal variance. This crate computes the deterministic ingredients
//! of that picture (φ, its derivative, support edges, the companion
//! Stieltjes transform and its inversion), the limiting-law parameters
//! (κ, θ, ν, β_x and the block variances), and builds on them:
//!
//! - [`model`]: population models — bulk measures, spike groups, and the two
//!   built-in designs (an identity-bulk model with six spikes, and a Toeplitz
//!   bulk with spikes planted along its eigenbasis).
//! - [`spectral`]: φ(α), φ′(α), the detection threshold ρ, support edges,
//!   and numerical inversion λ ↦ α on the increasing branches.
//! - [`clt`]: limit parameters per spike group, normalized statistics
//!   γ = √n(l/φ_n − 1), sampling from the limiting block law, and the
//!   resolvent block statistic Ω_M.
//! - [`sampler`]: data-matrix generation (Gaussian, Rademacher, heavy-tail),
//!   sample covariances, and truncate-center-rescale preprocessing.
//! - [`estimate`]: spike count/location/size detection from an observed
//!   spectrum.
//! - [`mc`]: seeded, parallel Monte Carlo drivers with empirical summaries,
//!   detection frequency tables, and two-sample KS universality checks.
//! - [`cli`]: the `spikelab` binary.

pub mod cli;
pub mod clt;
pub mod error;
pub mod estimate;
pub mod mc;
pub mod model;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};

/// Keep the guide's code blocks compiling: each chapter is attached here as a
/// doc-test so `cargo test` exercises every snippet in `book/src`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }

    chapter!(introduction, "introduction.md");
    chapter!(model, "model.md");
    chapter!(phase_transition, "phase-transition.md");
    chapter!(fluctuations, "fluctuations.md");
    chapter!(simulation, "simulation.md");
    chapter!(detection, "detection.md");
    chapter!(cli, "cli.md");

    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
