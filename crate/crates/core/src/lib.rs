//! Pseudo-spectral simulator for the stochastic Ginzburg–Landau
//! approximation of the simplified Ericksen–Leslie equations on the 2D torus.
//!
//! The integrated system, on `𝒪 = [0, 2π)²`, is
//!
//! ```text
//! du + [A u + Π(u·∇u)] dt = −Π[Div(∇n ⊙ ∇n)] dt + dW
//! dn + (u·∇)n dt          = [Δn + f_ε(n)] dt + (n × h) ∘ dη
//! ```
//!
//! with `f_ε(n) = ε⁻²(1 − |n|²) n`. Time stepping is a Strang splitting with
//! exact diffusion, exact pointwise Ginzburg–Landau relaxation and an exact
//! rotation for the Stratonovich noise; see [`stepper`].

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod noise;
pub mod operators;
pub mod selfcheck;
pub mod stepper;

pub use error::{Result, SglError};
pub use grid::{DirectorField, Field, SpectralGrid, VelocityField};
pub use operators::GLParams;
