//! Numerics for rate-induced tipping in a bistable reaction-diffusion
//! equation with a habitat that shifts from `-a` to `+a` at rate `r`.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; file formats, the command line and worker pools
//! live in the companion `tipping` crate.
//!
//! Pipeline:
//!
//! * [`model`] reaction term, habitat, shift field and parameters.
//! * [`collocation`] adaptive Lobatto IIIA boundary value solver.
//! * [`pulses`] stable and unstable steady pulses as homoclinic orbits.
//! * [`spectrum`] point spectrum via the angle equation, a dense oracle, and
//!   eigenpairs/projections of the semidiscrete Jacobian.
//! * [`mol`] method-of-lines system on the pulse mesh and a TR-BDF2 integrator.
//! * [`pullback`] pullback attractors and their classification.
//! * [`critical`] critical rate, heteroclinic refinement, tipping diagram and
//!   the transversality diagnostic.
#![no_std]
// Negated float comparisons are deliberate: they reject NaN. Index loops
// mirror the stencil and matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod collocation;
pub mod critical;
mod error;
pub mod interp;
pub mod linalg;
pub mod model;
pub mod mol;
pub mod ode;
pub mod pulses;
pub mod pullback;
pub mod spectrum;

pub use error::{Error, Result};
pub use model::ModelParams;
