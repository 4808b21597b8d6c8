//! Numerical core for the heteroclinic orbit of the zoomed birth-death model
//!
//! ```text
//! ẋ = (−Ax + b(1−z²))/ε + Rˣ,   ż = −⟨Ax, b⟩ + (1−z²) + Rᶻ
//! ```
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! the worker pool live in the `bdflow` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod conley;
pub mod model;
pub mod norms;
pub mod operators;
pub mod solver;
pub mod verify;

mod dense;

pub use model::{build_triple, Perturbation, Point, ProblemTriple, WPoint};
pub use norms::{Grid, GridPath, Layout, WeightContext};
pub use operators::LinearizedSystem;
pub use solver::{newton_solve, NewtonOptions, Solution};
