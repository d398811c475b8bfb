//! Poisson germ-grain random fields with heavy-tailed grain volumes.
//!
//! The crate simulates the field `J(φ) = Σ_j φ(x_j + v_j^{1/d} C)` driven by a
//! Poisson process of germs with intensity `λ dx F_ρ(dv)`, evaluates its exact
//! moments and characteristic functional by quadrature, samples the three scaling
//! limits (Gaussian with long-range dependence, compensated Poisson, stable) and
//! runs convergence experiments comparing the two sides.
//!
//! Modules, bottom-up:
//! - [`heavytail`]: volume laws, stable laws, special constants and `Ψ`;
//! - [`geometry`]: grain shapes, test measures and intersection volumes;
//! - [`grain_model`]: exact simulation and moments of the pre-limit field;
//! - [`kernels`]: the limit covariance kernel and Riesz inner products;
//! - [`limit_fields`]: samplers for the limit fields;
//! - [`harness`]: scaling schedules, normalisers, statistics and experiments.

pub mod error;
pub mod geometry;
pub mod grain_model;
pub mod harness;
pub mod heavytail;
pub mod kernels;
pub mod limit_fields;
mod planar;
mod profile;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
