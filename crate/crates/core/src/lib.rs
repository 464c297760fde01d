//! Constructive identification of additive index models
//! `Π(w,x,z) = Λ(g(w) + h(x), z)` from oracle access to `Π`.
//!
//! [`model`] holds the scenario types and the generator, [`kernels`] the
//! maps `Λ`, [`topology`] the support geometry and assumption audit,
//! [`oracle`] the black-box access to `Π`, and [`engine`] the matching,
//! propagation and recovery algorithms.

pub mod engine;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod topology;
