//! Discriminative dimensionality reduction between Grassmann manifolds.
//!
//! Learns an orthonormal `D×d` map `W` that sends subspaces `X ∈ G(n, D)` to
//! `qf(WᵀX) ∈ G(n, d)`, minimizing an affinity-weighted sum of subspace measures
//! with Riemannian conjugate gradient on G(d, D).

// `!(x <= tol)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod cli;
pub mod error;
pub mod io;
pub mod manifold;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod pipeline;

pub use error::{Error, Result};
pub use manifold::{GrassmannPoint, MappingMatrix, Mat, PrincipalAngles, TangentVector};
pub use metrics::{MeasureKind, Orientation};
