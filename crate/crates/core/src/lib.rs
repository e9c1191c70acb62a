//! Cardinality-constrained least squares (best subset selection).
//!
//! The crate solves
//!
//! ```text
//! psi(k) = min ||y - X w||^2   s.t.  Card(w) <= k
//! ```
//!
//! and attacks it from both sides:
//!
//! - lower bounds: `psi(k) >= y'y - rho` holds exactly when the k-sparse maximum
//!   eigenvalue of `M(rho) = X'(yy' - rho I)X` is nonpositive. [`bounds`] bisects on
//!   `rho` using either exhaustive enumeration ([`sparse_eig`]) or the dual of a
//!   semidefinite relaxation ([`sdp`]); every dual point is a valid certificate.
//! - upper bounds: forward/backward greedy, Gaussian rounding of the relaxation's
//!   primal matrix, eigenvector sampling, and one-swap local search ([`heuristics`]).
//! - exact solutions: include/exclude branch-and-bound that fathoms nodes with the
//!   relaxation bound ([`bnb`]), checked against plain enumeration ([`bruteforce`]).
//!
//! [`experiment`] regenerates the benchmark tables as CSV.

pub mod bnb;
pub mod bounds;
pub mod bruteforce;
pub mod combinatorics;
pub mod error;
pub mod experiment;
pub mod heuristics;
pub mod instance;
pub mod linalg;
pub mod sdp;
pub mod sparse_eig;
pub mod subset_eval;

pub use error::{Error, Result};
pub use instance::Instance;
pub use sparse_eig::SymMatrix;
pub use subset_eval::{FitResult, SupportSet};
