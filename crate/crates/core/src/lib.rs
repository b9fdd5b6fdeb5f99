//! Numerical laboratory for the spectral gap of parallel tempering.
//!
//! Everything lives on finite state spaces so that every quantity in the
//! theory is an exact finite sum:
//!
//! * [`measure`]: atomized multimodal targets, tempering, the overlap `phi`,
//!   the bottleneck ratio `B` and the product law over mode assignments.
//! * [`kernels`]: Metropolis level kernels, the product update, the swap
//!   kernel, their mixture, projection/restriction and the two auxiliary
//!   chains over assignments used in the canonical-path comparison.
//! * [`spectral`]: spectral gaps (dense or Krylov), Dirichlet forms,
//!   Cheeger ratios and the TV convergence bound.
//! * [`paths`]: the recursive swap paths, level-0 replacement paths, their
//!   length and divergence laws, congestion and edge multiplicity.
//! * [`lower_bound`]: the end-to-end comparison pipeline on small families.
//! * [`hardness`]: the explicit hard instance in exact rationals with its
//!   Cheeger certificate and the minimax-divergence oracle.
//! * [`sampler`]: a literal parallel tempering sampler with trace diagnostics.
//! * [`io`]: JSON and CSV formats.

pub mod error;
pub mod hardness;
pub mod io;
pub mod kernels;
pub mod lower_bound;
pub mod measure;
pub mod paths;
pub mod sampler;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result, DEFAULT_STATE_BUDGET};
pub use kernels::{StateCodec, StochasticMatrix};
pub use measure::{
    FiniteTarget, ProductAssignment, ProductSpace, TemperatureLadder, TemperedFamily,
};
pub use sparse::SparseMatrix;
pub use spectral::SpectrumReport;
