//! Dense building blocks: interpolative decomposition, pivot-block
//! factorizations and block elimination.

mod elim;
mod id;
mod pivot;

pub use elim::{block_eliminate, Elimination};
pub(crate) use elim::eliminate_coupling;
pub use id::{interp_decomp, IdResult};
pub use pivot::{pivot_factor, PivotFactor};
