//! Cost accounting, sparse lowering, receptive fields and gradient checks.

mod flops;
mod gradcheck;
mod receptive;
mod sparse;

pub use flops::{count_macs, reduction_ratio, FlopReport, LayerFlops, MacCount};
pub use gradcheck::{grad_check, random_case, random_comb_instance, random_tensor, GradOp};
pub use receptive::{receptive_field, ReceptiveField};
pub use sparse::{lower_to_sparse, SparseMatrix};
