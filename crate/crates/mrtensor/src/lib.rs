//! Multiresolution tensor compression.
//!
//! Tensors with structure on several length scales compress poorly in a
//! single low-rank format: each scale contributes its own rank. This
//! crate represents a tensor as a sum of compressed components on
//! increasingly coarse grids,
//!
//! ```text
//! T = sum_{k=0..L} ext_{L-k}(T_k),    T_k on grid base_shape / bs^(L-k)
//! ```
//!
//! where `ext` replicates entries into constant blocks and each level
//! payload T_k is rank-bounded in a base format (tensor train or
//! canonical). Coarse levels cost little to store, so pushing structure
//! down the hierarchy raises the compression ratio at a fixed accuracy.
//!
//! The pieces:
//!
//! - [`dense`]: dense tensors, Frobenius geometry, and the `ext`/`ave`
//!   grid transfer operators.
//! - [`tt`]: tensor-train construction (TT-SVD), rounding, arithmetic,
//!   and fiber-wise grid transfer.
//! - [`cp`]: canonical format with alternating least squares.
//! - [`ms`]: the multiresolution tensor itself with addition, rounding,
//!   Hadamard product, mode contraction, norm, and storage accounting,
//!   all on the compressed representation.
//! - [`decompose`]: the alternating two-sweep decomposition, its
//!   scale-by-scale restructured variant, and analytic test instances.
//! - [`io`]: binary containers (`MRT0` tensors, `MRTC` archives) and
//!   PGM image ingestion.
//!
//! The `mrtensor` binary exposes compression, reconstruction,
//! inspection, benchmarking, and demo experiments on the command line.

pub mod cp;
pub mod decompose;
pub mod dense;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ms;
pub mod rng;
pub mod tt;

pub use cp::{cp_als, CpFit, CpInit, CpOptions, CpTensor};
pub use decompose::{
    alternating_decompose, closedness_sequence, multiscale_terms, multiscale_test_tensor,
    prescribed_ms_approximation, restructured_decompose, coarse_grid_error_bound, DecomposeConfig,
    DecomposeTrace, Init, TensorInput,
};
pub use dense::{DenseTensor, GridSpec};
pub use error::{Error, Result};
pub use ms::{BaseFormat, LevelRank, MsTensor, Payload, RankVector, StorageReport};
pub use tt::{Truncation, TtRanks, TtTensor};
