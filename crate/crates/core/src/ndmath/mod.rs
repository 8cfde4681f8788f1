//! Dense 64-bit matrix core: storage, symmetric eigendecomposition,
//! spectral matrix functions and reverse-mode differentiation.

mod eig;
mod gradcheck;
mod graph;
mod matrix;

pub use eig::{
    apply_spectral, psd_function, spectral_cutoff, sym_eig, EigPair, SpectralFn,
    DEFAULT_SPECTRAL_TOL, EIGEN_GAP_FLOOR,
};
pub use gradcheck::grad_check;
pub use graph::{ColumnMix, Gradients, Graph, SparseRows, Var};
pub use matrix::Matrix;
