//! Dense linear algebra, activations, clustering and seeded randomness.
//!
//! Everything here is single-threaded and uses a fixed summation order, so
//! results are bitwise reproducible.

mod kmeans;
mod matrix;
mod ops;
mod rng;

pub use kmeans::{kmeans, kmeans_fit, KMeansFit};
pub use matrix::{dot, l2_norm, matmul, matmul_nt, matmul_tn, DenseMatrix};
pub use ops::{argmax, cosine, relu, sigmoid, sigmoid_scalar, softmax_t};
pub(crate) use ops::softmax_t_unchecked;
pub use rng::{sample_without_replacement, SeededRng};
