//! Numeric kernel shared by every other module: dense matrices, seeded
//! random streams, similarity functions and temperature / nucleus sampling.

mod matrix;
mod rng;
mod sampling;
mod similarity;
mod tensor;

pub use matrix::{gemm, DenseMatrix, MatMut, MatRef, Op};
pub use rng::{derive_seed, SeededRng};
pub use sampling::{argmax, nucleus, softmax_with_temperature, top_p_sample};
pub use similarity::{angular_similarity, cosine_similarity, dot, l2_normalize, norm};
pub use tensor::TensorBlob;
