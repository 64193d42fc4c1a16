//! Dense linear algebra, normalization primitives, seeded randomness and the
//! gradient contract shared by the rest of the crate.

mod grad;
mod matrix;
mod rng;
pub mod tape;

pub use grad::{finite_diff_check, GradBundle, ParamMap};
pub use matrix::{cosine, dot, l2_normalize, log_sum_exp, norm, softmax, Matrix, MIN_NORM};
pub use rng::Rng;
