//! Minimal dense-network substrate with hand-written backpropagation.

pub mod gradcheck;
pub mod layer;
pub mod linalg;
pub mod loss;
pub mod mlp;
pub mod optim;

pub use gradcheck::{finite_difference_grad, relative_error};
pub use layer::{Activation, DenseGrads, DenseLayer};
pub use linalg::Matrix;
pub use loss::{cosine_similarity, cosine_similarity_grad, cross_entropy, mse, softmax};
pub use mlp::{ForwardCache, MlpGrads, MlpNetwork};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
