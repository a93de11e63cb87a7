//! Dense math for the model: tensors, the gradient tape, GRU, batch norm,
//! losses, NAdam and a finite-difference checker.

pub mod batch_norm;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod losses;
pub mod params;
pub mod tensor;

pub use batch_norm::{batch_norm, BatchNormState};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckReport, Stencil};
pub use graph::{row_cosine, BnMode, Graph, Var};
pub use gru::{gru_cell_forward, GruParams};
pub use losses::{sigmoid_bce, softmax_cross_entropy, softmax_rows};
pub use params::{nadam_step, NadamConfig, ParamId, ParamStore};
pub use tensor::{matmul, matmul_at, matmul_bt, Real, Tensor};
