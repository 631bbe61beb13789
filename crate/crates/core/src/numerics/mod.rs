//! Dense matrices, reverse-mode gradients and the Adam optimizer.

mod adam;
mod gradcheck;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_diff_check;
pub use matrix::Matrix;
pub use tape::{chamfer_with_matches, radial_deviation, Gradients, ParamId, ParamStore, Tape, Var};
