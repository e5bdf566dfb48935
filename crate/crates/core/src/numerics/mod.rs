//! Dense matrices, seeded randomness and a reverse-mode differentiation tape.

mod gradcheck;
mod matrix;
mod params;
mod rng;
mod tape;

pub use gradcheck::{compare, finite_diff_check, GradCheckReport, ParamCheck, ABSOLUTE_FLOOR};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore, Tensor};
pub use rng::{derive_seed, Rng};
pub use tape::{Tape, Var};

