//! Small differentiable toolkit: dense MLPs, a reverse-mode tape, an
//! adaptive-moment optimiser and a finite-difference gradient checker.

mod gradcheck;
mod mlp;
mod optim;
mod tape;

pub use gradcheck::{finite_diff_check, grad, FULL_CHECK_LIMIT};
pub use mlp::{mlp_forward, BoundParams, Layer, ParamSet};
pub use optim::{opt_step, AdamConfig, OptState};
pub use tape::{Gradients, Tape, Var};
