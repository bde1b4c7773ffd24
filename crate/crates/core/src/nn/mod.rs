//! Minimal differentiable building blocks: a reverse-mode tape, parameter
//! storage, dense layers, an adaptive-moment optimizer and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod params;

pub use gradcheck::{check_params, relative_error, GradCheckReport};
pub use graph::{Bound, Grads, Graph, Var};
pub use params::{Adam, Linear, Mlp, ParamSet};
