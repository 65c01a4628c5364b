//! A population of randomly initialized learned optimizers that train each
//! other.
//!
//! Three nested layers:
//!
//! * [`inner_loop`] trains a target task with an optimizer (learned or Adam).
//! * [`outer_es`] estimates meta-gradients over truncated unrolls with
//!   antithetic evolution strategies, then updates a member's weights using
//!   *another member's* learned optimizer.
//! * [`population`] runs tournaments that copy the better member (and its
//!   outer-optimizer assignment) over the worse one.
//!
//! [`baselines`] and [`evaluation`] provide the Adam reference lines and the
//! normalized learning curves everything is scored with. [`harness`] holds
//! configuration, checkpoints and CSV output for the `selfopt` binary.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod inner_loop;
pub mod learned_opt;
pub mod outer_es;
pub mod population;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use tasks::ParamVector;
