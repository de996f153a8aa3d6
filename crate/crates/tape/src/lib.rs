//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is created per forward pass. Operations on [`Var`] handles
//! record nodes; [`Tape::backward`] returns the adjoints of every leaf that
//! requires a gradient.
//!
//! ```
//! use lps_tape::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(2.0), true);
//! let y = x.square();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[4.0]);
//! ```

mod error;
pub mod kernels;
mod param;
mod shape;
mod tape;
mod tensor;

pub use error::TapeError;
pub use param::Parameter;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
