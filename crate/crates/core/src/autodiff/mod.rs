//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! ```
//! use calibra::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let root = g.sum(sq).unwrap();
//! let grads = g.backward(root).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var, SQRT_GRAD_EPS};
pub use tensor::Tensor;
