//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors, with the convolutional building blocks needed by encoder-decoder
//! image models: strided and transposed convolutions, instance normalization,
//! channel pooling, spatial pooling and Gram matrices.
//!
//! ```
//! use strgate_tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::new([2], vec![1.0, -2.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Binder, ParamStore};
pub use tensor::Tensor;
