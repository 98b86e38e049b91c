//! Minimal dense tensor engine with tape-based reverse-mode autodiff.
//!
//! Tensors are immutable, row-major and channels-last for spatial data
//! (`[N, H, W, C]`). A [`Graph`] holds a read-only snapshot of a
//! [`ParamStore`] and records a backward closure for every op whose inputs
//! require gradients; [`Graph::backward`] replays them once in reverse order.
//!
//! ```
//! use lgseg_tensor::{Graph, GraphOptions, Tensor};
//!
//! let g = Graph::<f64>::standalone(GraphOptions::train(0));
//! let x = g.input(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
//! let y = x.mul(&x).unwrap().sum().unwrap();
//! g.backward(&y).unwrap();
//! assert_eq!(g.grad(&x).unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod dtype;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use dtype::{DType, Float};
pub use error::{Result, TensorError};
pub use graph::{Graph, GraphOptions, MatmulRecord, Var};
pub use ops::conv::Conv2dSpec;
pub use ops::norm::BatchStats;
pub use ops::spatial::{bilinear_taps, Pool2dSpec, PoolMode};
pub use params::{Init, ParamBuilder, ParamEntry, ParamId, ParamStore};
pub use tensor::{strides_of, Tensor};
