//! Numerical core for the warp LSTM recurrent cell.
//!
//! Everything here is a pure function of its inputs and runs without `std`
//! (an allocator is required). File formats, configuration files and the
//! command-line harness live in the companion `warpcell` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activation;
pub mod bench;
pub mod cells;
pub mod conv;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod gradsuite;
pub mod matching;
pub mod math;
pub mod params;
pub mod sample;
pub mod spline;
pub mod tensor;
pub mod tubelet;

pub use activation::{activation, activation_backward, Activation};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams, Padding};
pub use error::{Error, Result};
pub use geom::{iou, BBox};
pub use gradcheck::{finite_diff_check, Differentiable, GradReport};
pub use params::ParamSet;
pub use sample::{
    bilinear_sample, bilinear_sample_backward, warp_by_flow, warp_by_flow_backward, Coord,
};
pub use tensor::Tensor;
