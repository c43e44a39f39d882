//! Core library for a U-shaped state-space segmentation network over CT-like
//! grayscale slices.
//!
//! The stack is self-contained: a dense tensor engine with reverse-mode
//! autodiff ([`tensor`]), Haar wavelet downsampling ([`haar`]), the
//! four-direction 2D selective scan ([`ss2d`]), the convolutional
//! state-space block and its depthwise feed-forward network ([`cvssb`]),
//! channel/spatial attention ([`cbam`]), the assembled encoder-decoder
//! ([`model`]), Dice+BCE losses and pixel metrics ([`loss`], [`metrics`]),
//! synthetic lesion data with HU windowing ([`data`]), and a reproducible
//! AdamW training loop ([`train`]).

// index-heavy numeric kernels read better with explicit loops, and the
// negated comparisons deliberately reject NaN
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod cbam;
pub mod check;
pub mod cvssb;
pub mod data;
pub mod gradcheck;
pub mod haar;
pub mod init;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod precision;
pub mod rng;
pub mod ss2d;
pub mod tensor;
pub mod train;

pub use precision::Real;
pub use tensor::{Mode, Tensor, TensorError};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::gradcheck::{assert_grad_close, random_input};
    use crate::tensor::{Result, Tensor};

    /// Random-input finite-difference check at 64-bit precision.
    pub fn grad_check(
        shape: &[usize],
        f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
        rtol: f64,
        offset: f64,
    ) {
        let x = random_input::<f64>(shape, 0x5eed_0001, offset);
        assert_grad_close(&x, f, rtol);
    }
}
