//! Neural tangent kernels of fully connected ReLU networks.
//!
//! The crate covers the analytic side (arc-cosine compositions, spherical
//! harmonic modes, sequence calculus for decay conditions), the empirical side
//! (Gram spectra and their log–log decay fits) and the training side (kernel
//! gradient flow with early stopping, and a finite-width mirrored network whose
//! dynamics approach the kernel flow as the width grows).
//!
//! ```
//! use ntk_spectra::ntk_kernels::{ntk_eval, NtkDescriptor};
//!
//! let desc = NtkDescriptor::full(2).unwrap();
//! let k = ntk_eval(&desc, &[0.5], &[0.5]).unwrap();
//! // The kernel of an input with itself is (1 + |x|^2)(L + 1) + 1.
//! assert!((k - (1.25 * 3.0 + 1.0)).abs() < 1e-12);
//! ```

pub mod error;
pub mod kernel_flow;
pub mod loglog;
pub mod mirrored_network;
pub mod ntk_kernels;
pub mod quadrature;
pub mod rng;
pub mod seq_calculus;
pub mod spectral_estimator;
pub mod sphere_harmonics;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/spherical-modes.md")]
    mod spherical_modes {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/kernel-flow.md")]
    mod kernel_flow {}
    #[doc = include_str!("../../../book/src/wide-networks.md")]
    mod wide_networks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
