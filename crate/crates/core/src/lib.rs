//! Rate modeling and entropy coding for anchor-based Gaussian splatting scenes.
//!
//! A binarized multi-resolution hash grid is interpolated at each anchor's
//! location and fed to a small MLP that predicts, per anchor, an adaptive
//! quantization step and a discretized Gaussian for every attribute value.
//! Those probabilities drive both a differentiable rate estimate (used by
//! [`trainer`]) and a bit-exact range coder (used by the container format in
//! the companion `hac` crate).
//!
//! The crate is `no_std` with `alloc`; special functions come from `libm`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod coder;
pub mod error;
pub mod hashgrid;
pub mod masking;
pub mod math;
pub mod ratemodel;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use hashgrid::{Binarization, GridConfig, HashGrid};
pub use masking::MaskSet;
pub use ratemodel::{ContextModel, RateParams};
pub use scene::{Aabb, AnchorScene, AttributeLayout, Family};
