//! Retinal image synthesis toolkit.
//!
//! Trains DCGAN/WGAN generators and a multi-level whitening-coloring
//! stylizer to synthesize symptom images, then verifies them with a
//! CAM-compatible classifier. Every network is trained with the in-crate
//! reverse-mode autodiff in [`autodiff`].

pub mod autodiff;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod style;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wct;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
