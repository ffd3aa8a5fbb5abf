//! Latent dynamics discovery for multi-agent trajectories.
//!
//! Positions of `k` agents over `T` frames are compressed by an LSTM
//! variational autoencoder into one scalar per frame, and a sparse polynomial
//! ODE is fitted to that scalar. The fitted ODE can be integrated forward and
//! decoded back into agent positions.

pub mod collisim;
pub mod error;
pub mod gradcore;
pub mod lstmvae;
pub mod matrix;
pub mod pipeline;
pub mod signal;
pub mod sindy;
pub mod trajkit;

pub use error::{Error, Result};
pub use matrix::Matrix;
