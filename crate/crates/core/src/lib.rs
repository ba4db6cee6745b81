//! Guided particle filtering, guided MCMC smoothing and Bayesian parameter
//! estimation for semilinear SPDEs on a periodic 1-D domain.
//!
//! The state is kept in a real orthonormal Fourier basis ([`spectral`]). The
//! nonlinear drift is the stochastic Amari neural field ([`amari`]), observed
//! through local spatial averages with Gaussian noise ([`observation`]).
//! Guided proposals ([`guiding`]) steer simulated paths toward the data and
//! drive both the particle filter ([`filter`]) and the path-space MCMC
//! smoother ([`smoother`]). An unscented Kalman filter ([`ukf`]) serves as
//! a baseline.

pub mod amari;
pub mod dataset;
pub mod dump;
pub mod error;
pub mod filter;
pub mod guiding;
pub mod heatmap;
pub mod integrator;
pub(crate) mod linalg;
pub mod metrics;
pub mod model;
pub mod observation;
pub mod rng;
pub mod smoother;
pub mod spectral;
pub mod ukf;

pub use error::{Error, Result};
