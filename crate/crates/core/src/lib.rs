//! Pseudo-spectral laboratory for stochastically forced incompressible Euler
//! flow on the periodic unit torus.

pub mod config;
pub mod error;
pub mod euler;
mod fft;
pub mod field;
pub mod inhomo;
pub mod io;
pub mod ledger;
pub mod mollify;
pub mod noise;
pub mod regularity;
pub mod rng;

pub use error::{Error, Result};
pub use field::{RealField, SpectralRep, TorusGrid};
