//! Steering a quantum state between two wavefunctions along the
//! Schrödinger bridge of a reference Nelson diffusion.

pub mod config;
pub mod error;
pub mod field;
pub mod gaussian;
pub mod grid;
pub mod interp;
pub mod nelson;
pub mod pipeline;
pub mod schrodinger;
pub mod steering;

pub use error::{Error, Result};
pub use field::{MadelungPair, RealField, WaveField};
pub use grid::{PhysicalConstants, SpaceTimeGrid};
