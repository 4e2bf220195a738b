//! Optical-flux lattice gauge fields from Laguerre–Gaussian beams and
//! wavepacket interference on ring and square lattices.

pub mod commands;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod gauge;
pub mod lattice;
pub mod observables;
pub mod optics;
pub mod output;
pub mod quadrature;

pub use error::{Error, Result};
