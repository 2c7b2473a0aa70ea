//! Energy change of closed quantum systems under finite-duration drives.
//!
//! A system with Hamiltonian `H0` is perturbed by `lambda(t) O` for a finite
//! time. This crate computes the resulting energy change `dE` three ways:
//!
//! * exactly, by propagating the state ([`evolve`]);
//! * at linear order, through the spectral function of `O` ([`response`]);
//! * as a power series in the kick strength built from nested commutators,
//!   evaluated both as dense matrices and as eigenbasis sums ([`series`]).
//!
//! [`models`] builds the Hamiltonians and observables, [`spectra`] extracts
//! eigenstate-thermalization statistics and effective temperatures, and
//! [`experiments`] wires everything into reproducible studies that the
//! `ethkick` binary exposes on the command line.

pub mod cli;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod pulses;
pub mod quadrature;
pub mod response;
pub mod series;
pub mod spectra;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
