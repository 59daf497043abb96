//! Spectral toolkit for the weakly nonlinear stochastic reaction-diffusion equation on the
//! 3-torus: truncated Fourier fields, Littlewood-Paley machinery, Gaussian free fields and Wick
//! powers, renormalisation constants, enhanced-noise construction and the paracontrolled
//! remainder solver.

mod fft;
pub mod fourier;
pub mod besov;
pub mod poly;
mod quad;
pub mod gaussian;
pub mod renorm;
pub mod diagrams;
pub mod solver;
pub mod harness;
