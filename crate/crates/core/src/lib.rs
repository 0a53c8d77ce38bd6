//! Multiscale level-set topology optimization of thermal-cloak microstructures.

pub mod config;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod homogenization;
pub mod levelset;
pub mod macro_solver;
pub mod objectives;
pub mod optimizer;
pub mod sensitivity;
pub mod validation;
pub mod vtk;
pub mod mesh;

pub use error::{Error, Result};
