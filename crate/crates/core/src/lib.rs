//! Macroscopic free energy of dense nematic suspensions with a hard-core
//! packing constraint, its dual characterisation, and the resulting
//! equilibria and equation of state.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dual_solver;
pub mod equilibria;
pub mod error;
pub mod macro_energy;
pub mod quadrature;
pub mod tensor3;

pub use error::{Constraint, Error, Result};
pub use tensor3::{uniaxial, TracelessSym3};
