//! Truncated Fock-space simulator and analysis library for the nonlinear
//! quadrature measurement p̂ + γx̂², realized by a beamsplitter-coupled ancilla,
//! adaptive homodyne detection, and nonlinear electro-optical feedforward.
//!
//! Conventions used throughout (ħ = 1):
//!
//! ```text
//! x̂ = (â + â†)/√2      p̂ = (â − â†)/(i√2)      [x̂, p̂] = i
//! ```
//!
//! so the vacuum has Var(x̂) = Var(p̂) = 1/2, and a coherent state |α⟩ with
//! α = (α_x + i·α_p)/√2 has ⟨x̂⟩ = α_x, ⟨p̂⟩ = α_p.

pub mod circuit;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod lut;
pub mod povm;
pub mod rng;
pub mod states;
pub mod tomography;

pub use error::{Result, SimError};
