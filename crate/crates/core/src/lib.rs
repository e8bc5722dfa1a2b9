//! Swimming of an actively forced, inextensible elastic filament in a
//! linearly viscoelastic fluid under resistive force theory.

pub mod basis;
pub mod diagnostics;
pub mod forcing;
pub mod integrator;
pub mod quadrature;
pub mod sim;
pub mod theory;
pub mod validation;
