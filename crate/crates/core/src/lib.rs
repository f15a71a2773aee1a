//! Spectral element building blocks for incompressible flow with passive heat
//! transport, plus snapshot POD and time-series diagnostics.

pub mod basis;
pub mod cases;
pub mod error;
pub mod matrix;
pub mod mesh;
pub mod operators;
pub mod pod;
pub mod solver;
pub mod tensor;

pub use basis::Basis1D;
pub use error::{Result, SemError};
pub use matrix::Matrix;
pub use mesh::{BoundaryKind, BoxMesh, GatherScatter, GeometricFactors, Mesh};
pub use operators::{Field, Space};
