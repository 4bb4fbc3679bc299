//! Two-scale finite-element toolkit. (module docs restored as modules land)

pub mod scalar;
pub mod correctors;
pub mod fem;
pub mod interp;
pub mod lod;
pub mod mesh;
pub mod sparse;
pub mod system;
pub mod twoscale;

pub use scalar::{Cplx, Real};
