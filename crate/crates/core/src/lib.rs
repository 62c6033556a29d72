//! Complete electrode model of electrical impedance tomography on the unit
//! square with smooth contact conductances: meshing, forward solves, shape
//! derivatives, model comparison studies and reconstructions.

pub mod contact;
pub mod error;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod mesh;
pub mod phantom;
pub mod shapederiv;
pub mod study;

pub use error::{Error, Result};
