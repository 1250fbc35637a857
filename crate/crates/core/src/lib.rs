//! Crowd simulation, ego dynamics, sequential neural barrier models and the
//! baseline controllers they are benchmarked against.

pub mod barrier;
pub mod baselines;
pub mod container;
pub mod decomp;
pub mod dynamics;
mod error;
pub mod exec;
pub mod fmt;
pub mod geom;
pub mod inference;
pub mod observe;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
pub use geom::Vec2;
