//! Multi-task cycle-consistent GANs coupling unpaired RGB→semantic translation
//! with semantic-guided sparse-to-dense depth completion.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod palette;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
