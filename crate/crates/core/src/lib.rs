pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use maps::{FixationMap, SaliencyMap};
pub use tensor::{Tensor, Tape, Var};
