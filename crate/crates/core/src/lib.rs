pub mod cli;
pub mod diffcore;
pub mod fieldgrid;
pub mod flowdyn;
pub mod losses;
pub mod nets;
pub mod posegraph;
pub mod renderer;
pub mod synthscene;
pub mod error;

pub use error::{Error, Result};
