//! Dataset IO, file formats, the staged pipeline and the `mage` command line
//! on top of `mage-core`.

pub mod commands;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod surrogate;
pub mod tu;
