//! File formats, storage layouts and the command-line front end for
//! `warpcell-core`.

pub mod cli;
pub mod formats;
pub mod pipeline;
pub mod store;
pub mod tables;
pub mod viz;
