//! Batch driver for the `robust-credit` library: reads one TOML run
//! configuration, dispatches to the requested operation and writes a CSV or
//! JSON table.

pub mod config;
mod run;
pub mod table;

pub use config::{load_config, parse_config, to_toml, Command, Format, RunConfig};
pub use run::run;
pub use table::{Cell, Table};
