//! JSON front end for twisted power partial isometries: documents, reports
//! and the command implementations behind the `ppi` binary.

pub mod commands;
pub mod document;

pub use commands::{CliError, Context, GenerateRequest, Outcome, Preset};
pub use document::{format_float, SchemaError, SpecDocument, TupleDocument};
