//! Command-line front end and HTTP service for the redaction toolkit.

pub mod commands;
pub mod corpus;
pub mod server;
