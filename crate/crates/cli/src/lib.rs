//! Operator surface for graphmark: the command line, a black-box
//! prediction service and the matching remote provider.

pub mod client;
pub mod commands;
pub mod config;
pub mod server;
