//! Command line front end and live performance server for loopstage
//! projects.

pub mod commands;
pub mod server;
