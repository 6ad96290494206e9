//! Live room server and command-line front end for the ARSLS engine.

pub mod cli;
pub mod config;
pub mod fanout;
pub mod room;
pub mod sequencer;
