//! Command-line pipeline and the websocket bridge to the steering console.

pub mod bridge;
pub mod commands;
pub mod config;
pub mod exit;
pub mod serve;
