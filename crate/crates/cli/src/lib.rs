//! Front end for the kgqa agent: offline pool building, single answers,
//! benchmark runs, cost reports and the HTTP answering service.

pub mod app;
pub mod commands;
pub mod service;

pub use app::{run, Cli, Command};
