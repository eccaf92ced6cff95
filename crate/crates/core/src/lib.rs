//! Stability analysis and simulation of wireless human-machine collaborative
//! control loops.

pub mod cartpole;
pub mod commands;
pub mod config;
pub mod cycledist;
pub mod error;
pub mod harq;
pub mod humanmodel;
pub mod linkmodel;
pub mod numeric;
pub mod pmf;
pub mod rngs;
pub mod sessionlog;
pub mod simkernel;
pub mod stability;

pub use error::{Error, Result};
