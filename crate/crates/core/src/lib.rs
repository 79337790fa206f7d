#![no_std]
extern crate alloc;

pub mod attack;
pub mod detection;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod infoflow;
pub mod linalg;
pub mod model;
pub mod stealth;

pub use error::{Error, Result};
