//! Command line and HTTP front end for the radar event detector.

pub mod config;
pub mod server;

pub use config::Config;
pub use server::{publish, router, router_with_static, shared, Published, Shared};
