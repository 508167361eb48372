//! HTTP session service and command line front end for `kgforage`.

pub mod app;
pub mod cli;
pub mod error;
pub mod session;
