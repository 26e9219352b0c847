pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod fleet;
pub mod frameworks;
pub mod lti_verify;
pub mod optim;
pub mod serve;
pub mod sim;
pub mod timeline;

pub use error::{Error, Result};
