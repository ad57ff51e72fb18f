//! Cross-project aging-related bug prediction with a feature-tokenizing
//! transformer, focal loss and MMD source/target alignment.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
