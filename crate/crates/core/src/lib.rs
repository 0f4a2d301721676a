pub mod cli;
pub mod data;
pub mod error;
pub mod models;
pub mod seeding;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
