pub mod answers;
pub mod backends;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod hardneg;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod seeding;
pub mod statements;
pub mod tasks;
pub mod taxonomy;
pub mod verbalizer;

pub use error::{Error, Result};
