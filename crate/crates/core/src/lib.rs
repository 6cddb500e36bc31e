pub mod client;
pub mod inventory;
pub mod metrics;
pub mod parsing;
pub mod prompts;
pub mod report;
pub mod runner;
