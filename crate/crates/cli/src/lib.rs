pub mod config;
pub mod criteria;
pub mod experiments;
pub mod output;
