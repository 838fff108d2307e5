pub mod fixtures;
pub mod mapping;
pub mod schema;
pub mod seed;
pub mod prompt;
pub mod gateway;
pub mod matching;
pub mod eval;
