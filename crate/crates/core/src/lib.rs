pub mod autodiff;
pub mod checks;
pub mod corpus;
pub mod data;
pub mod difficulty;
pub mod grammar;
pub mod graphs;
pub mod model;
pub mod schema;
pub mod serialize;
pub mod train;
