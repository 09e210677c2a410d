//! Learning to add precedence edges to job DAGs so that list-scheduling
//! heuristics (shortest job first, critical path) produce shorter makespans.

pub mod bench;
pub mod dag;
pub mod dataset;
pub mod fixtures;
pub mod inference;
pub mod milp;
pub mod model;
pub mod nn;
pub mod sim;
pub mod trainer;
