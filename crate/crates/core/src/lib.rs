//! Model-based test generation for hierarchical, concurrent, timed state machines.
//!
//! The pipeline: parse a model ([`frontend`]), derive symbolic test cases from coverage
//! criteria ([`coverage`]) and requirements ([`tracing`]), solve them into concrete
//! witness traces ([`solver`]), emit executable procedures ([`procgen`]) and judge
//! observed behaviour ([`oracle`]).

pub mod cli;
pub mod corpus;
pub mod coverage;
pub mod expr;
pub mod frontend;
pub mod ltl;
pub mod model;
pub mod oracle;
pub mod procgen;
pub mod semantics;
pub mod solver;
pub mod tracing;
