//! Placement of variable series reactors and phase shifting transformers
//! under wind uncertainty, solved as a bilevel stochastic MILP.

pub mod bilevel;
pub mod config;
pub mod devices;
pub mod market;
pub mod matpower;
pub mod milp;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod scenarios;
pub mod screening;
