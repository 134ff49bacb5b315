pub mod error;
pub mod math;
pub mod model;
pub mod gait;
pub mod solver;
pub mod ocp;
pub mod sim;
pub mod config;
pub mod cli;
