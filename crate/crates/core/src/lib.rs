pub mod dbn;
pub mod envs;
pub mod rng;
pub mod utility;
pub mod learn;
pub mod plan;
pub mod selfmod;
pub mod cli;
