pub mod bounds;
pub mod cli;
pub mod dists;
pub mod jobs;
pub mod palm;
pub mod quad;
pub mod sim;
pub mod stats;
