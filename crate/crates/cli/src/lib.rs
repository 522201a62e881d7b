pub mod emit;
pub mod job;
