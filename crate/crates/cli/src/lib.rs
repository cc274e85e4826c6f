pub mod compare;
pub mod runner;
pub mod scenario;
