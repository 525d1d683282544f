pub mod apov;
pub mod cli;
pub mod codec;
pub mod fib;
pub mod model;
pub mod names;
pub mod registry;
pub mod sim;
pub mod tunnel;
pub mod workload;
