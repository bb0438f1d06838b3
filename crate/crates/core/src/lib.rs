pub mod actuation;
pub mod environment;
pub mod experiments;
pub mod magnetics;
pub mod mechanics;
pub mod scenario;
pub mod sim;
pub mod trace;
