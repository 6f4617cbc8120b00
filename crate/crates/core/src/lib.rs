pub mod attribution;
pub mod encoder;
pub mod metrics;
pub mod numerics;
pub mod probes;
pub mod seed;
pub mod training;
