//! Preemptive coflow scheduling on heterogeneous parallel network cores.

pub mod instance;
pub mod lp;
pub mod oracle;
pub mod pipeline;
pub mod rational;
pub mod rounding;
pub mod simulator;
pub mod timegrid;
