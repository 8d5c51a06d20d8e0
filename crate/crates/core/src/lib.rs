pub mod dataset;
pub mod eval;
pub mod features;
pub mod layout;
pub mod nn;
pub mod pipeline;
pub mod signalcore;
