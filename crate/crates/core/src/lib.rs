pub mod agent;
pub mod baselines;
pub mod features;
pub mod harness;
pub mod hssenv;
pub mod replay;
pub mod rlcore;
pub mod trace;
