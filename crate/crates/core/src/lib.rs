//! Flow-level simulator and closed-form cost model for synchronous
//! data-parallel training.

pub mod engine;
pub mod trace;
pub mod analytic;
pub mod mechanisms;
pub mod experiments;
pub mod oracle;
pub mod selfcheck;
