//! Ready-made two-module systems.

pub mod gauss_chain;
pub mod hpv;
pub mod re;
