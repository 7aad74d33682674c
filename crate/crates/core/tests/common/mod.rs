// Each test target uses a different subset.
#![allow(dead_code)]

pub mod convergence;
pub mod props;
