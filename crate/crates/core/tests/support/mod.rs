//! Oracles and check suites shared by the unit-level test targets and the
//! acceptance run. Not every target uses every item.
#![allow(dead_code)]

pub mod emd_oracle;
pub mod grad_suite;
pub mod metric_suite;
