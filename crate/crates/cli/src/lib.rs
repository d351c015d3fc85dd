//! Problem generators, the problem file format and benchmark drivers built on
//! `spock-core`.

pub mod format;
pub mod gen;
pub mod bench;
pub mod ncs;
pub mod run;
pub mod scaling;
