//! Independent oracles and the self-test suites built on them.

pub mod checks;
pub mod fd;
pub mod oracle;
