//! Evidence-gated diagnostic agent with experience accrual.

pub mod dcp;
pub mod encounter;
pub mod eval;
pub mod feedback;
pub mod gateway;
pub mod knowledge;
pub mod protocol;
pub mod runner;
pub mod workspace;
