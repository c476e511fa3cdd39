#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod baseline;
pub mod error;
pub mod harness;
pub mod instance;
pub mod lbfgs;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod reference;
pub mod zoo;
