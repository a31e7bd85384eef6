//! Simulations, benchmark models and evaluation.

pub mod dgp;
pub mod dm;
pub mod setar;
pub mod harness;
pub mod models;
pub mod study;
