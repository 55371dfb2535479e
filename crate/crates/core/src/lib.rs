//! Lifelog QA benchmark toolkit: synthetic cohorts, a query algebra with
//! dual (interpreter and SQL) execution, benchmark generation, and the
//! CP / DP / agent evaluation harness.

pub mod benchgen;
pub mod lifelog;
pub mod qlang;
pub mod store;
pub mod evalkit;
pub mod llm;
pub mod agent;
pub mod baselines;
