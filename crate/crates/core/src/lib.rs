//! Interactive teacher-student distillation with confidence checks on both
//! sides.

pub mod aligner;
pub mod data;
pub mod embedding;
pub mod features;
mod io_util;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod spans;
pub mod student;
pub mod synthetic;
pub mod teacher;
pub mod tokenize;
