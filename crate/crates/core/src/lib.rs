//! Trace-driven analysis of NCCL collective and point-to-point traffic:
//! per-GPU-pair communication matrices from per-rank call logs.

pub mod decompose;
pub mod matrix;
pub mod oracle;
pub mod report;
pub mod trace;
pub mod workload;
