//! Static worst-case execution time analysis for binaries in an ARMv4T-style
//! RISC subset.
//!
//! The pipeline: parse an objdump-style listing ([`listing`]), reconstruct the
//! control flow graph by iterated slice-and-expand ([`cfgbuild`]), compute a
//! WCET-equivalent sliced program ([`slice`]), then run an exhaustive
//! longest-path search of the sliced program composed with a cycle-accurate
//! model of an ARM920T-like pipeline/cache/write-buffer ([`hw`], [`explore`]).

pub mod cfgbuild;
pub mod config;
pub mod explore;
pub mod graph;
pub mod hw;
pub mod isa;
pub mod listing;
pub mod pipeline;
pub mod slice;

pub use config::ToolConfig;
pub use graph::{Cfg, EdgeKind, Node, END};
pub use isa::{SymState, TraceTriple, Value};
pub use listing::{LabeledInstruction, Program};
