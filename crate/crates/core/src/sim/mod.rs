//! Deterministic cooperative simulator for resolved kernels.
//!
//! Every CTA starts with one prologue stream. Its first step initializes
//! the CTA's barriers; when the prologue ends the stream forks into one
//! stream per task region replica, each with a copy of the prologue's
//! registers. A scheduler visit executes exactly one instruction of one
//! runnable stream. Asynchronous work (copies, remote stores and arrivals,
//! CLC responses, MMA results) is queued by due step; a latency of 0
//! applies it inline.

mod exec;
mod fuzz;
mod race;
mod trace;
mod value;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use exec::simulate;
pub use fuzz::{fuzz, fuzz_config, FuzzReport};
pub use race::{BarrierClock, Race, RaceDetector, RaceKind, VClock};
pub use trace::{escape, render_trace, Summary, TraceEvent};
pub use value::Value;

use crate::ir::DEFAULT_SMEM_CAPACITY;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    RoundRobin,
    SeededRandom,
}

impl Scheduler {
    pub fn token(self) -> &'static str {
        match self {
            Scheduler::RoundRobin => "round_robin",
            Scheduler::SeededRandom => "seeded_random",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "round_robin" => Some(Scheduler::RoundRobin),
            "seeded_random" => Some(Scheduler::SeededRandom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub scheduler: Scheduler,
    pub async_copy_latency: u64,
    pub clc_latency: u64,
    pub remote_arrive_delay: u64,
    pub mma_latency: u64,
    pub shared_capacity_bytes: usize,
    pub race_detector: bool,
    /// Turn the first detected race into a fault.
    pub strict: bool,
    pub record_trace: bool,
    pub max_steps: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            scheduler: Scheduler::RoundRobin,
            async_copy_latency: 2,
            clc_latency: 3,
            remote_arrive_delay: 1,
            mma_latency: 2,
            shared_capacity_bytes: DEFAULT_SMEM_CAPACITY,
            race_detector: true,
            strict: false,
            record_trace: true,
            max_steps: 5_000_000,
        }
    }
}

impl SimConfig {
    pub fn seeded(seed: u64) -> Self {
        SimConfig {
            seed,
            scheduler: Scheduler::SeededRandom,
            ..SimConfig::default()
        }
    }
}

/// A stream that was still blocked at quiescence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedTask {
    pub cta: usize,
    pub task: String,
    pub on: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimFault {
    Deadlock {
        blocked: Vec<BlockedTask>,
    },
    RaceDetected(Race),
    CollectiveMismatch {
        cluster: usize,
        group: Vec<i64>,
        missing: Vec<i64>,
        detail: String,
    },
    CapacityExceeded {
        bytes: usize,
        capacity: usize,
    },
    StepLimit {
        steps: u64,
    },
    Runtime {
        cta: usize,
        task: String,
        line: u32,
        message: String,
    },
}

impl fmt::Display for SimFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimFault::Deadlock { blocked } => {
                write!(f, "deadlock: ")?;
                for (i, b) in blocked.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "cta {} {} blocked on {}", b.cta, b.task, b.on)?;
                }
                Ok(())
            }
            SimFault::RaceDetected(r) => write!(f, "race detected: {r}"),
            SimFault::CollectiveMismatch {
                cluster,
                group,
                missing,
                detail,
            } => {
                write!(f, "collective mismatch in cluster {cluster} group {group:?}")?;
                if !missing.is_empty() {
                    write!(f, ": missing ranks {missing:?}")?;
                }
                if !detail.is_empty() {
                    write!(f, ": {detail}")?;
                }
                Ok(())
            }
            SimFault::CapacityExceeded { bytes, capacity } => {
                write!(f, "shared memory capacity exceeded: {bytes} bytes > {capacity}")
            }
            SimFault::StepLimit { steps } => write!(f, "step limit of {steps} reached"),
            SimFault::Runtime {
                cta,
                task,
                line,
                message,
            } => write!(f, "runtime fault in cta {cta} {task} at line {line}: {message}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub outputs: BTreeMap<String, Tensor>,
    pub trace: Vec<TraceEvent>,
    pub summary: Summary,
    pub races: Vec<Race>,
    /// tensor → per-element global load counts.
    pub load_counts: BTreeMap<String, Vec<u32>>,
}

impl SimResult {
    pub fn render_trace(&self) -> String {
        render_trace(&self.trace, &self.summary)
    }
}

/// A fault together with everything recorded up to it.
#[derive(Debug, Clone)]
pub struct SimError {
    pub fault: SimFault,
    pub trace: Vec<TraceEvent>,
    pub summary: Summary,
    pub races: Vec<Race>,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fault.fmt(f)
    }
}

#[cfg(test)]
mod tests;
