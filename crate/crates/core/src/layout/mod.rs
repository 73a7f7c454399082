//! Layout-encoding lattice and the constraint propagation pass.

mod graph;
mod insert;
mod lattice;
mod propagate;
mod resolve;


use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use graph::{analyze, Analysis, Classes, Constraint, Edge, Node};
pub use insert::{insert_constraints, marker, LayoutOptions};
pub use lattice::*;
pub use propagate::{propagate_backward, propagate_forward, propagate_with_order, seed, Facts};
pub use resolve::{check_soundness, resolve, Conversion, ResolvedProgram};

use crate::diag::Diagnostic;
use crate::ir::KernelProgram;

/// Intermediate products of one layout run, kept for stage dumps.
#[derive(Debug, Clone)]
pub struct LayoutRun {
    pub constrained: KernelProgram,
    pub analysis: Analysis,
    pub backward: Facts,
    pub forward: Facts,
}

/// Insertion plus both propagation passes.
pub fn propagate(p: &KernelProgram, opts: &LayoutOptions) -> LayoutRun {
    let constrained = insert_constraints(p, opts);
    let analysis = analyze(&constrained);
    let backward = propagate_backward(&analysis);
    let forward = propagate_forward(&analysis, &backward);
    LayoutRun {
        constrained,
        analysis,
        backward,
        forward,
    }
}

/// The whole pass: insert, propagate, resolve.
pub fn run_layout(p: &KernelProgram, opts: &LayoutOptions) -> Result<ResolvedProgram, Vec<Diagnostic>> {
    let run = propagate(p, opts);
    resolve(&run.constrained, &run.analysis)
}

/// One `// fact` comment line per node that carries information.
pub fn dump_facts(facts: &Facts) -> String {
    let mut out = String::new();
    for (n, f) in facts {
        if !f.provenance.is_empty() {
            out.push_str(&format!("// fact {n}: {f}\n"));
        }
    }
    out
}
