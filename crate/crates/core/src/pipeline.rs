//! The compile pipeline: parse, validate, layout constraints, backward and
//! forward propagation, resolve, cluster legalization.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diag::{has_errors, Diagnostic};
use crate::ir::{parse_kernel, print_ir, validate_with_capacity, KernelProgram, ParseError, Stage, DEFAULT_SMEM_CAPACITY};
use crate::layout::{check_soundness, dump_facts, propagate, resolve, LayoutOptions, ResolvedProgram};
use crate::sync::legalize_cluster;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub layout: LayoutOptions,
    pub shared_capacity_bytes: usize,
    /// Skip the cluster legality pass (the `legalize` dump then equals
    /// `resolve`).
    pub skip_legalize: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            layout: LayoutOptions::default(),
            shared_capacity_bytes: DEFAULT_SMEM_CAPACITY,
            skip_legalize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub resolved: ResolvedProgram,
    /// Canonical IR after each stage that ran.
    pub dumps: BTreeMap<Stage, String>,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum CompileError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("{} diagnostic(s) after stage {}", .diagnostics.len(), .stage.tag())]
    Rejected {
        stage: Stage,
        diagnostics: Vec<Diagnostic>,
        /// Dumps of the stages that completed.
        dumps: BTreeMap<Stage, String>,
    },
}

impl CompileError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            CompileError::Parse(_) => &[],
            CompileError::Rejected { diagnostics, .. } => diagnostics,
        }
    }
}

pub fn compile(src: &str, opts: &PipelineOptions) -> Result<Compiled, CompileError> {
    compile_program(parse_kernel(src)?, opts)
}

pub fn compile_program(p: KernelProgram, opts: &PipelineOptions) -> Result<Compiled, CompileError> {
    let mut dumps = BTreeMap::new();
    dumps.insert(Stage::Parsed, print_ir(&p, Stage::Parsed));
    let report = validate_with_capacity(&p, opts.shared_capacity_bytes);
    let mut warnings: Vec<Diagnostic> = report.diagnostics.iter().filter(|d| !d.is_error()).cloned().collect();
    if has_errors(&report.diagnostics) {
        return Err(CompileError::Rejected {
            stage: Stage::Validated,
            diagnostics: report.diagnostics,
            dumps,
        });
    }
    dumps.insert(Stage::Validated, print_ir(&p, Stage::Validated));

    let run = propagate(&p, &opts.layout);
    dumps.insert(Stage::Constraints, print_ir(&run.constrained, Stage::Constraints));
    let mut b = print_ir(&run.constrained, Stage::Backward);
    b.push_str(&dump_facts(&run.backward));
    dumps.insert(Stage::Backward, b);
    let mut f = print_ir(&run.constrained, Stage::Forward);
    f.push_str(&dump_facts(&run.forward));
    dumps.insert(Stage::Forward, f);

    let mut resolved = match resolve(&run.constrained, &run.analysis) {
        Ok(r) => r,
        Err(diagnostics) => {
            return Err(CompileError::Rejected {
                stage: Stage::Resolve,
                diagnostics,
                dumps,
            })
        }
    };
    let unsound = check_soundness(&resolved);
    if !unsound.is_empty() {
        return Err(CompileError::Rejected {
            stage: Stage::Resolve,
            diagnostics: unsound,
            dumps,
        });
    }
    warnings.extend(resolved.warnings.iter().cloned());
    dumps.insert(Stage::Resolve, print_ir(&resolved.program, Stage::Resolve));

    if !opts.skip_legalize {
        match legalize_cluster(&resolved.program) {
            Ok(q) => resolved.program = q,
            Err(diagnostics) => {
                return Err(CompileError::Rejected {
                    stage: Stage::Legalize,
                    diagnostics,
                    dumps,
                })
            }
        }
    }
    dumps.insert(Stage::Legalize, print_ir(&resolved.program, Stage::Legalize));
    Ok(Compiled {
        resolved,
        dumps,
        warnings,
    })
}
