//! Kernel IR: declarations, task regions and instructions.
//!
//! The textual form is line oriented:
//!
//! ```text
//! kernel add_one grid(1 1 1) cluster(1 1 1) warps(4)
//! param x tensor(64)
//! param y tensor(64) out
//! %t = load @x 0 shape(64)
//! %u = add %t 1.0
//! store @y 0 %u
//! ```
//!
//! The full grammar is documented in the repository README.

mod lexer;
mod opcode;
mod parse;
mod print;
mod validate;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::layout::LayoutEncoding;

pub use opcode::Opcode;
pub use parse::{parse_kernel, ParseError};
pub use print::print_ir;
pub use validate::{
    infer_types, validate, validate_with_capacity, Scope, Ty, TypeMap, ValidationReport,
    CLC_SLOT_BYTES, DEFAULT_SMEM_CAPACITY,
};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelProgram {
    pub name: String,
    pub grid: [u32; 3],
    pub cluster: [u32; 3],
    pub num_warps: u32,
    pub params: Vec<Param>,
    pub buffers: Vec<BufferDecl>,
    pub barriers: Vec<BarrierDecl>,
    pub prologue: Vec<Inst>,
    pub tasks: Vec<TaskRegion>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Tensor { shape: Vec<usize>, output: bool },
    F32(f32),
    I32(i64),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub line: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Smem,
    SmemCluster,
}

impl Storage {
    pub fn token(self) -> &'static str {
        match self {
            Storage::Smem => "smem",
            Storage::SmemCluster => "smem_cluster",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BufferDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub stages: usize,
    pub storage: Storage,
    /// User-requested encoding.
    pub layout: Option<LayoutEncoding>,
    /// Encoding chosen by the layout pass.
    pub resolved: Option<LayoutEncoding>,
    pub line: u32,
}

impl BufferDecl {
    pub fn stage_bytes(&self) -> usize {
        self.shape.iter().product::<usize>() * 4
    }

    pub fn total_bytes(&self) -> usize {
        self.stage_bytes() * self.stages
    }
}

#[derive(Debug, Clone)]
pub struct BarrierDecl {
    pub name: String,
    pub count: usize,
    pub arrive: u32,
    pub line: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Default,
    Explicit { warps: u32 },
}

#[derive(Debug, Clone)]
pub struct TaskRegion {
    pub kind: TaskKind,
    pub replicate: u32,
    /// Recorded, no simulation effect.
    pub registers: Option<u32>,
    pub body: Vec<Inst>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Reg(String),
    Sym(String),
    Int(i64),
    Float(f32),
    Ident(String),
}

impl Operand {
    pub fn reg(&self) -> Option<&str> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn sym(&self) -> Option<&str> {
        match self {
            Operand::Sym(s) => Some(s),
            _ => None,
        }
    }

    pub fn int(&self) -> Option<i64> {
        match self {
            Operand::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn ident(&self) -> Option<&str> {
        match self {
            Operand::Ident(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "%{r}"),
            Operand::Sym(s) => write!(f, "@{s}"),
            Operand::Int(i) => write!(f, "{i}"),
            Operand::Float(x) => write!(f, "{x:?}"),
            Operand::Ident(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attr {
    pub name: String,
    pub values: Vec<Operand>,
}

/// One instruction. Control flow (`for`, `while`, `if`) carries nested
/// blocks in `body`: one block for loops, then/else for `if`.
#[derive(Debug, Clone)]
pub struct Inst {
    pub dst: Option<String>,
    pub op: Opcode,
    pub args: Vec<Operand>,
    pub attrs: Vec<Attr>,
    pub body: Vec<Vec<Inst>>,
    pub line: u32,
}

impl Inst {
    pub fn new(op: Opcode) -> Self {
        Inst {
            dst: None,
            op,
            args: Vec::new(),
            attrs: Vec::new(),
            body: Vec::new(),
            line: 0,
        }
    }

    pub fn attr(&self, name: &str) -> Option<&[Operand]> {
        self.attrs
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.values.as_slice())
    }

    pub fn attr_int(&self, name: &str) -> Option<i64> {
        self.attr(name).and_then(|v| v.first()).and_then(Operand::int)
    }

    pub fn attr_ints(&self, name: &str) -> Option<Vec<i64>> {
        self.attr(name).map(|v| v.iter().filter_map(Operand::int).collect())
    }

    pub fn attr_ident(&self, name: &str) -> Option<&str> {
        self.attr(name).and_then(|v| v.first()).and_then(Operand::ident)
    }

    /// Registers read by this instruction (not including nested blocks).
    pub fn reads(&self) -> impl Iterator<Item = &str> {
        self.args
            .iter()
            .chain(self.attrs.iter().flat_map(|a| a.values.iter()))
            .filter_map(Operand::reg)
    }
}

// Source lines are bookkeeping only.
impl PartialEq for Inst {
    fn eq(&self, o: &Self) -> bool {
        self.dst == o.dst
            && self.op == o.op
            && self.args == o.args
            && self.attrs == o.attrs
            && self.body == o.body
    }
}

impl PartialEq for Param {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name && self.kind == o.kind
    }
}

impl PartialEq for BufferDecl {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name
            && self.shape == o.shape
            && self.stages == o.stages
            && self.storage == o.storage
            && self.layout == o.layout
            && self.resolved == o.resolved
    }
}

impl PartialEq for BarrierDecl {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name && self.count == o.count && self.arrive == o.arrive
    }
}

impl PartialEq for TaskRegion {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.replicate == o.replicate
            && self.registers == o.registers
            && self.body == o.body
    }
}

/// Pipeline stage tag printed in IR dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Parsed,
    Validated,
    Constraints,
    Backward,
    Forward,
    Resolve,
    Legalize,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Parsed,
        Stage::Validated,
        Stage::Constraints,
        Stage::Backward,
        Stage::Forward,
        Stage::Resolve,
        Stage::Legalize,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Stage::Parsed => "parsed",
            Stage::Validated => "validated",
            Stage::Constraints => "constraints",
            Stage::Backward => "backward",
            Stage::Forward => "forward",
            Stage::Resolve => "resolve",
            Stage::Legalize => "legalize",
        }
    }

    pub fn from_tag(s: &str) -> Option<Stage> {
        Stage::ALL.iter().copied().find(|st| st.tag() == s)
    }
}

/// A warp range `[start, end)` owned by one expanded task stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamInfo {
    pub task: usize,
    pub replica: u32,
    pub warps: core::ops::Range<u32>,
    pub label: String,
}

impl KernelProgram {
    pub fn cluster_size(&self) -> u32 {
        self.cluster.iter().product()
    }

    pub fn grid_ctas(&self) -> u32 {
        self.grid.iter().product()
    }

    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn barrier(&self, name: &str) -> Option<&BarrierDecl> {
        self.barriers.iter().find(|b| b.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Expands replicated regions into concrete streams and assigns warps:
    /// explicit regions take consecutive ranges, the default region gets
    /// the remainder.
    pub fn streams(&self) -> Vec<StreamInfo> {
        use alloc::format;
        let mut next = 0u32;
        let mut out = Vec::new();
        let explicit_total: u32 = self
            .tasks
            .iter()
            .map(|t| match t.kind {
                TaskKind::Explicit { warps } => warps * t.replicate,
                TaskKind::Default => 0,
            })
            .sum();
        let default_warps = self.num_warps.saturating_sub(explicit_total);
        for (ti, t) in self.tasks.iter().enumerate() {
            for r in 0..t.replicate {
                let warps = match t.kind {
                    TaskKind::Explicit { warps } => {
                        next += warps;
                        next - warps..next
                    }
                    TaskKind::Default => explicit_total..explicit_total + default_warps,
                };
                let label = match (t.kind, t.replicate) {
                    (TaskKind::Default, _) => String::from("default"),
                    (_, 1) => format!("task{ti}"),
                    _ => format!("task{ti}.{r}"),
                };
                out.push(StreamInfo {
                    task: ti,
                    replica: r,
                    warps,
                    label,
                });
            }
        }
        out
    }

    /// Pre-order walk over every instruction, prologue first. The index
    /// passed to `f` is the instruction id used by diagnostics.
    pub fn walk(&self, mut f: impl FnMut(usize, Option<usize>, &Inst)) {
        fn go(insts: &[Inst], task: Option<usize>, id: &mut usize, f: &mut dyn FnMut(usize, Option<usize>, &Inst)) {
            for inst in insts {
                f(*id, task, inst);
                *id += 1;
                for block in &inst.body {
                    go(block, task, id, f);
                }
            }
        }
        let mut id = 0;
        go(&self.prologue, None, &mut id, &mut f);
        for (ti, t) in self.tasks.iter().enumerate() {
            go(&t.body, Some(ti), &mut id, &mut f);
        }
    }
}

#[cfg(test)]
mod tests;
