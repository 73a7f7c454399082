//! Materializes operation-implied layout constraints as `require_layout`
//! markers placed immediately before the demanding instruction.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::lattice::{LayoutEncoding, MmaRole, Priority};
use crate::ir::{Attr, Inst, KernelProgram, Opcode, Operand};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutOptions {
    /// Heuristic default for async-copy destinations; `None` disables it.
    pub async_copy_default: Option<LayoutEncoding>,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            async_copy_default: Some(LayoutEncoding::Swizzled(128)),
        }
    }
}

pub fn marker(value: Operand, enc: LayoutEncoding, pri: Priority, line: u32) -> Inst {
    Inst {
        dst: None,
        op: Opcode::RequireLayout,
        args: vec![value],
        attrs: vec![
            Attr {
                name: "layout".to_string(),
                values: vec![Operand::Ident(enc.token().to_string())],
            },
            Attr {
                name: "priority".to_string(),
                values: vec![Operand::Ident(pri.token().to_string())],
            },
        ],
        body: Vec::new(),
        line,
    }
}

fn demands(inst: &Inst, opts: &LayoutOptions) -> Vec<(Operand, LayoutEncoding, Priority)> {
    let a = &inst.args;
    match inst.op {
        op if op.is_dot_like() && a.len() >= 2 => vec![
            (a[0].clone(), LayoutEncoding::MmaOperand(MmaRole::A), Priority::OperationRequired),
            (a[1].clone(), LayoutEncoding::MmaOperand(MmaRole::B), Priority::OperationRequired),
        ],
        Opcode::AsyncCopy if a.len() >= 3 => match opts.async_copy_default {
            Some(enc) => vec![(a[a.len() - 2].clone(), enc, Priority::HeuristicDefault)],
            None => vec![],
        },
        _ => vec![],
    }
}

fn block(insts: &[Inst], opts: &LayoutOptions) -> Vec<Inst> {
    let mut out: Vec<Inst> = Vec::with_capacity(insts.len());
    for inst in insts {
        let run_start = out
            .iter()
            .rposition(|i| i.op != Opcode::RequireLayout)
            .map_or(0, |i| i + 1);
        for (v, enc, pri) in demands(inst, opts) {
            let m = marker(v, enc, pri, inst.line);
            if !out[run_start..].contains(&m) {
                out.push(m);
            }
        }
        let mut inst = inst.clone();
        for b in inst.body.iter_mut() {
            *b = block(b, opts);
        }
        out.push(inst);
    }
    out
}

/// Inserts one marker per demanded operand. Markers already present in the
/// run directly before the consumer are not duplicated, so the pass is
/// idempotent.
pub fn insert_constraints(p: &KernelProgram, opts: &LayoutOptions) -> KernelProgram {
    let mut q = p.clone();
    q.prologue = block(&p.prologue, opts);
    for t in q.tasks.iter_mut() {
        t.body = block(&t.body, opts);
    }
    q
}
