use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::*;

fn dims(v: &[impl fmt::Display]) -> String {
    let mut s = String::new();
    for (i, d) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{d}");
    }
    s
}

fn inst_line(out: &mut String, inst: &Inst, depth: usize) {
    let pad = "  ".repeat(depth);
    out.push_str(&pad);
    match inst.op {
        Opcode::For => {
            let iv = inst.dst.as_deref().unwrap_or("_");
            let _ = write!(out, "for %{iv} = {} to {}", inst.args[0], inst.args[1]);
            if inst.args.get(2) != Some(&Operand::Int(1)) {
                if let Some(step) = inst.args.get(2) {
                    let _ = write!(out, " step {step}");
                }
            }
            out.push_str(" {\n");
            block(out, &inst.body[0], depth + 1);
            out.push_str(&pad);
            out.push_str("}\n");
        }
        Opcode::While | Opcode::If => {
            let _ = writeln!(out, "{} {} {{", inst.op.name(), inst.args[0]);
            block(out, &inst.body[0], depth + 1);
            out.push_str(&pad);
            out.push('}');
            if inst.op == Opcode::If && inst.body.get(1).is_some_and(|b| !b.is_empty()) {
                out.push_str(" else {\n");
                block(out, &inst.body[1], depth + 1);
                out.push_str(&pad);
                out.push('}');
            }
            out.push('\n');
        }
        _ => {
            if let Some(d) = &inst.dst {
                let _ = write!(out, "%{d} = ");
            }
            out.push_str(inst.op.name());
            for a in &inst.args {
                let _ = write!(out, " {a}");
            }
            for a in &inst.attrs {
                let _ = write!(out, " {}({})", a.name, dims(&a.values));
            }
            out.push('\n');
        }
    }
}

fn block(out: &mut String, insts: &[Inst], depth: usize) {
    for inst in insts {
        inst_line(out, inst, depth);
    }
}

/// Prints the canonical text of `p`. The first line records `stage`.
pub fn print_ir(p: &KernelProgram, stage: Stage) -> String {
    let mut out = format!("// stage: {}\n", stage.tag());
    let _ = writeln!(
        out,
        "kernel {} grid({}) cluster({}) warps({})",
        p.name,
        dims(&p.grid),
        dims(&p.cluster),
        p.num_warps
    );
    if !p.params.is_empty() {
        out.push('\n');
    }
    for prm in &p.params {
        match &prm.kind {
            ParamKind::Tensor { shape, output } => {
                let _ = write!(out, "param {} tensor({})", prm.name, dims(shape));
                if *output {
                    out.push_str(" out");
                }
                out.push('\n');
            }
            ParamKind::F32(x) => {
                let _ = writeln!(out, "param {} f32({x:?})", prm.name);
            }
            ParamKind::I32(i) => {
                let _ = writeln!(out, "param {} i32({i})", prm.name);
            }
        }
    }
    if !p.buffers.is_empty() || !p.barriers.is_empty() {
        out.push('\n');
    }
    for b in &p.buffers {
        let _ = write!(
            out,
            "buffer {} shape({}) f32 stages({}) storage({})",
            b.name,
            dims(&b.shape),
            b.stages,
            b.storage.token()
        );
        if let Some(l) = b.layout {
            let _ = write!(out, " layout({l})");
        }
        if let Some(r) = b.resolved {
            let _ = write!(out, " resolved({r})");
        }
        out.push('\n');
    }
    for b in &p.barriers {
        let _ = writeln!(out, "barrier {} count({}) arrive({})", b.name, b.count, b.arrive);
    }
    if !p.prologue.is_empty() {
        out.push('\n');
        block(&mut out, &p.prologue, 0);
    }
    for t in &p.tasks {
        out.push('\n');
        match t.kind {
            TaskKind::Default => out.push_str("task default"),
            TaskKind::Explicit { warps } => {
                let _ = write!(out, "task warps({warps})");
                if t.replicate != 1 {
                    let _ = write!(out, " replicate({})", t.replicate);
                }
            }
        }
        if let Some(r) = t.registers {
            let _ = write!(out, " registers({r})");
        }
        out.push_str(" {\n");
        block(&mut out, &t.body, 1);
        out.push_str("}\n");
    }
    out
}
