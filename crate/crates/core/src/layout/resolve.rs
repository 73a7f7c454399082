//! Priority-based resolution of layout constraints per connected class.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Analysis, Classes, Node};
use super::lattice::{LayoutEncoding, MmaRole, Priority};
use crate::diag::{Diagnostic, Site};
use crate::ir::{infer_types, Attr, Inst, KernelProgram, Opcode, Operand, Scope};

/// A `layout_convert` inserted for a defeated register-level constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    /// Id of the `require_layout` marker in the unconverted program.
    pub marker: usize,
    pub scope: Scope,
    pub value: String,
    pub converted: String,
    pub encoding: LayoutEncoding,
}

/// A program whose allocations carry resolved encodings.
#[derive(Debug, Clone)]
pub struct ResolvedProgram {
    pub program: KernelProgram,
    pub buffer_encodings: BTreeMap<String, LayoutEncoding>,
    pub value_encodings: BTreeMap<Node, LayoutEncoding>,
    pub conversions: Vec<Conversion>,
    pub warnings: Vec<Diagnostic>,
}

impl ResolvedProgram {
    /// Wraps a program without running the layout pass; every buffer is
    /// treated as row-major.
    pub fn unresolved(program: KernelProgram) -> Self {
        ResolvedProgram {
            program,
            buffer_encodings: BTreeMap::new(),
            value_encodings: BTreeMap::new(),
            conversions: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Encoding of a buffer; unconstrained buffers are row-major.
    pub fn encoding_of(&self, buf: &str) -> LayoutEncoding {
        self.buffer_encodings
            .get(buf)
            .copied()
            .unwrap_or(LayoutEncoding::RowMajor)
    }

    fn value_encoding(&self, scope: Scope, reg: &str) -> Option<LayoutEncoding> {
        self.value_encodings
            .get(&Node::Reg(scope, reg.to_string()))
            .or_else(|| self.value_encodings.get(&Node::Reg(Scope::Prologue, reg.to_string())))
            .copied()
    }
}

fn site_note(c: &super::graph::Constraint) -> (String, Site) {
    (
        format!("{} ({}) from {}", c.encoding, c.priority.token(), c.origin),
        c.site,
    )
}

/// Transpose parity of every node relative to the first node of its class.
fn parities(a: &Analysis) -> BTreeMap<Node, bool> {
    let mut adj: BTreeMap<&Node, Vec<(&Node, bool)>> = BTreeMap::new();
    for e in &a.edges {
        adj.entry(&e.from).or_default().push((&e.to, e.flip));
        adj.entry(&e.to).or_default().push((&e.from, e.flip));
    }
    for (x, y, _) in &a.aliases {
        if let (Some(x), Some(y)) = (a.nodes.get(&Node::Buf(x.clone())), a.nodes.get(&Node::Buf(y.clone()))) {
            adj.entry(x).or_default().push((y, false));
            adj.entry(y).or_default().push((x, false));
        }
    }
    let mut par: BTreeMap<Node, bool> = BTreeMap::new();
    for start in &a.nodes {
        if par.contains_key(start) {
            continue;
        }
        par.insert(start.clone(), false);
        let mut q = VecDeque::from([start]);
        while let Some(n) = q.pop_front() {
            let p = par[n];
            for &(m, flip) in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if !par.contains_key(m) {
                    par.insert(m.clone(), p ^ flip);
                    q.push_back(m);
                }
            }
        }
    }
    par
}

fn in_frame(enc: LayoutEncoding, parity: bool) -> LayoutEncoding {
    if parity {
        enc.transposed()
    } else {
        enc
    }
}

/// Picks one encoding per class. Fails with L001 on a tie at the top
/// priority and with L002 when an alias group needs two required encodings.
pub fn resolve(p: &KernelProgram, a: &Analysis) -> Result<ResolvedProgram, Vec<Diagnostic>> {
    let mut classes = Classes::new(a);
    let par = parities(a);
    let mut by_class: BTreeMap<usize, Vec<&super::graph::Constraint>> = BTreeMap::new();
    for c in &a.constraints {
        if let Some(root) = classes.find(&c.node) {
            by_class.entry(root).or_default().push(c);
        }
    }
    let mut members: BTreeMap<usize, Vec<&Node>> = BTreeMap::new();
    for n in &a.nodes {
        if let Some(root) = classes.find(n) {
            members.entry(root).or_default().push(n);
        }
    }
    let mut aliased: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (x, y, _) in &a.aliases {
        if let Some(root) = classes.find(&Node::Buf(x.clone())) {
            let set = aliased.entry(root).or_default();
            set.insert(x.clone());
            set.insert(y.clone());
        }
    }

    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut buffer_encodings = BTreeMap::new();
    let mut value_encodings = BTreeMap::new();
    let mut to_convert: Vec<&super::graph::Constraint> = Vec::new();

    for (root, cs) in &by_class {
        let frame = |c: &super::graph::Constraint| in_frame(c.encoding, par[&c.node]);
        if let Some(group) = aliased.get(root) {
            let required: BTreeSet<LayoutEncoding> = cs
                .iter()
                .filter(|c| c.priority == Priority::OperationRequired)
                .map(|c| frame(c))
                .collect();
            if required.len() > 1 {
                let names: Vec<String> = group.iter().map(|b| format!("@{b}")).collect();
                let mut d = Diagnostic::error("L002", "conflicting layout requirements");
                d = d.with_note(format!("alias group {{{}}} must share one encoding", names.join(", ")), Site::default());
                for c in cs.iter().filter(|c| c.priority == Priority::OperationRequired) {
                    let (m, s) = site_note(c);
                    d = d.with_note(m, s);
                }
                if let Some(first) = cs.first() {
                    d.site = first.site;
                }
                errors.push(d);
                continue;
            }
        }
        let top = cs.iter().map(|c| c.priority).max().expect("non-empty class");
        let winners: BTreeSet<LayoutEncoding> =
            cs.iter().filter(|c| c.priority == top).map(|c| frame(c)).collect();
        if winners.len() > 1 {
            let mut d = Diagnostic::error("L001", "conflicting layout requirements");
            for c in cs.iter().filter(|c| c.priority == top) {
                let (m, s) = site_note(c);
                d = d.with_note(m, s);
            }
            d.site = cs.iter().find(|c| c.priority == top).map(|c| c.site).unwrap_or_default();
            errors.push(d);
            continue;
        }
        let w = *winners.iter().next().expect("one winner");
        for n in &members[root] {
            let e = in_frame(w, par[*n]);
            match n {
                Node::Buf(b) => {
                    buffer_encodings.insert(b.clone(), e);
                }
                Node::Reg(..) => {
                    value_encodings.insert((*n).clone(), e);
                }
            }
        }
        for c in cs.iter().filter(|c| frame(c) != w) {
            match c.priority {
                Priority::HeuristicDefault => {}
                _ if c.convertible => to_convert.push(c),
                _ => {
                    let mut d = Diagnostic::warning(
                        "W001",
                        format!(
                            "layout {} requested on {} is overridden by {}; storage cannot be converted",
                            c.encoding,
                            c.node,
                            in_frame(w, par[&c.node])
                        ),
                    );
                    d.site = c.site;
                    warnings.push(d);
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let mut program = p.clone();
    for b in program.buffers.iter_mut() {
        b.resolved = buffer_encodings.get(&b.name).copied();
    }
    let conversions = plan_conversions(p, &to_convert);
    apply_conversions(&mut program, &conversions);
    for cv in &conversions {
        value_encodings.insert(Node::Reg(cv.scope, cv.converted.clone()), cv.encoding);
    }
    Ok(ResolvedProgram {
        program,
        buffer_encodings,
        value_encodings,
        conversions,
        warnings,
    })
}

fn plan_conversions(p: &KernelProgram, cs: &[&super::graph::Constraint]) -> Vec<Conversion> {
    let types = infer_types(p);
    let mut taken: BTreeSet<(Scope, String)> = types.keys().cloned().collect();
    let mut out = Vec::new();
    let mut sorted: Vec<_> = cs.to_vec();
    sorted.sort_by_key(|c| c.site.inst);
    for c in sorted {
        let (Node::Reg(scope, reg), Some(marker)) = (&c.node, c.site.inst) else {
            continue;
        };
        let mut n = 0;
        let converted = loop {
            let cand = format!("{reg}_cvt{n}");
            if !taken.contains(&(*scope, cand.clone())) && !taken.contains(&(Scope::Prologue, cand.clone())) {
                break cand;
            }
            n += 1;
        };
        taken.insert((*scope, converted.clone()));
        out.push(Conversion {
            marker,
            scope: *scope,
            value: reg.clone(),
            converted,
            encoding: c.encoding,
        });
    }
    out
}

fn convert_inst(cv: &Conversion, line: u32) -> Inst {
    Inst {
        dst: Some(cv.converted.clone()),
        op: Opcode::LayoutConvert,
        args: vec![Operand::Reg(cv.value.clone())],
        attrs: vec![Attr {
            name: "layout".to_string(),
            values: vec![Operand::Ident(cv.encoding.token().to_string())],
        }],
        body: Vec::new(),
        line,
    }
}

fn marker_on<'a>(inst: &'a Inst, reg: &str) -> Option<&'a str> {
    (inst.op == Opcode::RequireLayout && inst.args.first().and_then(Operand::reg) == Some(reg))
        .then(|| inst.attr_ident("layout").unwrap_or(""))
}

/// Ops whose result inherits the operand's layout. Rewiring one of them
/// would drag downstream constraints onto the converted value.
fn forwards_layout(op: Opcode) -> bool {
    matches!(
        op,
        Opcode::Mov
            | Opcode::View
            | Opcode::Transpose
            | Opcode::LocalView
            | Opcode::RemoteView
            | Opcode::LocalLoad
            | Opcode::LocalStore
            | Opcode::AsyncRemoteStore
    )
}

/// Points the first consumer after the marker at the converted value,
/// unless that consumer pins the original value to another encoding.
fn rewrite_consumer(block: &mut [Inst], from: usize, cv: &Conversion) {
    let enc = cv.encoding.token();
    let mut pinned = false;
    for inst in block[from..].iter_mut() {
        if let Some(e) = marker_on(inst, &cv.value) {
            pinned |= e != enc;
            continue;
        }
        if inst.op == Opcode::RequireLayout {
            continue;
        }
        if inst.reads().any(|r| r == cv.value) {
            if !pinned && !forwards_layout(inst.op) {
                for arg in inst.args.iter_mut() {
                    if arg.reg() == Some(cv.value.as_str()) {
                        *arg = Operand::Reg(cv.converted.clone());
                    }
                }
            }
            return;
        }
        if inst.dst.as_deref() == Some(cv.value.as_str()) {
            return;
        }
        pinned = false;
    }
}

fn convert_block(insts: &[Inst], id: &mut usize, by_marker: &BTreeMap<usize, &Conversion>) -> Vec<Inst> {
    let mut out = Vec::with_capacity(insts.len());
    for inst in insts {
        let my_id = *id;
        *id += 1;
        let mut inst = inst.clone();
        let nested: Vec<Vec<Inst>> = inst.body.iter().map(|b| convert_block(b, id, by_marker)).collect();
        inst.body = nested;
        if let Some(cv) = by_marker.get(&my_id) {
            out.push(convert_inst(cv, inst.line));
            inst.args[0] = Operand::Reg(cv.converted.clone());
        }
        out.push(inst);
    }
    out
}

fn apply_conversions(p: &mut KernelProgram, cvs: &[Conversion]) {
    if cvs.is_empty() {
        return;
    }
    let by_marker: BTreeMap<usize, &Conversion> = cvs.iter().map(|c| (c.marker, c)).collect();
    let mut id = 0;
    p.prologue = convert_block(&p.prologue, &mut id, &by_marker);
    for t in p.tasks.iter_mut() {
        t.body = convert_block(&t.body, &mut id, &by_marker);
    }
    fn fix(block: &mut Vec<Inst>, cvs: &[Conversion]) {
        for i in 0..block.len() {
            if block[i].op == Opcode::LayoutConvert {
                if let Some(cv) = cvs.iter().find(|c| block[i].dst.as_deref() == Some(c.converted.as_str())) {
                    rewrite_consumer(block, i + 2, cv);
                }
            }
            for b in block[i].body.iter_mut() {
                fix(b, cvs);
            }
        }
    }
    fix(&mut p.prologue, cvs);
    for t in p.tasks.iter_mut() {
        fix(&mut t.body, cvs);
    }
}

/// Linear scan: every dot operand must arrive in the MMA encoding of its
/// role.
pub fn check_soundness(r: &ResolvedProgram) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut check = |scope: Scope, id: usize, inst: &Inst| {
        if !inst.op.is_dot_like() {
            return;
        }
        for (k, role) in [(0, MmaRole::A), (1, MmaRole::B)] {
            let Some(reg) = inst.args.get(k).and_then(Operand::reg) else {
                continue;
            };
            let got = r.value_encoding(scope, reg);
            if got != Some(LayoutEncoding::MmaOperand(role)) {
                out.push(
                    Diagnostic::error(
                        "L003",
                        format!(
                            "{} operand %{reg} arrives as {} instead of {}",
                            inst.op.name(),
                            got.map_or("unresolved".to_string(), |e| e.token().to_string()),
                            LayoutEncoding::MmaOperand(role)
                        ),
                    )
                    .at(Some(id), inst.line),
                );
            }
        }
    };
    r.program.walk(|id, task, inst| {
        let scope = task.map_or(Scope::Prologue, Scope::Task);
        check(scope, id, inst);
    });
    out
}
