//! Structural validation and register type inference.
//!
//! Registers are typed flow-insensitively per scope: the prologue is one
//! scope and each task region is another that starts with a copy of the
//! prologue's registers plus `%replica_id`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::diag::{has_errors, Diagnostic};
use crate::tensor::broadcast_shapes;

/// Per-CTA shared-memory capacity used when none is configured.
pub const DEFAULT_SMEM_CAPACITY: usize = 232 * 1024;

/// Bytes of shared memory reserved per CLC pipeline stage.
pub const CLC_SLOT_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Prologue,
    Task(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Tile(Vec<usize>),
    Buf { buf: String, staged: bool, remote: bool },
    Bar { bar: String, indexed: bool, remote: bool },
    Ctx,
    Tensor(String),
}

impl Ty {
    fn is_scalar(&self) -> bool {
        matches!(self, Ty::Int | Ty::Float)
    }

    fn is_numeric(&self) -> bool {
        matches!(self, Ty::Int | Ty::Float | Ty::Tile(_))
    }

    fn describe(&self) -> String {
        match self {
            Ty::Int => "int".into(),
            Ty::Float => "f32".into(),
            Ty::Tile(s) => format!("tile{s:?}"),
            Ty::Buf { buf, .. } => format!("buffer view of @{buf}"),
            Ty::Bar { bar, .. } => format!("barrier @{bar}"),
            Ty::Ctx => "clc context".into(),
            Ty::Tensor(t) => format!("tensor @{t}"),
        }
    }
}

pub type TypeMap = BTreeMap<(Scope, String), Ty>;

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        !has_errors(&self.diagnostics)
    }
}

struct Checker<'p> {
    p: &'p KernelProgram,
    scope: Scope,
    scope_types: BTreeMap<String, Ty>,
    all: TypeMap,
    diags: Vec<Diagnostic>,
    inst_id: usize,
    line: u32,
    /// Accumulator type of the async dots seen in the current scope.
    async_acc: Option<Ty>,
}

impl<'p> Checker<'p> {
    fn error(&mut self, code: &'static str, msg: impl Into<String>) {
        let d = Diagnostic::error(code, msg).at(Some(self.inst_id), self.line);
        self.diags.push(d);
    }

    fn decl_error(&mut self, code: &'static str, msg: impl Into<String>, line: u32) {
        self.diags.push(Diagnostic::error(code, msg).at(None, line));
    }

    fn sym_ty(&self, s: &str) -> Option<Ty> {
        if self.p.buffer(s).is_some() {
            return Some(Ty::Buf {
                buf: s.to_string(),
                staged: false,
                remote: false,
            });
        }
        if self.p.barrier(s).is_some() {
            return Some(Ty::Bar {
                bar: s.to_string(),
                indexed: false,
                remote: false,
            });
        }
        self.p.param(s).map(|prm| match prm.kind {
            ParamKind::Tensor { .. } => Ty::Tensor(s.to_string()),
            ParamKind::F32(_) => Ty::Float,
            ParamKind::I32(_) => Ty::Int,
        })
    }

    fn ty(&mut self, op: &Operand) -> Option<Ty> {
        match op {
            Operand::Int(_) => Some(Ty::Int),
            Operand::Float(_) => Some(Ty::Float),
            Operand::Reg(r) => {
                let t = self.scope_types.get(r).cloned();
                if t.is_none() {
                    self.error("V002", format!("use of undefined register %{r}"));
                }
                t
            }
            Operand::Sym(s) => {
                let t = self.sym_ty(s);
                if t.is_none() {
                    self.error("V003", format!("reference to undeclared symbol @{s}"));
                }
                t
            }
            Operand::Ident(i) => {
                self.error("V001", format!("unexpected bare identifier `{i}`"));
                None
            }
        }
    }

    fn define(&mut self, name: &str, ty: Ty) {
        match self.scope_types.get(name) {
            Some(prev) if *prev != ty => {
                let msg = format!(
                    "%{name} redefined as {} (was {})",
                    ty.describe(),
                    prev.describe()
                );
                self.error("V014", msg);
            }
            Some(_) => {}
            None => {
                self.scope_types.insert(name.to_string(), ty.clone());
                self.all.insert((self.scope, name.to_string()), ty);
            }
        }
    }

    fn arity(&mut self, inst: &Inst, n: usize) -> bool {
        if inst.args.len() != n {
            let msg = format!(
                "{} takes {n} operand(s), found {}",
                inst.op.name(),
                inst.args.len()
            );
            self.error("V001", msg);
            false
        } else {
            true
        }
    }

    fn want_int(&mut self, op: &Operand, what: &str) {
        if let Some(t) = self.ty(op) {
            if t != Ty::Int {
                self.error("V004", format!("{what} must be an int, found {}", t.describe()));
            }
        }
    }

    fn want_tile(&mut self, op: &Operand, what: &str) -> Option<Vec<usize>> {
        match self.ty(op)? {
            Ty::Tile(s) => Some(s),
            t => {
                self.error("V004", format!("{what} must be a tile, found {}", t.describe()));
                None
            }
        }
    }

    fn want_buf(&mut self, op: &Operand, what: &str) -> Option<(String, bool, bool)> {
        match self.ty(op)? {
            Ty::Buf { buf, staged, remote } => Some((buf, staged, remote)),
            t => {
                self.error(
                    "V004",
                    format!("{what} must be a buffer view, found {}", t.describe()),
                );
                None
            }
        }
    }

    fn want_bar(&mut self, op: &Operand, what: &str) -> Option<bool> {
        match self.ty(op)? {
            Ty::Bar { remote, .. } => Some(remote),
            t => {
                self.error("V004", format!("{what} must be a barrier, found {}", t.describe()));
                None
            }
        }
    }

    fn want_tensor(&mut self, op: &Operand) -> Option<Vec<usize>> {
        match self.ty(op)? {
            Ty::Tensor(t) => match &self.p.param(&t)?.kind {
                ParamKind::Tensor { shape, .. } => Some(shape.clone()),
                _ => None,
            },
            t => {
                self.error(
                    "V004",
                    format!("expected a tensor parameter, found {}", t.describe()),
                );
                None
            }
        }
    }

    fn shape_attr(&mut self, inst: &Inst) -> Option<Vec<usize>> {
        match inst.attr("shape") {
            Some(v) if !v.is_empty() && v.iter().all(|x| matches!(x, Operand::Int(i) if *i > 0)) => {
                Some(v.iter().filter_map(Operand::int).map(|i| i as usize).collect())
            }
            _ => {
                let msg = format!("{} needs shape(<positive extents>)", inst.op.name());
                self.error("V001", msg);
                None
            }
        }
    }

    fn axis_attr(&mut self, inst: &Inst, rank: usize) -> Option<usize> {
        match inst.attr_int("axis") {
            Some(a) if a >= 0 && (a as usize) < rank => Some(a as usize),
            _ => {
                let msg = format!("{} needs axis(<0..{rank}>)", inst.op.name());
                self.error("V001", msg);
                None
            }
        }
    }

    fn literal_ranks(&mut self, vals: &[Operand], what: &str) -> Option<Vec<i64>> {
        let cs = self.p.cluster_size() as i64;
        let mut out = Vec::new();
        for v in vals {
            match v {
                Operand::Int(r) if (0..cs).contains(r) => out.push(*r),
                Operand::Int(r) => {
                    self.error(
                        "V010",
                        format!("{what} rank {r} outside cluster of size {cs}"),
                    );
                    return None;
                }
                _ => {
                    self.error("V001", format!("{what} ranks must be integer literals"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn check_rank_operand(&mut self, op: &Operand, what: &str) {
        if let Operand::Int(r) = op {
            let cs = self.p.cluster_size() as i64;
            if !(0..cs).contains(r) {
                self.error("V010", format!("{what} rank {r} outside cluster of size {cs}"));
            }
        } else {
            self.want_int(op, what);
        }
    }

    fn numeric(&mut self, op: &Operand) -> Option<Ty> {
        let t = self.ty(op)?;
        if t.is_numeric() {
            Some(t)
        } else {
            self.error("V004", format!("expected a number or tile, found {}", t.describe()));
            None
        }
    }

    /// Result type of an elementwise op over `tys`.
    fn elementwise(&mut self, tys: &[Ty], float_result: bool) -> Option<Ty> {
        let shapes: Vec<&[usize]> = tys
            .iter()
            .filter_map(|t| match t {
                Ty::Tile(s) => Some(s.as_slice()),
                _ => None,
            })
            .collect();
        if shapes.is_empty() {
            return Some(if float_result || tys.contains(&Ty::Float) {
                Ty::Float
            } else {
                Ty::Int
            });
        }
        match broadcast_shapes(&shapes) {
            Some(s) => Some(Ty::Tile(s)),
            None => {
                self.error("V005", format!("shapes {shapes:?} do not broadcast"));
                None
            }
        }
    }

    fn block(&mut self, insts: &[Inst]) {
        for inst in insts {
            self.inst(inst);
        }
    }

    fn inst(&mut self, inst: &Inst) {
        self.line = inst.line;
        let result = self.inst_type(inst);
        match (&inst.dst, result) {
            (Some(d), Some(Some(t))) if !inst.op.is_control() => self.define(d, t),
            (Some(_), None) if !inst.op.is_control() => {
                let msg = format!("{} produces no result", inst.op.name());
                self.error("V001", msg);
            }
            (None, Some(_)) if !matches!(inst.op, Opcode::AsyncDotWait) => {
                let msg = format!("result of {} must be assigned", inst.op.name());
                self.error("V001", msg);
            }
            _ => {}
        }
        self.inst_id += 1;
        if inst.op.is_control() {
            for b in &inst.body {
                self.block(b);
            }
        }
    }

    /// `None`: no result; `Some(None)`: result of unknown type (error already
    /// reported); `Some(Some(t))`: result of type `t`.
    fn inst_type(&mut self, inst: &Inst) -> Option<Option<Ty>> {
        use Opcode::*;
        let a = &inst.args;
        let in_prologue = self.scope == Scope::Prologue;
        Some(match inst.op {
            Mov => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                self.ty(&a[0])
            }
            op if op.is_binary() => {
                if !self.arity(inst, 2) {
                    return Some(None);
                }
                let (x, y) = (self.numeric(&a[0]), self.numeric(&a[1]));
                let (x, y) = (x?, y?);
                let cmp = matches!(op, Eq | Ne | Lt | Le | Gt | Ge | And | Or);
                let t = self.elementwise(&[x, y], false)?;
                if cmp && t.is_scalar() {
                    Some(Ty::Int)
                } else {
                    Some(t)
                }
            }
            Not => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                match self.numeric(&a[0]) {
                    Some(Ty::Tile(s)) => Some(Ty::Tile(s)),
                    Some(_) => Some(Ty::Int),
                    None => None,
                }
            }
            Exp | Log | Rsqrt | Sqrt => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                match self.numeric(&a[0]) {
                    Some(Ty::Tile(s)) => Some(Ty::Tile(s)),
                    Some(_) => Some(Ty::Float),
                    None => None,
                }
            }
            Select => {
                if !self.arity(inst, 3) {
                    return Some(None);
                }
                let ts: Vec<Option<Ty>> = a.iter().map(|o| self.numeric(o)).collect();
                let ts: Vec<Ty> = ts.into_iter().collect::<Option<_>>()?;
                self.elementwise(&ts[1..], false).and_then(|t| match (&t, &ts[0]) {
                    (_, Ty::Tile(_)) | (Ty::Tile(_), _) => self.elementwise(&ts, false),
                    _ => Some(t),
                })
            }
            CtaRank | ClusterSize | ReplicaId => {
                self.arity(inst, 0);
                Some(Ty::Int)
            }
            ProgramId | NumPrograms => {
                self.arity(inst, 0);
                self.axis_attr(inst, 3);
                Some(Ty::Int)
            }
            Zeros => {
                self.arity(inst, 0);
                self.shape_attr(inst).map(Ty::Tile)
            }
            Full => {
                if self.arity(inst, 1) {
                    if let Some(t) = self.ty(&a[0]) {
                        if !t.is_scalar() {
                            self.error("V004", "full needs a scalar fill value");
                        }
                    }
                }
                self.shape_attr(inst).map(Ty::Tile)
            }
            Iota => {
                self.arity(inst, 0);
                let s = self.shape_attr(inst)?;
                self.axis_attr(inst, s.len())?;
                Some(Ty::Tile(s))
            }
            Sum | ReduceMax => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                let mut s = self.want_tile(&a[0], "reduction input")?;
                let ax = self.axis_attr(inst, s.len())?;
                s[ax] = 1;
                Some(Ty::Tile(s))
            }
            Dot | AsyncDot => {
                if !self.arity(inst, 3) {
                    return Some(None);
                }
                let x = self.want_tile(&a[0], "dot operand a");
                let y = self.want_tile(&a[1], "dot operand b");
                let acc = self.want_tile(&a[2], "dot accumulator");
                let (x, y, acc) = (x?, y?, acc?);
                if x.len() != 2 || y.len() != 2 || acc.len() != 2 {
                    self.error("V005", "dot operands must be 2-D");
                    return Some(None);
                }
                if x[1] != y[0] || acc != [x[0], y[1]] {
                    self.error(
                        "V005",
                        format!("dot of {x:?}·{y:?} into {acc:?} does not conform"),
                    );
                    return Some(None);
                }
                if inst.op == AsyncDot {
                    self.async_acc = Some(Ty::Tile(acc));
                    return None;
                }
                Some(Ty::Tile(acc))
            }
            AsyncDotWait => {
                if self.arity(inst, 1) && !matches!(a[0], Operand::Int(n) if n >= 0) {
                    self.error("V001", "async_dot_wait needs a non-negative literal count");
                }
                if inst.dst.is_none() {
                    return None;
                }
                match self.async_acc.clone() {
                    Some(t) => Some(t),
                    None => {
                        self.error("V001", "async_dot_wait result with no async_dot in scope");
                        None
                    }
                }
            }
            CollectiveDot => {
                if !self.arity(inst, 3) {
                    return Some(None);
                }
                let x = self.want_tile(&a[0], "collective_dot operand a");
                let y = self.want_tile(&a[1], "collective_dot operand b");
                let acc = self.want_tile(&a[2], "collective_dot accumulator");
                let group = match inst.attr("group") {
                    Some(g) if !g.is_empty() => {
                        let g = g.to_vec();
                        self.literal_ranks(&g, "collective group")
                    }
                    _ => {
                        self.error("V001", "collective_dot needs a non-empty group(...)");
                        None
                    }
                };
                let (x, y, acc, group) = (x?, y?, acc?, group?);
                let distinct: BTreeSet<i64> = group.iter().copied().collect();
                if distinct.len() != group.len() {
                    self.error("V001", "collective group lists a rank twice");
                }
                if x.len() != 2 || y.len() != 2 || acc.len() != 2 {
                    self.error("V005", "collective_dot operands must be 2-D");
                    return Some(None);
                }
                if x[1] != y[0] || acc != [x[0], y[1] * group.len()] {
                    self.error(
                        "V005",
                        format!(
                            "collective_dot fragment {x:?}·{y:?} over {} ranks does not fill {acc:?}",
                            group.len()
                        ),
                    );
                    return Some(None);
                }
                Some(Ty::Tile(acc))
            }
            Transpose => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                let s = self.want_tile(&a[0], "transpose input")?;
                if s.len() != 2 {
                    self.error("V005", "transpose needs a 2-D tile");
                    return Some(None);
                }
                Some(Ty::Tile(vec![s[1], s[0]]))
            }
            View => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                let s = self.want_tile(&a[0], "view input");
                let t = self.shape_attr(inst);
                let (s, t) = (s?, t?);
                if s.iter().product::<usize>() != t.iter().product::<usize>() {
                    self.error("V005", format!("cannot view {s:?} as {t:?}"));
                    return Some(None);
                }
                Some(Ty::Tile(t))
            }
            Load => {
                if a.is_empty() {
                    self.error("V001", "load needs a tensor");
                    return Some(None);
                }
                let shape = self.want_tensor(&a[0]);
                for o in &a[1..] {
                    self.want_int(o, "load offset");
                }
                let tile = self.shape_attr(inst)?;
                let shape = shape?;
                if a.len() - 1 != shape.len() || tile.len() != shape.len() {
                    self.error(
                        "V005",
                        format!(
                            "load from rank-{} tensor needs {} offsets and a rank-{} shape",
                            shape.len(),
                            shape.len(),
                            shape.len()
                        ),
                    );
                }
                Some(Ty::Tile(tile))
            }
            Store => {
                if a.len() < 2 {
                    self.error("V001", "store needs a tensor, offsets and a tile");
                    return None;
                }
                let shape = self.want_tensor(&a[0]);
                for o in &a[1..a.len() - 1] {
                    self.want_int(o, "store offset");
                }
                let tile = self.want_tile(&a[a.len() - 1], "stored value");
                if let (Some(shape), Some(tile)) = (shape, tile) {
                    if a.len() - 2 != shape.len() || tile.len() != shape.len() {
                        self.error(
                            "V005",
                            format!("store of {tile:?} into rank-{} tensor", shape.len()),
                        );
                    }
                }
                if let Some(name) = a[0].sym() {
                    if matches!(self.p.param(name).map(|p| &p.kind), Some(ParamKind::Tensor { output: false, .. })) {
                        self.error("V004", format!("store to @{name}, which is not declared `out`"));
                    }
                }
                return None;
            }
            LocalView => {
                if !self.arity(inst, 2) {
                    return Some(None);
                }
                self.want_int(&a[1], "stage index");
                match self.ty(&a[0])? {
                    Ty::Buf { buf, staged: false, remote } => {
                        if let (Some(b), Operand::Int(i)) = (self.p.buffer(&buf), &a[1]) {
                            if *i < 0 || *i as usize >= b.stages {
                                let msg = format!("stage {i} out of range for @{buf} with {} stages", b.stages);
                                self.error("V010", msg);
                            }
                        }
                        Some(Ty::Buf { buf, staged: true, remote })
                    }
                    Ty::Bar { bar, indexed: false, remote } => {
                        if let (Some(b), Operand::Int(i)) = (self.p.barrier(&bar), &a[1]) {
                            if *i < 0 || *i as usize >= b.count {
                                let msg = format!("index {i} out of range for @{bar} with count {}", b.count);
                                self.error("V010", msg);
                            }
                        }
                        Some(Ty::Bar { bar, indexed: true, remote })
                    }
                    t => {
                        self.error(
                            "V004",
                            format!("local_view of {}, expected an unindexed buffer or barrier", t.describe()),
                        );
                        None
                    }
                }
            }
            RemoteView => {
                if !self.arity(inst, 2) {
                    return Some(None);
                }
                self.check_rank_operand(&a[1], "remote_view");
                match self.ty(&a[0])? {
                    Ty::Buf { buf, staged, .. } => {
                        if self.p.buffer(&buf).map(|b| b.storage) == Some(Storage::Smem) {
                            self.error(
                                "V011",
                                format!("remote_view of @{buf}, which is not smem_cluster storage"),
                            );
                        }
                        Some(Ty::Buf { buf, staged, remote: true })
                    }
                    Ty::Bar { bar, indexed, .. } => Some(Ty::Bar { bar, indexed, remote: true }),
                    t => {
                        self.error("V004", format!("remote_view of {}", t.describe()));
                        None
                    }
                }
            }
            LocalLoad => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                let (buf, _, remote) = self.want_buf(&a[0], "local_load source")?;
                if remote {
                    self.error("V011", "local_load through a remote view is not supported");
                }
                self.p.buffer(&buf).map(|b| Ty::Tile(b.shape.clone()))
            }
            LocalStore => {
                if !self.arity(inst, 2) {
                    return None;
                }
                let view = self.want_buf(&a[0], "local_store destination");
                let tile = self.want_tile(&a[1], "stored value");
                if let (Some((buf, _, remote)), Some(tile)) = (view, tile) {
                    if remote {
                        self.error("V011", "local_store through a remote view; use async_remote_store");
                    }
                    self.check_buffer_shape(&buf, &tile);
                }
                return None;
            }
            LocalAlias => {
                if !in_prologue {
                    self.error("V009", "local_alias is only allowed in the prologue");
                }
                if !self.arity(inst, 2) {
                    return None;
                }
                let x = self.want_buf(&a[0], "alias member");
                let y = self.want_buf(&a[1], "alias member");
                if let (Some((x, xs, _)), Some((y, ys, _))) = (x, y) {
                    let (bx, by) = (self.p.buffer(&x), self.p.buffer(&y));
                    if xs || ys || a[0].sym().is_none() || a[1].sym().is_none() {
                        self.error("V001", "local_alias takes two buffer symbols");
                    } else if let (Some(bx), Some(by)) = (bx, by) {
                        if bx.shape != by.shape || bx.stages != by.stages || bx.storage != by.storage {
                            self.error(
                                "V005",
                                format!("aliased buffers @{x} and @{y} must share shape, stages and storage"),
                            );
                        }
                    }
                }
                return None;
            }
            BarrierArrive => {
                if self.arity(inst, 1) {
                    self.want_bar(&a[0], "barrier_arrive target");
                }
                if let Some(c) = inst.attr("count") {
                    if !matches!(c, [Operand::Int(n)] if *n >= 1) {
                        self.error("V001", "count(...) must be a positive literal");
                    }
                }
                if let Some(r) = inst.attr("remote") {
                    match r {
                        [op] => {
                            let op = op.clone();
                            self.check_rank_operand(&op, "barrier_arrive remote");
                        }
                        _ => self.error("V001", "remote(...) takes one rank"),
                    }
                }
                return None;
            }
            BarrierWait => {
                if self.arity(inst, 2) {
                    self.want_bar(&a[0], "barrier_wait target");
                    self.want_int(&a[1], "barrier_wait parity");
                }
                return None;
            }
            BarrierExpectBytes => {
                if self.arity(inst, 2) {
                    if self.want_bar(&a[0], "barrier_expect_bytes target") == Some(true) {
                        self.error("V011", "barrier_expect_bytes on a remote barrier");
                    }
                    self.want_int(&a[1], "byte count");
                }
                return None;
            }
            ClusterBarrier => {
                self.arity(inst, 0);
                if !in_prologue {
                    self.error("V009", "cluster_barrier is only allowed in the prologue");
                }
                return None;
            }
            AsyncCopy => {
                if a.len() < 3 {
                    self.error("V001", "async_copy needs a tensor, offsets, a view and a barrier");
                    return None;
                }
                let n = a.len();
                let shape = self.want_tensor(&a[0]);
                for o in &a[1..n - 2] {
                    self.want_int(o, "copy offset");
                }
                let view = self.want_buf(&a[n - 2], "async_copy destination");
                let bar = self.want_bar(&a[n - 1], "async_copy barrier");
                if let Some(shape) = &shape {
                    if n - 3 != shape.len() {
                        self.error("V005", format!("async_copy from rank-{} tensor needs {} offsets", shape.len(), shape.len()));
                    }
                }
                if let Some((buf, _, remote)) = &view {
                    if *remote || bar == Some(true) {
                        self.error("V011", "async_copy targets local views; use multicast(...) for peers");
                    }
                    let b = self.p.buffer(buf);
                    if let (Some(shape), Some(b)) = (&shape, b) {
                        if b.shape.len() != shape.len() {
                            self.error("V005", format!("async_copy into @{buf} of rank {} from rank-{} tensor", b.shape.len(), shape.len()));
                        }
                    }
                    if let Some(m) = inst.attr("multicast") {
                        let m = m.to_vec();
                        if m.is_empty() {
                            self.error("V013", "empty multicast target set");
                        } else if let Some(ranks) = self.literal_ranks(&m, "multicast") {
                            let distinct: BTreeSet<i64> = ranks.iter().copied().collect();
                            if distinct.len() != ranks.len() {
                                self.error("V001", "multicast lists a rank twice");
                            }
                            if b.map(|b| b.storage) != Some(Storage::SmemCluster) {
                                self.error("V011", format!("multicast into @{buf}, which is not smem_cluster storage"));
                            }
                        }
                    }
                }
                return None;
            }
            AsyncRemoteStore => {
                if !self.arity(inst, 3) {
                    return None;
                }
                let view = self.want_buf(&a[0], "async_remote_store destination");
                let tile = self.want_tile(&a[1], "stored value");
                self.want_bar(&a[2], "async_remote_store barrier");
                if let Some((buf, _, _)) = &view {
                    if self.p.buffer(buf).map(|b| b.storage) == Some(Storage::Smem) {
                        self.error("V011", format!("async_remote_store into @{buf}, which is not smem_cluster storage"));
                    }
                    if let Some(tile) = tile {
                        self.check_buffer_shape(buf, &tile);
                    }
                }
                return None;
            }
            ClcCreateContext => {
                self.arity(inst, 0);
                if !in_prologue {
                    self.error("V009", "clc_create_context is only allowed in the prologue");
                }
                match inst.attr_int("stages") {
                    Some(s) if s >= 1 => {}
                    _ => self.error("V012", "clc context needs stages(>= 1)"),
                }
                match inst.attr_int("consumers") {
                    Some(c) if c >= 1 => {}
                    _ => self.error("V012", "clc context needs consumers(>= 1)"),
                }
                if let Some(t) = inst.attr("tiles") {
                    if !matches!(t, [Operand::Int(n)] if *n >= 0) {
                        self.error("V012", "tiles(...) must be a non-negative literal");
                    }
                }
                Some(Ty::Ctx)
            }
            ClcProducer | ClcConsumer => {
                if self.arity(inst, 1) {
                    if let Some(t) = self.ty(&a[0]) {
                        if t != Ty::Ctx {
                            self.error("V004", format!("expected a clc context, found {}", t.describe()));
                        }
                    }
                }
                if inst.op == ClcProducer {
                    return None;
                }
                Some(Ty::Int)
            }
            RequireLayout => {
                if self.arity(inst, 1) {
                    self.ty(&a[0]);
                }
                if inst.attr_ident("layout").and_then(LayoutEncoding::from_token).is_none() {
                    self.error("V001", "require_layout needs layout(<encoding>)");
                }
                if let Some(p) = inst.attr("priority") {
                    let ok = matches!(p, [Operand::Ident(s)] if crate::layout::Priority::from_token(s).is_some());
                    if !ok {
                        self.error("V001", "priority(...) must be required, user or default");
                    }
                }
                return None;
            }
            ReleaseLayout => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                self.ty(&a[0])
            }
            LayoutConvert => {
                if !self.arity(inst, 1) {
                    return Some(None);
                }
                if inst.attr_ident("layout").and_then(LayoutEncoding::from_token).is_none() {
                    self.error("V001", "layout_convert needs layout(<encoding>)");
                }
                self.want_tile(&a[0], "layout_convert input").map(Ty::Tile)
            }
            For => {
                if self.arity(inst, 3) {
                    for o in a {
                        self.want_int(o, "loop bound");
                    }
                    if a[2] == Operand::Int(0) {
                        self.error("V001", "loop step must be non-zero");
                    }
                }
                if let Some(iv) = &inst.dst {
                    self.define(iv, Ty::Int);
                }
                return None;
            }
            While | If => {
                if self.arity(inst, 1) {
                    self.want_int(&a[0], "condition");
                }
                return None;
            }
            _ => unreachable!("opcode {:?} not classified", inst.op),
        })
    }

    fn check_buffer_shape(&mut self, buf: &str, tile: &[usize]) {
        if let Some(b) = self.p.buffer(buf) {
            if b.shape != tile {
                let msg = format!("tile {tile:?} does not match @{buf} shape {:?}", b.shape);
                self.error("V005", msg);
            }
        }
    }
}

fn check_decls(c: &mut Checker<'_>, capacity: usize) {
    let p = c.p;
    if p.grid.contains(&0) || p.cluster.contains(&0) || p.num_warps == 0 {
        c.decl_error("V007", "grid, cluster and warps must be positive", 1);
    } else {
        for d in 0..3 {
            if !p.grid[d].is_multiple_of(p.cluster[d]) {
                c.decl_error(
                    "V007",
                    format!(
                        "cluster extent {} does not divide grid extent {} along axis {d}",
                        p.cluster[d], p.grid[d]
                    ),
                    1,
                );
            }
        }
    }
    let mut names = BTreeSet::new();
    let decls = p
        .params
        .iter()
        .map(|x| (&x.name, x.line))
        .chain(p.buffers.iter().map(|x| (&x.name, x.line)))
        .chain(p.barriers.iter().map(|x| (&x.name, x.line)));
    let mut dups = Vec::new();
    for (name, line) in decls {
        if !names.insert(name.clone()) {
            dups.push((name.clone(), line));
        }
    }
    for (name, line) in dups {
        c.decl_error("V012", format!("@{name} declared twice"), line);
    }
    for prm in &p.params {
        if let ParamKind::Tensor { shape, .. } = &prm.kind {
            if shape.is_empty() || shape.contains(&0) {
                c.decl_error("V012", format!("tensor @{} needs positive extents", prm.name), prm.line);
            }
        }
    }
    for b in &p.buffers {
        if b.shape.is_empty() || b.shape.contains(&0) {
            c.decl_error("V012", format!("buffer @{} needs positive extents", b.name), b.line);
        }
        if b.stages == 0 {
            c.decl_error("V012", format!("buffer @{} needs stages >= 1", b.name), b.line);
        }
    }
    for b in &p.barriers {
        if b.count == 0 || b.arrive == 0 {
            c.decl_error("V012", format!("barrier @{} needs count >= 1 and arrive >= 1", b.name), b.line);
        }
    }
    let mut bytes: usize = p.buffers.iter().map(BufferDecl::total_bytes).sum();
    p.walk(|_, _, inst| {
        if inst.op == Opcode::ClcCreateContext {
            bytes += CLC_SLOT_BYTES * inst.attr_int("stages").unwrap_or(0).max(0) as usize;
        }
    });
    if bytes > capacity {
        c.decl_error(
            "V008",
            format!("shared memory use {bytes} B exceeds capacity {capacity} B"),
            0,
        );
    }

    let mut explicit = 0u32;
    let mut defaults = Vec::new();
    for t in &p.tasks {
        if t.replicate == 0 {
            c.decl_error("V006", "replicate must be >= 1", t.line);
        }
        match t.kind {
            TaskKind::Explicit { warps } => {
                if warps == 0 {
                    c.decl_error("V006", "task needs warps >= 1", t.line);
                }
                explicit += warps * t.replicate;
            }
            TaskKind::Default => defaults.push(t.line),
        }
    }
    if explicit > p.num_warps {
        c.decl_error(
            "V006",
            format!(
                "warp budget exceeded: task regions claim {explicit} of {} warps",
                p.num_warps
            ),
            p.tasks.first().map_or(0, |t| t.line),
        );
    }
    if defaults.len() > 1 {
        c.decl_error("V006", "more than one default task region", defaults[1]);
    }
    if let Some(&line) = defaults.first() {
        if explicit == p.num_warps {
            c.decl_error(
                "V006",
                "default task region has no warps left",
                line,
            );
        }
    }
}

fn run(p: &KernelProgram, capacity: usize) -> Checker<'_> {
    let mut c = Checker {
        p,
        scope: Scope::Prologue,
        scope_types: BTreeMap::new(),
        all: TypeMap::new(),
        diags: Vec::new(),
        inst_id: 0,
        line: 0,
        async_acc: None,
    };
    check_decls(&mut c, capacity);
    c.block(&p.prologue);
    let prologue_types = core::mem::take(&mut c.scope_types);
    let prologue_acc = c.async_acc.take();
    for (ti, t) in p.tasks.iter().enumerate() {
        c.scope = Scope::Task(ti);
        c.scope_types = prologue_types.clone();
        c.async_acc = prologue_acc.clone();
        c.define("replica_id", Ty::Int);
        c.block(&t.body);
    }
    c
}

/// Checks structure, references, types and resource budgets.
pub fn validate(p: &KernelProgram) -> ValidationReport {
    validate_with_capacity(p, DEFAULT_SMEM_CAPACITY)
}

pub fn validate_with_capacity(p: &KernelProgram, capacity: usize) -> ValidationReport {
    ValidationReport {
        diagnostics: run(p, capacity).diags,
    }
}

/// Register types for every scope. Meaningful only for programs that
/// validate cleanly.
pub fn infer_types(p: &KernelProgram) -> TypeMap {
    run(p, usize::MAX).all
}
