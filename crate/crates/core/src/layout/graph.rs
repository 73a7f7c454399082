//! Def-use graph over layout-carrying values and the constraints on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::lattice::{LayoutEncoding, Priority};
use crate::diag::Site;
use crate::ir::{infer_types, KernelProgram, Inst, Opcode, Operand, Scope, Ty, TypeMap};

/// A value that can carry a layout: a buffer allocation or a register
/// holding a tile or buffer view.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Buf(String),
    Reg(Scope, String),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Buf(b) => write!(f, "@{b}"),
            Node::Reg(Scope::Prologue, r) => write!(f, "%{r}"),
            Node::Reg(Scope::Task(t), r) => write!(f, "task{t}:%{r}"),
        }
    }
}

/// Producer → consumer edge. `flip` marks a transpose.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub id: usize,
    pub node: Node,
    pub encoding: LayoutEncoding,
    pub priority: Priority,
    pub site: Site,
    /// True when the constrained value is a register tile, so a defeated
    /// constraint can be met with a conversion at its use.
    pub convertible: bool,
    /// Short description of where the constraint came from.
    pub origin: String,
}

#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub nodes: BTreeSet<Node>,
    pub edges: Vec<Edge>,
    pub constraints: Vec<Constraint>,
    /// `local_alias` pairs with their instruction sites.
    pub aliases: Vec<(String, String, Site)>,
}

struct Builder<'a> {
    types: &'a TypeMap,
    out: Analysis,
    scope: Scope,
    id: usize,
    prologue_regs: BTreeSet<String>,
    region_args: BTreeSet<(usize, String)>,
}

impl Builder<'_> {
    fn node(&mut self, op: &Operand) -> Option<Node> {
        let n = match op {
            Operand::Reg(r) => match self.reg_ty(r)? {
                Ty::Tile(_) | Ty::Buf { .. } => {
                    if let Scope::Task(t) = self.scope {
                        if self.prologue_regs.contains(r) && self.region_args.insert((t, r.clone())) {
                            self.out.edges.push(Edge {
                                from: Node::Reg(Scope::Prologue, r.clone()),
                                to: Node::Reg(self.scope, r.clone()),
                                flip: false,
                            });
                            self.out.nodes.insert(Node::Reg(Scope::Prologue, r.clone()));
                        }
                    }
                    Node::Reg(self.scope, r.clone())
                }
                _ => return None,
            },
            Operand::Sym(s) if self.is_buffer(s) => Node::Buf(s.clone()),
            _ => return None,
        };
        self.out.nodes.insert(n.clone());
        Some(n)
    }

    /// Task scopes inherit prologue registers, which are typed under the
    /// prologue scope.
    fn reg_ty(&self, r: &str) -> Option<&Ty> {
        self.types
            .get(&(self.scope, r.to_string()))
            .or_else(|| self.types.get(&(Scope::Prologue, r.to_string())))
    }

    fn is_buffer(&self, s: &str) -> bool {
        self.out.nodes.contains(&Node::Buf(s.to_string()))
    }

    fn dst(&mut self, inst: &Inst) -> Option<Node> {
        let d = inst.dst.as_ref()?;
        match self.reg_ty(d)? {
            Ty::Tile(_) | Ty::Buf { .. } => {
                let n = Node::Reg(self.scope, d.clone());
                self.out.nodes.insert(n.clone());
                Some(n)
            }
            _ => None,
        }
    }

    fn edge(&mut self, from: Option<Node>, to: Option<Node>, flip: bool) {
        if let (Some(from), Some(to)) = (from, to) {
            self.out.edges.push(Edge { from, to, flip });
        }
    }

    fn block(&mut self, insts: &[Inst]) {
        for inst in insts {
            self.inst(inst);
        }
    }

    fn inst(&mut self, inst: &Inst) {
        let site = Site {
            inst: Some(self.id),
            line: inst.line,
        };
        self.id += 1;
        let a = &inst.args;
        match inst.op {
            Opcode::LocalView | Opcode::RemoteView | Opcode::LocalLoad | Opcode::View | Opcode::Mov => {
                if let Some(src) = a.first() {
                    let s = self.node(src);
                    let d = self.dst(inst);
                    self.edge(s, d, false);
                }
            }
            Opcode::Transpose => {
                if let Some(src) = a.first() {
                    let s = self.node(src);
                    let d = self.dst(inst);
                    self.edge(s, d, true);
                }
            }
            Opcode::LocalStore | Opcode::AsyncRemoteStore if a.len() >= 2 => {
                let view = self.node(&a[0]);
                let tile = self.node(&a[1]);
                self.edge(tile, view, false);
            }
            Opcode::LocalAlias if a.len() == 2 => {
                if let (Some(x), Some(y)) = (a[0].sym(), a[1].sym()) {
                    self.out.aliases.push((x.to_string(), y.to_string(), site));
                }
            }
            Opcode::RequireLayout if !a.is_empty() => {
                let enc = inst.attr_ident("layout").and_then(LayoutEncoding::from_token);
                let pri = inst
                    .attr_ident("priority")
                    .and_then(Priority::from_token)
                    .unwrap_or(Priority::UserRequested);
                let convertible = match &a[0] {
                    Operand::Reg(r) => matches!(self.reg_ty(r), Some(Ty::Tile(_))),
                    _ => false,
                };
                if let (Some(node), Some(encoding)) = (self.node(&a[0]), enc) {
                    let id = self.out.constraints.len();
                    self.out.constraints.push(Constraint {
                        id,
                        node,
                        encoding,
                        priority: pri,
                        site,
                        convertible,
                        origin: format!("require_layout {}", a[0]),
                    });
                }
            }
            _ => {
                // Register any layout-carrying operand so it shows up as a node.
                for op in a {
                    self.node(op);
                }
                self.dst(inst);
            }
        }
        for b in &inst.body {
            self.block(b);
        }
    }
}

/// Builds the def-use graph and collects constraints: one per
/// `require_layout` marker and one per buffer `layout(...)` annotation.
pub fn analyze(p: &KernelProgram) -> Analysis {
    let types = infer_types(p);
    let mut b = Builder {
        types: &types,
        out: Analysis::default(),
        scope: Scope::Prologue,
        id: 0,
        prologue_regs: types
            .keys()
            .filter(|(s, _)| *s == Scope::Prologue)
            .map(|(_, r)| r.clone())
            .collect(),
        region_args: BTreeSet::new(),
    };
    for buf in &p.buffers {
        b.out.nodes.insert(Node::Buf(buf.name.clone()));
    }
    for buf in &p.buffers {
        if let Some(enc) = buf.layout {
            let id = b.out.constraints.len();
            b.out.constraints.push(Constraint {
                id,
                node: Node::Buf(buf.name.clone()),
                encoding: enc,
                priority: Priority::UserRequested,
                site: Site {
                    inst: None,
                    line: buf.line,
                },
                convertible: false,
                origin: format!("layout({enc}) on buffer @{}", buf.name),
            });
        }
    }
    b.block(&p.prologue);
    for (ti, t) in p.tasks.iter().enumerate() {
        b.scope = Scope::Task(ti);
        b.block(&t.body);
    }
    b.out.edges.sort();
    b.out.edges.dedup();
    b.out
}

/// Union-find over nodes, joined by edges and alias pairs.
pub struct Classes {
    index: BTreeMap<Node, usize>,
    parent: Vec<usize>,
}

impl Classes {
    pub fn new(a: &Analysis) -> Self {
        let index: BTreeMap<Node, usize> = a.nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let mut c = Classes {
            parent: (0..index.len()).collect(),
            index,
        };
        for e in &a.edges {
            c.union(&e.from, &e.to);
        }
        for (x, y, _) in &a.aliases {
            c.union(&Node::Buf(x.clone()), &Node::Buf(y.clone()));
        }
        c
    }

    fn find_idx(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub fn find(&mut self, n: &Node) -> Option<usize> {
        let i = *self.index.get(n)?;
        Some(self.find_idx(i))
    }

    pub fn union(&mut self, x: &Node, y: &Node) {
        if let (Some(a), Some(b)) = (self.find(x), self.find(y)) {
            // Smaller index wins so roots do not depend on union order.
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.parent[hi] = lo;
        }
    }
}
