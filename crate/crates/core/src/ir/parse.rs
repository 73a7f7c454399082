use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::lexer::{lex, Tok, Token};
use super::*;
use crate::layout::LayoutEncoding;

/// A syntax error with a 1-based source location.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: expected {expected}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub expected: String,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(ParseError {
            line: t.line,
            col: t.col,
            expected: expected.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(what)
        }
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn end_of_line(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline => {
                self.skip_newlines();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => self.err("end of line"),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err(what),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => self.err(format!("`{kw}`")),
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        let op = match self.peek().clone() {
            Tok::Reg(r) => Operand::Reg(r),
            Tok::Sym(s) => Operand::Sym(s),
            Tok::Int(i) => Operand::Int(i),
            Tok::Float(x) => Operand::Float(x),
            Tok::Ident(s) => Operand::Ident(s),
            _ => return self.err("operand"),
        };
        self.bump();
        Ok(op)
    }

    /// `name(v v ...)`
    fn attr(&mut self) -> PResult<Attr> {
        let name = self.ident("attribute")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut values = Vec::new();
        while *self.peek() != Tok::RParen {
            values.push(self.operand()?);
        }
        self.bump();
        Ok(Attr { name, values })
    }

    fn is_attr_start(&self) -> bool {
        matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::LParen
    }

    fn expect_attr(&mut self, name: &str) -> PResult<Attr> {
        match self.peek() {
            Tok::Ident(s) if s == name && *self.peek_at(1) == Tok::LParen => self.attr(),
            _ => self.err(format!("`{name}(...)`")),
        }
    }

    fn uints(&mut self, a: &Attr, what: &str) -> PResult<Vec<u64>> {
        a.values
            .iter()
            .map(|v| match v {
                Operand::Int(i) if *i >= 0 => Ok(*i as u64),
                _ => self.err(format!("non-negative integers in {what}")),
            })
            .collect()
    }

    fn dims3(&mut self, name: &str) -> PResult<[u32; 3]> {
        let a = self.expect_attr(name)?;
        let v = self.uints(&a, name)?;
        if v.is_empty() || v.len() > 3 {
            return self.err(format!("1 to 3 extents in {name}(...)"));
        }
        let mut out = [1u32; 3];
        for (o, x) in out.iter_mut().zip(v) {
            *o = x as u32;
        }
        Ok(out)
    }

    fn single_uint(&mut self, a: &Attr) -> PResult<u64> {
        match self.uints(a, &a.name.clone())?.as_slice() {
            [x] => Ok(*x),
            _ => self.err(format!("one integer in {}(...)", a.name)),
        }
    }

    fn encoding(&mut self, a: &Attr) -> PResult<LayoutEncoding> {
        match a.values.as_slice() {
            [Operand::Ident(s)] => match LayoutEncoding::from_token(s) {
                Some(e) => Ok(e),
                None => self.err("layout encoding"),
            },
            _ => self.err("layout encoding"),
        }
    }

    fn program(&mut self) -> PResult<KernelProgram> {
        self.skip_newlines();
        self.keyword("kernel")?;
        let name = self.ident("kernel name")?;
        let grid = self.dims3("grid")?;
        let cluster = self.dims3("cluster")?;
        let w = self.expect_attr("warps")?;
        let num_warps = self.single_uint(&w)? as u32;
        self.end_of_line()?;
        let mut p = KernelProgram {
            name,
            grid,
            cluster,
            num_warps,
            params: Vec::new(),
            buffers: Vec::new(),
            barriers: Vec::new(),
            prologue: Vec::new(),
            tasks: Vec::new(),
        };
        loop {
            let line = self.line();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "param" => {
                    self.bump();
                    p.params.push(self.param(line)?);
                }
                Tok::Ident(kw) if kw == "buffer" => {
                    self.bump();
                    p.buffers.push(self.buffer(line)?);
                }
                Tok::Ident(kw) if kw == "barrier" => {
                    self.bump();
                    let name = self.ident("barrier name")?;
                    let c = self.expect_attr("count")?;
                    let count = self.single_uint(&c)? as usize;
                    let a = self.expect_attr("arrive")?;
                    let arrive = self.single_uint(&a)? as u32;
                    p.barriers.push(BarrierDecl {
                        name,
                        count,
                        arrive,
                        line,
                    });
                }
                Tok::Ident(kw) if kw == "task" => {
                    self.bump();
                    p.tasks.push(self.task(line)?);
                    continue;
                }
                _ => {
                    if !p.tasks.is_empty() {
                        return self.err("`task` or end of input after task regions");
                    }
                    let inst = self.inst()?;
                    p.prologue.push(inst);
                    continue;
                }
            }
            self.end_of_line()?;
        }
        Ok(p)
    }

    fn param(&mut self, line: u32) -> PResult<Param> {
        let name = self.ident("parameter name")?;
        let a = self.attr()?;
        let kind = match a.name.as_str() {
            "tensor" => {
                let shape = self.uints(&a, "tensor")?.into_iter().map(|x| x as usize).collect();
                let output = match self.peek() {
                    Tok::Ident(s) if s == "out" => {
                        self.bump();
                        true
                    }
                    _ => false,
                };
                ParamKind::Tensor { shape, output }
            }
            "f32" => match a.values.as_slice() {
                [Operand::Float(x)] => ParamKind::F32(*x),
                [Operand::Int(i)] => ParamKind::F32(*i as f32),
                _ => return self.err("f32 literal"),
            },
            "i32" => match a.values.as_slice() {
                [Operand::Int(i)] => ParamKind::I32(*i),
                _ => return self.err("integer literal"),
            },
            _ => return self.err("`tensor(...)`, `f32(...)` or `i32(...)`"),
        };
        Ok(Param { name, kind, line })
    }

    fn buffer(&mut self, line: u32) -> PResult<BufferDecl> {
        let name = self.ident("buffer name")?;
        let s = self.expect_attr("shape")?;
        let shape = self.uints(&s, "shape")?.into_iter().map(|x| x as usize).collect();
        self.keyword("f32")?;
        let st = self.expect_attr("stages")?;
        let stages = self.single_uint(&st)? as usize;
        let sk = self.expect_attr("storage")?;
        let storage = match sk.values.as_slice() {
            [Operand::Ident(s)] if s == "smem" => Storage::Smem,
            [Operand::Ident(s)] if s == "smem_cluster" => Storage::SmemCluster,
            _ => return self.err("`smem` or `smem_cluster`"),
        };
        let mut layout = None;
        let mut resolved = None;
        while self.is_attr_start() {
            let a = self.attr()?;
            match a.name.as_str() {
                "layout" if layout.is_none() => layout = Some(self.encoding(&a)?),
                "resolved" if resolved.is_none() => resolved = Some(self.encoding(&a)?),
                _ => return self.err("`layout(...)` or `resolved(...)`"),
            }
        }
        Ok(BufferDecl {
            name,
            shape,
            stages,
            storage,
            layout,
            resolved,
            line,
        })
    }

    fn task(&mut self, line: u32) -> PResult<TaskRegion> {
        let kind = match self.peek() {
            Tok::Ident(s) if s == "default" => {
                self.bump();
                TaskKind::Default
            }
            _ => {
                let w = self.expect_attr("warps")?;
                TaskKind::Explicit {
                    warps: self.single_uint(&w)? as u32,
                }
            }
        };
        let mut replicate = 1;
        let mut registers = None;
        while self.is_attr_start() {
            let a = self.attr()?;
            match a.name.as_str() {
                "replicate" if kind != TaskKind::Default => replicate = self.single_uint(&a)? as u32,
                "registers" => registers = Some(self.single_uint(&a)? as u32),
                _ => return self.err("`replicate(...)` or `registers(...)`"),
            }
        }
        let body = self.block()?;
        self.end_of_line()?;
        Ok(TaskRegion {
            kind,
            replicate,
            registers,
            body,
            line,
        })
    }

    /// `{` newline inst* `}`; leaves the cursor after `}`.
    fn block(&mut self) -> PResult<Vec<Inst>> {
        self.expect(Tok::LBrace, "`{`")?;
        self.end_of_line()?;
        let mut out = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return self.err("`}`");
            }
            out.push(self.inst()?);
        }
        self.bump();
        Ok(out)
    }

    fn inst(&mut self) -> PResult<Inst> {
        let line = self.line();
        let dst = match (self.peek().clone(), self.peek_at(1)) {
            (Tok::Reg(r), Tok::Eq) => {
                self.bump();
                self.bump();
                Some(r)
            }
            _ => None,
        };
        let opname = self.ident("opcode")?;
        let Some(op) = Opcode::from_name(&opname) else {
            self.pos -= 1;
            return self.err(format!("opcode, found `{opname}`"));
        };
        let mut inst = Inst {
            dst,
            op,
            args: Vec::new(),
            attrs: Vec::new(),
            body: Vec::new(),
            line,
        };
        match op {
            Opcode::For => {
                if inst.dst.is_some() {
                    return self.err("`for` without a result");
                }
                let Tok::Reg(iv) = self.bump() else {
                    self.pos -= 1;
                    return self.err("induction register");
                };
                inst.dst = Some(iv);
                self.expect(Tok::Eq, "`=`")?;
                inst.args.push(self.operand()?);
                self.keyword("to")?;
                inst.args.push(self.operand()?);
                if matches!(self.peek(), Tok::Ident(s) if s == "step") {
                    self.bump();
                    inst.args.push(self.operand()?);
                } else {
                    inst.args.push(Operand::Int(1));
                }
                inst.body.push(self.block()?);
            }
            Opcode::While => {
                inst.args.push(self.operand()?);
                inst.body.push(self.block()?);
            }
            Opcode::If => {
                inst.args.push(self.operand()?);
                inst.body.push(self.block()?);
                if matches!(self.peek(), Tok::Ident(s) if s == "else") {
                    self.bump();
                    inst.body.push(self.block()?);
                } else {
                    inst.body.push(Vec::new());
                }
            }
            _ => {
                while !matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::RBrace) {
                    if self.is_attr_start() {
                        inst.attrs.push(self.attr()?);
                    } else if inst.attrs.is_empty() {
                        inst.args.push(self.operand()?);
                    } else {
                        return self.err("attribute after attributes");
                    }
                }
            }
        }
        self.end_of_line()?;
        Ok(inst)
    }
}

/// Parses the textual kernel format.
pub fn parse_kernel(text: &str) -> Result<KernelProgram, ParseError> {
    let toks = lex(text).map_err(|e| ParseError {
        line: e.line,
        col: e.col,
        expected: e.message.to_string(),
    })?;
    Parser { toks, pos: 0 }.program()
}
