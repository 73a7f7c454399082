//! Runtime register values and their arithmetic.

use alloc::format;
use alloc::string::String;

use crate::ir::Opcode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f32),
    Tile(Tensor),
    /// Buffer or staged view. `cta` is the grid-linear CTA owning the
    /// storage.
    Buf { cta: usize, buf: usize, stage: Option<usize> },
    Bar { cta: usize, bar: usize, index: Option<usize> },
    Ctx(usize),
    Tensor(usize),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "f32",
            Value::Tile(_) => "tile",
            Value::Buf { .. } => "buffer view",
            Value::Bar { .. } => "barrier",
            Value::Ctx(_) => "clc context",
            Value::Tensor(_) => "tensor",
        }
    }

    pub fn truthy(&self) -> Option<bool> {
        match self {
            Value::Int(i) => Some(*i != 0),
            Value::Float(f) => Some(*f != 0.0),
            _ => None,
        }
    }

    fn scalar(&self) -> Option<f32> {
        match self {
            Value::Int(i) => Some(*i as f32),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn as_tile(&self) -> Option<Tensor> {
        match self {
            Value::Int(i) => Some(Tensor::full(&[1], *i as f32)),
            Value::Float(f) => Some(Tensor::full(&[1], *f)),
            Value::Tile(t) => Some(t.clone()),
            _ => None,
        }
    }
}

fn b2f(b: bool) -> f32 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn float_op(op: Opcode, x: f32, y: f32) -> f32 {
    use Opcode::*;
    match op {
        Add => x + y,
        Sub => x - y,
        Mul => x * y,
        Div => x / y,
        Rem => x % y,
        Min => x.min(y),
        Max => x.max(y),
        Eq => b2f(x == y),
        Ne => b2f(x != y),
        Lt => b2f(x < y),
        Le => b2f(x <= y),
        Gt => b2f(x > y),
        Ge => b2f(x >= y),
        And => b2f(x != 0.0 && y != 0.0),
        Or => b2f(x != 0.0 || y != 0.0),
        _ => unreachable!("not a binary opcode"),
    }
}

fn int_op(op: Opcode, x: i64, y: i64) -> Result<i64, String> {
    use Opcode::*;
    Ok(match op {
        Add => x.wrapping_add(y),
        Sub => x.wrapping_sub(y),
        Mul => x.wrapping_mul(y),
        Div | Rem if y == 0 => return Err(String::from("integer division by zero")),
        Div => x.wrapping_div(y),
        Rem => x.wrapping_rem(y),
        Min => x.min(y),
        Max => x.max(y),
        Eq => (x == y) as i64,
        Ne => (x != y) as i64,
        Lt => (x < y) as i64,
        Le => (x <= y) as i64,
        Gt => (x > y) as i64,
        Ge => (x >= y) as i64,
        And => x & y,
        Or => x | y,
        _ => unreachable!("not a binary opcode"),
    })
}

fn is_cmp(op: Opcode) -> bool {
    use Opcode::*;
    matches!(op, Eq | Ne | Lt | Le | Gt | Ge)
}

pub fn binary(op: Opcode, a: &Value, b: &Value) -> Result<Value, String> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => int_op(op, *x, *y).map(Value::Int),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            let f = |v: &Value| match v {
                Value::Int(i) => *i as f32,
                Value::Float(f) => *f,
                _ => unreachable!(),
            };
            let r = float_op(op, f(a), f(b));
            Ok(if is_cmp(op) || matches!(op, Opcode::And | Opcode::Or) {
                Value::Int((r != 0.0) as i64)
            } else {
                Value::Float(r)
            })
        }
        (Value::Tile(t), s) if s.scalar().is_some() => {
            let v = s.scalar().unwrap_or(0.0);
            Ok(Value::Tile(t.map(|x| float_op(op, x, v))))
        }
        (s, Value::Tile(t)) if s.scalar().is_some() => {
            let v = s.scalar().unwrap_or(0.0);
            Ok(Value::Tile(t.map(|y| float_op(op, v, y))))
        }
        _ => {
            let (x, y) = match (a.as_tile(), b.as_tile()) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(format!("{} on {} and {}", op.name(), a.kind(), b.kind())),
            };
            x.zip_map(&y, |p, q| float_op(op, p, q))
                .map(Value::Tile)
                .ok_or_else(|| format!("{} of shapes {:?} and {:?}", op.name(), x.shape(), y.shape()))
        }
    }
}

pub fn unary(op: Opcode, a: &Value) -> Result<Value, String> {
    use Opcode::*;
    let f = |x: f32| -> f32 {
        match op {
            Exp => libm::expf(x),
            Log => libm::logf(x),
            Sqrt => libm::sqrtf(x),
            Rsqrt => 1.0 / libm::sqrtf(x),
            Not => b2f(x == 0.0),
            _ => unreachable!("not a unary opcode"),
        }
    };
    match a {
        Value::Int(i) if op == Not => Ok(Value::Int((*i == 0) as i64)),
        Value::Float(x) if op == Not => Ok(Value::Int((*x == 0.0) as i64)),
        Value::Int(i) => Ok(Value::Float(f(*i as f32))),
        Value::Float(x) => Ok(Value::Float(f(*x))),
        Value::Tile(t) => Ok(Value::Tile(t.map(f))),
        v => Err(format!("{} on {}", op.name(), v.kind())),
    }
}

pub fn select(c: &Value, a: &Value, b: &Value) -> Result<Value, String> {
    if let Some(t) = c.truthy() {
        return Ok(if t { a.clone() } else { b.clone() });
    }
    let fit = |v: &Value, like: &Tensor| match v.scalar() {
        Some(s) => Some(Tensor::full(like.shape(), s)),
        None => v.as_tile(),
    };
    match c {
        Value::Tile(ct) => match (fit(a, ct), fit(b, ct)) {
            (Some(x), Some(y)) => Tensor::select(ct, &x, &y)
            .map(Value::Tile)
                .ok_or_else(|| String::from("select operands do not broadcast")),
            _ => Err(format!("select between {} and {}", a.kind(), b.kind())),
        },
        _ => Err(format!("select on {}", c.kind())),
    }
}
