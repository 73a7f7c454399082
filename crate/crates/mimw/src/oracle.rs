//! Oracle dispatch: maps a case's `oracle` name to the dense reference in
//! `mimw_core::kernels`, keyed by the kernel's output parameter names.

use std::collections::BTreeMap;

use mimw_core::ir::{KernelProgram, ParamKind};
use mimw_core::kernels;
use mimw_core::Tensor;

pub const NAMES: [&str; 6] = ["attention", "broadcast", "gemm", "layernorm", "multi_gemm", "simplicial"];

struct Args<'a> {
    p: &'a KernelProgram,
    inputs: &'a BTreeMap<String, Tensor>,
}

impl Args<'_> {
    fn t(&self, name: &str) -> Result<&Tensor, String> {
        self.inputs.get(name).ok_or_else(|| format!("oracle needs input tensor `{name}`"))
    }

    fn f(&self, name: &str) -> Result<f32, String> {
        match self.p.params.iter().find(|p| p.name == name).map(|p| &p.kind) {
            Some(ParamKind::F32(v)) => Ok(*v),
            _ => Err(format!("oracle needs f32 param `{name}`")),
        }
    }

    fn i(&self, name: &str) -> Result<usize, String> {
        match self.p.params.iter().find(|p| p.name == name).map(|p| &p.kind) {
            Some(ParamKind::I32(v)) if *v > 0 => Ok(*v as usize),
            _ => Err(format!("oracle needs positive i32 param `{name}`")),
        }
    }

    /// `prefix0`, `prefix1`, ... in order.
    fn shards(&self, prefix: &str) -> Vec<Tensor> {
        (0..).map_while(|d| self.inputs.get(&format!("{prefix}{d}")).cloned()).collect()
    }
}

/// Expected outputs for `oracle` given the kernel and its inputs.
pub fn expected(
    oracle: &str,
    p: &KernelProgram,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<BTreeMap<String, Tensor>, String> {
    let a = Args { p, inputs };
    let out = |pairs: Vec<(&str, Tensor)>| pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(match oracle {
        "gemm" => out(vec![("c", kernels::gemm(a.t("a")?, a.t("b")?))]),
        "multi_gemm" => {
            let (sa, sb) = (a.shards("a"), a.shards("b"));
            if sa.is_empty() || sa.len() != sb.len() {
                return Err("multi_gemm needs matching a0.. and b0.. shards".into());
            }
            out(vec![("c", kernels::multi_device_gemm(&sa, &sb))])
        }
        "layernorm" => {
            let r = kernels::layernorm(a.t("x")?, a.t("w")?, a.t("b")?, a.f("eps")?);
            out(vec![("y", r.y), ("mean", r.mean), ("rstd", r.rstd)])
        }
        "simplicial" => {
            let r = kernels::simplicial_attention(
                a.t("q")?,
                a.t("k1")?,
                a.t("k2")?,
                a.t("v1")?,
                a.t("v2")?,
                a.i("w1")?,
                a.i("w2")?,
                a.f("scale")?,
            );
            out(vec![("o", r.o), ("lse", r.m)])
        }
        "attention" => {
            // Plain attention kernels name their operands k/v/w; the degenerate
            // simplicial kernel streams k2/v2 under window w2.
            let pick = |x: &str, y: &str| a.t(x).or_else(|_| a.t(y));
            let w = a.i("w").or_else(|_| a.i("w2"))?;
            let r = kernels::attention(a.t("q")?, pick("k", "k2")?, pick("v", "v2")?, w, a.f("scale")?);
            out(vec![("o", r.o), ("lse", r.m)])
        }
        "broadcast" => {
            let src = a.t("a")?;
            let want = p
                .params
                .iter()
                .find_map(|q| match &q.kind {
                    ParamKind::Tensor { shape, output: true } => Some(shape.clone()),
                    _ => None,
                })
                .ok_or("broadcast needs an output tensor")?;
            let copies = want.iter().product::<usize>() / src.numel().max(1);
            let parts: Vec<&Tensor> = std::iter::repeat_n(src, copies).collect();
            let stacked = Tensor::concat2d(&parts, 0).ok_or("broadcast source must be 2-D")?;
            out(vec![("out", stacked)])
        }
        _ => return Err(format!("unknown oracle `{oracle}` (known: {})", NAMES.join(", "))),
    })
}

/// Largest relative error over the expected outputs. Oracle tensors are
/// compared by element order when only the shape's unit axes differ.
pub fn compare(got: &BTreeMap<String, Tensor>, want: &BTreeMap<String, Tensor>) -> BTreeMap<String, f64> {
    want.iter()
        .map(|(k, w)| {
            let err = match got.get(k) {
                Some(g) if g.numel() == w.numel() => kernels::relative_error(g, &w.reshape(g.shape()).unwrap()),
                _ => f64::INFINITY,
            };
            (k.clone(), err)
        })
        .collect()
}
