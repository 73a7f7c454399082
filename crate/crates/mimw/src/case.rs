//! `.case` sidecar files.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! | key | meaning |
//! |---|---|
//! | `kernel` | IR file, relative to the case file |
//! | `oracle` | reference function name |
//! | `seed` | input generator seed (default 0) |
//! | `tolerance` | relative error bound |
//! | `input.<param>` | `uniform` (default), `ones` or `zeros` |
//!
//! Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFill {
    Uniform,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub kernel: PathBuf,
    pub oracle: String,
    pub seed: u64,
    pub tolerance: f64,
    pub inputs: BTreeMap<String, InputFill>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
}

impl Case {
    pub fn load(path: &Path) -> Result<Case, CaseError> {
        let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io { path: path.to_owned(), source })?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut c = Case::parse(&name, &text)?;
        if let Some(dir) = path.parent() {
            c.kernel = dir.join(&c.kernel);
        }
        Ok(c)
    }

    pub fn parse(name: &str, text: &str) -> Result<Case, CaseError> {
        let (mut kernel, mut oracle, mut seed, mut tolerance) = (None, None, 0u64, None);
        let mut inputs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| CaseError::Syntax { line, message };
            let (k, v) = body.split_once('=').ok_or_else(|| err(format!("expected key = value, got `{body}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "kernel" => kernel = Some(PathBuf::from(v)),
                "oracle" => oracle = Some(v.to_string()),
                "seed" => seed = v.parse().map_err(|_| err(format!("bad seed `{v}`")))?,
                "tolerance" => tolerance = Some(v.parse::<f64>().map_err(|_| err(format!("bad tolerance `{v}`")))?),
                _ => {
                    let Some(param) = k.strip_prefix("input.") else {
                        return Err(err(format!("unknown key `{k}`")));
                    };
                    let fill = match v {
                        "uniform" => InputFill::Uniform,
                        "ones" => InputFill::Ones,
                        "zeros" => InputFill::Zeros,
                        _ => return Err(err(format!("unknown input fill `{v}`"))),
                    };
                    inputs.insert(param.to_string(), fill);
                }
            }
        }
        Ok(Case {
            name: name.to_string(),
            kernel: kernel.ok_or(CaseError::Missing("kernel"))?,
            oracle: oracle.ok_or(CaseError::Missing("oracle"))?,
            seed,
            tolerance: tolerance.ok_or(CaseError::Missing("tolerance"))?,
            inputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let c = Case::parse(
            "t",
            "# header\nkernel = k.mimw\noracle = gemm  # trailing\nseed = 9\ntolerance = 1e-4\ninput.k1 = ones\n",
        )
        .unwrap();
        assert_eq!(c.kernel, PathBuf::from("k.mimw"));
        assert_eq!(c.oracle, "gemm");
        assert_eq!(c.seed, 9);
        assert_eq!(c.tolerance, 1e-4);
        assert_eq!(c.inputs["k1"], InputFill::Ones);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        assert!(matches!(Case::parse("t", "kernel = a\nfoo = 1\n"), Err(CaseError::Syntax { line: 2, .. })));
        assert!(matches!(Case::parse("t", "kernel = a\noracle = gemm\n"), Err(CaseError::Missing("tolerance"))));
    }
}
