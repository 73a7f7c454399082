//! Case discovery, seeded input generation and oracle checking.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mimw_core::ir::{KernelProgram, ParamKind};
use mimw_core::sim::{fuzz, FuzzReport};
use mimw_core::{compile, simulate, PipelineOptions, SimConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::case::{Case, InputFill};
use crate::oracle;

/// Every `*.case` under `dir`, sorted by file name.
pub fn discover(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "case"))
        .collect();
    v.sort();
    Ok(v)
}

/// Input tensors for every non-output tensor parameter, drawn in
/// declaration order from one ChaCha8 stream seeded with `seed`.
pub fn generate_inputs(
    p: &KernelProgram,
    seed: u64,
    fills: &BTreeMap<String, InputFill>,
) -> BTreeMap<String, Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for param in &p.params {
        if let ParamKind::Tensor { shape, output: false } = &param.kind {
            let t = match fills.get(&param.name).copied().unwrap_or(InputFill::Uniform) {
                InputFill::Uniform => Tensor::random_uniform(shape, &mut rng),
                InputFill::Ones => Tensor::full(shape, 1.0),
                InputFill::Zeros => Tensor::zeros(shape),
            };
            out.insert(param.name.clone(), t);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    /// Relative error per checked output.
    pub errors: BTreeMap<String, f64>,
    pub tolerance: f64,
    /// Compile, simulation or oracle failure.
    pub failure: Option<String>,
    pub races: usize,
    pub fuzz: Option<FuzzReport>,
    pub elapsed: Duration,
}

impl CaseReport {
    pub fn max_error(&self) -> f64 {
        self.errors.values().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none()
            && self.races == 0
            && self.max_error() <= self.tolerance
            && self.fuzz.as_ref().is_none_or(FuzzReport::is_clean)
    }
}

/// Compile, simulate with the default schedule and check against the
/// oracle. With `fuzz_seeds > 0` the kernel is also run over that many
/// seeded schedules.
pub fn run_case(case: &Case, fuzz_seeds: u64) -> CaseReport {
    let start = Instant::now();
    let mut rep = CaseReport {
        name: case.name.clone(),
        errors: BTreeMap::new(),
        tolerance: case.tolerance,
        failure: None,
        races: 0,
        fuzz: None,
        elapsed: Duration::ZERO,
    };
    if let Err(e) = check(case, fuzz_seeds, &mut rep) {
        rep.failure = Some(e);
    }
    rep.elapsed = start.elapsed();
    rep
}

fn check(case: &Case, fuzz_seeds: u64, rep: &mut CaseReport) -> Result<(), String> {
    let src = std::fs::read_to_string(&case.kernel).map_err(|e| format!("{}: {e}", case.kernel.display()))?;
    let compiled = compile(&src, &PipelineOptions::default()).map_err(|e| {
        let mut s = e.to_string();
        for d in e.diagnostics() {
            s.push('\n');
            s.push_str(&d.render(false));
        }
        s
    })?;
    let r = &compiled.resolved;
    let inputs = generate_inputs(&r.program, case.seed, &case.inputs);
    let want = oracle::expected(&case.oracle, &r.program, &inputs)?;
    let res = simulate(r, &inputs, &SimConfig::default()).map_err(|e| e.to_string())?;
    rep.races = res.races.len();
    rep.errors = oracle::compare(&res.outputs, &want);
    if fuzz_seeds > 0 {
        rep.fuzz = Some(fuzz(r, &inputs, &SimConfig::default(), 0..fuzz_seeds, true));
    }
    Ok(())
}
