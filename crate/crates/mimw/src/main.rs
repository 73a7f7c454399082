use std::collections::BTreeMap;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mimw::{discover, generate_inputs, read_tensor, run_case, write_tensor, Case};
use mimw_core::ir::Stage;
use mimw_core::sim::{fuzz, Scheduler};
use mimw_core::{compile, simulate, CompileError, Compiled, Diagnostic, PipelineOptions, SimConfig, Tensor};

const EXIT_DIAGNOSTICS: u8 = 2;
const EXIT_FAULT: u8 = 3;
const EXIT_MISMATCH: u8 = 4;
const EXIT_USAGE: u8 = 1;

#[derive(Parser)]
#[command(name = "mimw", version, about = "Compile, simulate and check MIMW kernels")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the pass pipeline and report diagnostics.
    Check {
        kernel: PathBuf,
        /// Print the canonical IR after this stage.
        #[arg(long, value_parser = parse_stage)]
        dump_after: Option<Stage>,
        #[arg(long)]
        smem_capacity: Option<usize>,
    },
    /// Simulate once and write the outputs.
    Run {
        kernel: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Simulate once and write the event trace.
    Trace {
        kernel: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Trace destination; standard output when omitted.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Simulate under many seeded schedules and compare outputs.
    Fuzz {
        kernel: PathBuf,
        #[arg(long, default_value_t = 100)]
        schedules: u64,
        /// Input generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the configured latencies instead of drawing them per seed.
        #[arg(long)]
        fixed_latency: bool,
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Check every `*.case` in a directory against its oracle.
    Corpus {
        #[arg(long, default_value = "kernels")]
        dir: PathBuf,
        /// Also fuzz each case over this many schedules.
        #[arg(long, default_value_t = 0)]
        fuzz: u64,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Seeds both input generation and the seeded-random scheduler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_scheduler)]
    scheduler: Option<Scheduler>,
    /// Directory of `<param>.bin` input tensors; missing ones are generated.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Directory for `<param>.bin` outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    async_copy_latency: Option<u64>,
    #[arg(long)]
    clc_latency: Option<u64>,
    #[arg(long)]
    remote_arrive_delay: Option<u64>,
    #[arg(long)]
    mma_latency: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    smem_capacity: Option<usize>,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        let default_scheduler = if self.seed == 0 { Scheduler::RoundRobin } else { Scheduler::SeededRandom };
        let mut c = SimConfig {
            seed: self.seed,
            scheduler: self.scheduler.unwrap_or(default_scheduler),
            strict: self.strict,
            ..SimConfig::default()
        };
        if let Some(v) = self.async_copy_latency {
            c.async_copy_latency = v;
        }
        if let Some(v) = self.clc_latency {
            c.clc_latency = v;
        }
        if let Some(v) = self.remote_arrive_delay {
            c.remote_arrive_delay = v;
        }
        if let Some(v) = self.mma_latency {
            c.mma_latency = v;
        }
        if let Some(v) = self.max_steps {
            c.max_steps = v;
        }
        if let Some(v) = self.smem_capacity {
            c.shared_capacity_bytes = v;
        }
        c
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::from_tag(s).ok_or_else(|| {
        let tags: Vec<_> = Stage::ALL.iter().map(|s| s.tag()).collect();
        format!("unknown stage `{s}` (expected one of {})", tags.join(", "))
    })
}

fn parse_scheduler(s: &str) -> Result<Scheduler, String> {
    Scheduler::from_token(s).ok_or_else(|| format!("unknown scheduler `{s}` (round_robin, seeded_random)"))
}

fn color() -> bool {
    std::env::var("MIMW_COLOR").map_or(true, |v| v != "0") && std::io::stderr().is_terminal()
}

fn report(diags: &[Diagnostic]) {
    let c = color();
    for d in diags {
        eprint!("{}", d.render(c));
    }
}

/// Compiles, printing diagnostics. `Err(code)` when rejected.
fn build(path: &Path, capacity: Option<usize>) -> anyhow::Result<Result<Compiled, u8>> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut opts = PipelineOptions::default();
    if let Some(c) = capacity {
        opts.shared_capacity_bytes = c;
    }
    match compile(&src, &opts) {
        Ok(c) => {
            report(&c.warnings);
            Ok(Ok(c))
        }
        Err(CompileError::Parse(e)) => {
            eprintln!("{}: parse error at {e}", path.display());
            Ok(Err(EXIT_DIAGNOSTICS))
        }
        Err(e) => {
            report(e.diagnostics());
            eprintln!("{}: {e}", path.display());
            Ok(Err(EXIT_DIAGNOSTICS))
        }
    }
}

fn load_inputs(c: &Compiled, seed: u64, dir: Option<&Path>) -> anyhow::Result<BTreeMap<String, Tensor>> {
    let mut inputs = generate_inputs(&c.resolved.program, seed, &BTreeMap::new());
    if let Some(dir) = dir {
        for (name, t) in inputs.iter_mut() {
            let f = dir.join(format!("{name}.bin"));
            if f.exists() {
                let got = read_tensor(&f).with_context(|| format!("reading {}", f.display()))?;
                if got.shape() != t.shape() {
                    bail!("{}: shape {:?}, kernel declares {:?}", f.display(), got.shape(), t.shape());
                }
                *t = got;
            }
        }
    }
    Ok(inputs)
}

fn simulate_cmd(kernel: &Path, sim: &SimArgs, trace_out: Option<Option<&Path>>) -> anyhow::Result<u8> {
    let c = match build(kernel, sim.smem_capacity)? {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let inputs = load_inputs(&c, sim.seed, sim.inputs.as_deref())?;
    let mut cfg = sim.config();
    cfg.record_trace = trace_out.is_some();
    let (trace, summary, races, outputs, fault) = match simulate(&c.resolved, &inputs, &cfg) {
        Ok(r) => {
            let t = r.render_trace();
            (t, r.summary.to_json(), r.races, Some(r.outputs), None)
        }
        Err(e) => {
            let t = mimw_core::sim::render_trace(&e.trace, &e.summary);
            (t, e.summary.to_json(), e.races, None, Some(e.fault))
        }
    };
    match trace_out {
        Some(Some(p)) => std::fs::write(p, &trace).with_context(|| format!("writing {}", p.display()))?,
        Some(None) => print!("{trace}"),
        None => println!("{summary}"),
    }
    for r in &races {
        eprintln!("race: {r}");
    }
    if let Some(f) = fault {
        eprintln!("{}: {f}", kernel.display());
        return Ok(EXIT_FAULT);
    }
    if let (Some(dir), Some(outputs)) = (&sim.out, outputs) {
        std::fs::create_dir_all(dir)?;
        for (name, t) in &outputs {
            write_tensor(&dir.join(format!("{name}.bin")), t)?;
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.cmd {
        Cmd::Check { kernel, dump_after, smem_capacity } => {
            match build(&kernel, smem_capacity)? {
                Ok(c) => {
                    if let Some(st) = dump_after {
                        print!("{}", c.dumps[&st]);
                    }
                    Ok(0)
                }
                Err(code) => Ok(code),
            }
        }
        Cmd::Run { kernel, sim } => simulate_cmd(&kernel, &sim, None),
        Cmd::Trace { kernel, sim, trace_out } => simulate_cmd(&kernel, &sim, Some(trace_out.as_deref())),
        Cmd::Fuzz { kernel, schedules, seed, fixed_latency, inputs } => {
            let c = match build(&kernel, None)? {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            let ins = load_inputs(&c, seed, inputs.as_deref())?;
            let rep = fuzz(&c.resolved, &ins, &SimConfig::default(), 0..schedules, !fixed_latency);
            println!(
                "{} schedules: {} divergent, {} with races, {} faults",
                rep.runs,
                rep.divergent.len(),
                rep.races.len(),
                rep.faults.len()
            );
            for (s, r) in &rep.races {
                eprintln!("seed {s}: race: {r}");
            }
            for (s, f) in &rep.faults {
                eprintln!("seed {s}: {f}");
            }
            if !rep.divergent.is_empty() {
                eprintln!("divergent seeds: {:?}", rep.divergent);
                return Ok(EXIT_MISMATCH);
            }
            Ok(if rep.is_clean() { 0 } else { EXIT_FAULT })
        }
        Cmd::Corpus { dir, fuzz } => {
            let cases = discover(&dir).with_context(|| format!("listing {}", dir.display()))?;
            if cases.is_empty() {
                bail!("no *.case files in {}", dir.display());
            }
            let mut code = 0;
            for path in cases {
                let case = Case::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let rep = run_case(&case, fuzz);
                let status = if rep.passed() { "PASS" } else { "FAIL" };
                print!("{status} {:<24} max_rel_err={:.3e} tol={:.0e}", rep.name, rep.max_error(), rep.tolerance);
                if let Some(f) = &rep.fuzz {
                    print!(" fuzz_runs={} divergent={} racy={} faults={}", f.runs, f.divergent.len(), f.races.len(), f.faults.len());
                }
                println!(" ({} ms)", rep.elapsed.as_millis());
                if let Some(e) = &rep.failure {
                    eprintln!("{}: {e}", rep.name);
                    code = code.max(EXIT_FAULT);
                } else if rep.races > 0 || rep.fuzz.as_ref().is_some_and(|f| !f.races.is_empty() || !f.faults.is_empty()) {
                    code = code.max(EXIT_FAULT);
                } else if !rep.passed() {
                    code = code.max(EXIT_MISMATCH);
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
