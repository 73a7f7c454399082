//! The simulated machine: CTAs, streams, the async event queue and the
//! scheduler loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::race::{BarrierClock, Race, RaceDetector, RaceKind, VClock};
use super::trace::{Summary, TraceEvent};
use super::value::{binary, select, unary, Value};
use super::{BlockedTask, Scheduler, SimConfig, SimError, SimFault, SimResult};
use crate::clc::{ClcContext, ConsumerStep, ProducerStep, TileQueue};
use crate::ir::{Inst, KernelProgram, Opcode, Operand, ParamKind, CLC_SLOT_BYTES};
use crate::layout::{LayoutEncoding, ResolvedProgram};
use crate::sync::MbarrierState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Sym {
    Buf(usize),
    Bar(usize),
    Tensor(usize),
    F32(f32),
    I32(i64),
}

struct Cta {
    cluster: usize,
    rank: usize,
    coords: [u32; 3],
    /// `[storage][stage]`; aliased buffers share one storage.
    smem: Vec<Vec<Tensor>>,
    bars: Vec<Vec<MbarrierState>>,
    bar_clocks: Vec<Vec<BarrierClock>>,
    clc: Vec<ClcContext>,
    /// Per context: (empty, full) clocks per stage.
    clc_clocks: Vec<(Vec<BarrierClock>, Vec<BarrierClock>)>,
    cb_gen: u64,
    /// Prologue agent and its clock value at barrier initialization.
    init_epoch: (usize, u64),
}

enum FrameKind<'p> {
    Plain,
    For { var: &'p str, cur: i64, hi: i64, step: i64 },
    While { cond: &'p Operand },
}

struct Frame<'p> {
    insts: &'p [Inst],
    pc: usize,
    kind: FrameKind<'p>,
}

enum Pending {
    None,
    ClusterBarrier { gen: u64 },
    Collective,
    CollectiveDone(Tensor, VClock),
}

struct Stream<'p> {
    cta: usize,
    task: Option<usize>,
    replica: u32,
    label: String,
    regs: BTreeMap<&'p str, Value>,
    frames: Vec<Frame<'p>>,
    started: bool,
    done: bool,
    steps: u64,
    agent: usize,
    clock: VClock,
    mma_pending: usize,
    mma_last: Option<Tensor>,
    mma_free_at: u64,
    pending: Pending,
    coll_seq: BTreeMap<Vec<i64>, u64>,
}

enum Event {
    CopyLand {
        targets: Vec<usize>,
        buf: usize,
        stage: usize,
        tile: Tensor,
        bar: usize,
        index: usize,
        agent: usize,
        clock: VClock,
        site: String,
    },
    RemoteStore {
        cta: usize,
        buf: usize,
        stage: usize,
        tile: Tensor,
        bar: usize,
        index: usize,
        agent: usize,
        clock: VClock,
        site: String,
    },
    RemoteArrive {
        cta: usize,
        bar: usize,
        index: usize,
        n: u32,
        clock: VClock,
        site: String,
    },
    ClcResponse {
        cta: usize,
        ctx: usize,
        stage: usize,
        tile: i64,
    },
    MmaDone {
        stream: usize,
        acc: Tensor,
    },
    CollectiveDeliver {
        stream: usize,
        acc: Tensor,
        clock: VClock,
    },
}

struct Rendezvous {
    /// rank → (stream, a, b, acc)
    arrived: BTreeMap<i64, (usize, Tensor, Tensor, Tensor)>,
    clock: VClock,
}

enum Flow<'p> {
    Next,
    Stay,
    Push(Frame<'p>),
}

struct Machine<'p> {
    p: &'p KernelProgram,
    r: &'p ResolvedProgram,
    cfg: SimConfig,
    syms: BTreeMap<&'p str, Sym>,
    storage_of: Vec<usize>,
    ctas: Vec<Cta>,
    /// `[cluster][rank]` → cta.
    members: Vec<Vec<usize>>,
    tensors: Vec<Option<Tensor>>,
    load_counts: Vec<Vec<u32>>,
    streams: Vec<Stream<'p>>,
    events: BTreeMap<(u64, u64), Event>,
    seq: u64,
    step: u64,
    next_agent: usize,
    queue: Option<TileQueue>,
    cluster_sync: BTreeMap<(usize, u64), (BTreeSet<usize>, VClock)>,
    rendezvous: BTreeMap<(usize, Vec<i64>, u64), Rendezvous>,
    races: Vec<Race>,
    race_seen: BTreeSet<Race>,
    detector: RaceDetector,
    trace: Vec<TraceEvent>,
    summary: Summary,
    warned: BTreeSet<String>,
    rr_next: usize,
    rng: ChaCha8Rng,
}

fn storage_roots(p: &KernelProgram) -> Vec<usize> {
    let idx = |n: &str| p.buffers.iter().position(|b| b.name == n);
    let mut parent: Vec<usize> = (0..p.buffers.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    for inst in &p.prologue {
        if inst.op == Opcode::LocalAlias {
            if let (Some(x), Some(y)) = (
                inst.args.first().and_then(Operand::sym).and_then(idx),
                inst.args.get(1).and_then(Operand::sym).and_then(idx),
            ) {
                let (a, b) = (find(&mut parent, x), find(&mut parent, y));
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
    }
    (0..parent.len()).map(|i| find(&mut parent, i)).collect()
}

fn clc_stage_total(p: &KernelProgram) -> usize {
    let mut n = 0;
    p.walk(|_, _, i| {
        if i.op == Opcode::ClcCreateContext {
            n += i.attr_int("stages").unwrap_or(0).max(0) as usize;
        }
    });
    n
}

/// Runs `r` on `inputs`. Output tensors not present in `inputs` start as
/// zeros.
pub fn simulate(
    r: &ResolvedProgram,
    inputs: &BTreeMap<String, Tensor>,
    cfg: &SimConfig,
) -> Result<SimResult, SimError> {
    let mut m = match Machine::new(r, inputs, cfg) {
        Ok(m) => m,
        Err(fault) => {
            return Err(SimError {
                fault,
                trace: Vec::new(),
                summary: Summary::default(),
                races: Vec::new(),
            })
        }
    };
    match m.run() {
        Ok(()) => Ok(m.finish()),
        Err(fault) => {
            m.fill_summary();
            Err(SimError {
                fault,
                trace: m.trace,
                summary: m.summary,
                races: m.races,
            })
        }
    }
}

impl<'p> Machine<'p> {
    fn new(r: &'p ResolvedProgram, inputs: &BTreeMap<String, Tensor>, cfg: &SimConfig) -> Result<Self, SimFault> {
        let p = &r.program;
        let storage_of = storage_roots(p);
        let mut bytes = 0;
        for (i, b) in p.buffers.iter().enumerate() {
            if storage_of[i] == i {
                bytes += b.total_bytes();
            }
        }
        bytes += CLC_SLOT_BYTES * clc_stage_total(p);
        if bytes > cfg.shared_capacity_bytes {
            return Err(SimFault::CapacityExceeded {
                bytes,
                capacity: cfg.shared_capacity_bytes,
            });
        }
        let mut syms = BTreeMap::new();
        for (i, b) in p.buffers.iter().enumerate() {
            syms.insert(b.name.as_str(), Sym::Buf(i));
        }
        for (i, b) in p.barriers.iter().enumerate() {
            syms.insert(b.name.as_str(), Sym::Bar(i));
        }
        let mut tensors = Vec::new();
        let mut load_counts = Vec::new();
        let fault = |message: String| SimFault::Runtime {
            cta: 0,
            task: String::from("launch"),
            line: 0,
            message,
        };
        for (i, prm) in p.params.iter().enumerate() {
            match &prm.kind {
                ParamKind::Tensor { shape, output } => {
                    let t = match inputs.get(&prm.name) {
                        Some(t) if t.shape() == shape.as_slice() => t.clone(),
                        Some(t) => {
                            return Err(fault(format!(
                                "input @{} has shape {:?}, expected {:?}",
                                prm.name,
                                t.shape(),
                                shape
                            )))
                        }
                        None if *output => Tensor::zeros(shape),
                        None => return Err(fault(format!("missing input tensor @{}", prm.name))),
                    };
                    load_counts.push(vec![0; t.numel()]);
                    tensors.push(Some(t));
                    syms.insert(prm.name.as_str(), Sym::Tensor(i));
                }
                ParamKind::F32(v) => {
                    tensors.push(None);
                    load_counts.push(Vec::new());
                    syms.insert(prm.name.as_str(), Sym::F32(*v));
                }
                ParamKind::I32(v) => {
                    tensors.push(None);
                    load_counts.push(Vec::new());
                    syms.insert(prm.name.as_str(), Sym::I32(*v));
                }
            }
        }

        let [gx, gy, gz] = p.grid;
        let [cx, cy, cz] = p.cluster;
        let (ncx, ncy) = (gx / cx, gy / cy);
        let nclusters = (p.grid_ctas() / p.cluster_size()) as usize;
        let mut members = vec![vec![0usize; p.cluster_size() as usize]; nclusters];
        let mut ctas = Vec::new();
        for lin in 0..p.grid_ctas() {
            let (x, y, z) = (lin % gx, (lin / gx) % gy, lin / (gx * gy));
            let cluster = ((x / cx) + ncx * ((y / cy) + ncy * (z / cz))) as usize;
            let rank = ((x % cx) + cx * ((y % cy) + cy * (z % cz))) as usize;
            members[cluster][rank] = lin as usize;
            let smem = p
                .buffers
                .iter()
                .map(|b| (0..b.stages).map(|_| Tensor::zeros(&b.shape)).collect())
                .collect();
            let bars = p.barriers.iter().map(|b| vec![MbarrierState::default(); b.count]).collect();
            let bar_clocks = p.barriers.iter().map(|b| vec![BarrierClock::default(); b.count]).collect();
            ctas.push(Cta {
                cluster,
                rank,
                coords: [x, y, z],
                smem,
                bars,
                bar_clocks,
                clc: Vec::new(),
                clc_clocks: Vec::new(),
                cb_gen: 0,
                init_epoch: (usize::MAX, u64::MAX),
            });
        }
        let _ = gz;
        let mut m = Machine {
            p,
            r,
            cfg: cfg.clone(),
            syms,
            storage_of,
            ctas,
            members,
            tensors,
            load_counts,
            streams: Vec::new(),
            events: BTreeMap::new(),
            seq: 0,
            step: 0,
            next_agent: 0,
            queue: None,
            cluster_sync: BTreeMap::new(),
            rendezvous: BTreeMap::new(),
            races: Vec::new(),
            race_seen: BTreeSet::new(),
            detector: RaceDetector::default(),
            trace: Vec::new(),
            summary: Summary::default(),
            warned: BTreeSet::new(),
            rr_next: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        for cta in 0..m.ctas.len() {
            let agent = m.new_agent();
            let mut clock = VClock::default();
            clock.set(agent, 1);
            m.streams.push(Stream {
                cta,
                task: None,
                replica: 0,
                label: String::from("prologue"),
                regs: BTreeMap::new(),
                frames: vec![Frame {
                    insts: &p.prologue,
                    pc: 0,
                    kind: FrameKind::Plain,
                }],
                started: false,
                done: false,
                steps: 0,
                agent,
                clock,
                mma_pending: 0,
                mma_last: None,
                mma_free_at: 0,
                pending: Pending::None,
                coll_seq: BTreeMap::new(),
            });
        }
        Ok(m)
    }

    fn new_agent(&mut self) -> usize {
        self.next_agent += 1;
        self.next_agent - 1
    }

    fn emit(&mut self, cta: usize, task: &str, event: &str, detail: String) {
        if self.cfg.record_trace {
            self.trace.push(TraceEvent {
                step: self.step,
                cluster: self.ctas[cta].cluster,
                cta,
                task: String::from(task),
                event: String::from(event),
                detail,
            });
        }
    }

    fn warn(&mut self, msg: String) {
        if self.warned.insert(msg.clone()) {
            self.summary.warnings.push(msg);
        }
    }

    fn race(&mut self, race: Race) -> Result<(), SimFault> {
        if !self.race_seen.insert(race.clone()) {
            return Ok(());
        }
        let cta = race.cta;
        self.emit(cta, "detector", "race", format!("{race}"));
        self.races.push(race.clone());
        if self.cfg.strict {
            return Err(SimFault::RaceDetected(race));
        }
        Ok(())
    }

    fn site(&self, s: usize, inst: &Inst) -> String {
        let st = &self.streams[s];
        format!("cta{}/{}:{} {}", st.cta, st.label, inst.line, inst.op.name())
    }

    fn schedule(&mut self, delay: u64, ev: Event) -> Result<(), SimFault> {
        if delay == 0 {
            return self.apply(ev);
        }
        self.schedule_at(self.step + delay, ev);
        Ok(())
    }

    fn schedule_at(&mut self, due: u64, ev: Event) {
        self.seq += 1;
        self.events.insert((due, self.seq), ev);
    }

    // ---- memory helpers -------------------------------------------------

    fn access(&mut self, cta: usize, buf: usize, stage: usize, write: bool, agent: usize, clock: &VClock, site: &str) -> Result<(), SimFault> {
        if !self.cfg.race_detector {
            return Ok(());
        }
        let storage = self.storage_of[buf];
        let key = (cta, storage, stage);
        let hit = if write {
            self.detector.write(key, agent, clock, site)
        } else {
            self.detector.read(key, agent, clock, site)
        };
        if let Some((kind, first)) = hit {
            let (first, second) = if kind == RaceKind::WriteRead || kind == RaceKind::WriteWrite || kind == RaceKind::ReadWrite {
                (first, String::from(site))
            } else {
                (String::new(), String::from(site))
            };
            self.race(Race {
                kind,
                cta,
                object: self.p.buffers[storage].name.clone(),
                index: stage,
                first,
                second,
            })?;
        }
        Ok(())
    }

    fn bank_check(&mut self, buf: usize) {
        let b = &self.p.buffers[buf];
        if self.r.encoding_of(&b.name) == LayoutEncoding::RowMajor && b.shape.last().is_some_and(|&d| d % 32 == 0) {
            self.summary.bank_conflicts += 1;
        }
    }

    /// Reports arrivals on a barrier that is not initialized, or whose
    /// initialization does not happen-before the arrival. Returns whether
    /// the arrival can be applied.
    fn check_init(&mut self, cta: usize, bar: usize, index: usize, clock: &VClock, site: &str) -> Result<bool, SimFault> {
        let live = self.ctas[cta].bars[bar][index].init_done;
        let (agent, t) = self.ctas[cta].init_epoch;
        let ordered = live && clock.get(agent) >= t;
        if !ordered && (!live || self.cfg.race_detector) {
            self.race(Race {
                kind: RaceKind::UninitializedBarrier,
                cta,
                object: self.p.barriers[bar].name.clone(),
                index,
                first: String::new(),
                second: String::from(site),
            })?;
        }
        Ok(live)
    }

    /// Arrival of `n` on a barrier instance with release clock `clock`.
    fn arrive_on(&mut self, cta: usize, bar: usize, index: usize, n: u32, clock: &VClock, site: &str) -> Result<bool, SimFault> {
        if !self.check_init(cta, bar, index, clock, site)? {
            return Ok(false);
        }
        let st = &mut self.ctas[cta].bars[bar][index];
        match st.arrive(n) {
            Ok(t) => {
                let c = &mut self.ctas[cta].bar_clocks[bar][index];
                c.release(clock);
                if t.flipped {
                    c.complete();
                }
                Ok(t.flipped)
            }
            Err(e) => Err(SimFault::Runtime {
                cta,
                task: String::from(site),
                line: 0,
                message: format!("{e} on {}[{index}]", self.p.barriers[bar].name),
            }),
        }
    }

    fn complete_bytes_on(&mut self, cta: usize, bar: usize, index: usize, bytes: u64, clock: &VClock, site: &str) -> Result<(), SimFault> {
        if !self.check_init(cta, bar, index, clock, site)? {
            return Ok(());
        }
        let st = &mut self.ctas[cta].bars[bar][index];
        let t = st.complete_bytes(bytes).expect("initialized");
        let c = &mut self.ctas[cta].bar_clocks[bar][index];
        c.release(clock);
        if t.flipped {
            c.complete();
        }
        if t.early_bytes {
            let name = &self.p.barriers[bar].name;
            self.warn(format!(
                "cta {cta}: {bytes} bytes completed on {name}[{index}] before barrier_expect_bytes"
            ));
        }
        Ok(())
    }

    // ---- events ---------------------------------------------------------

    fn apply(&mut self, ev: Event) -> Result<(), SimFault> {
        match ev {
            Event::CopyLand {
                targets,
                buf,
                stage,
                tile,
                bar,
                index,
                agent,
                clock,
                site,
            } => {
                let storage = self.storage_of[buf];
                let bytes = (tile.numel() * 4) as u64;
                for &cta in &targets {
                    self.access(cta, buf, stage, true, agent, &clock, &site)?;
                    self.ctas[cta].smem[storage][stage] = tile.clone();
                    let name = &self.p.buffers[buf].name;
                    let detail = format!("{name}[{stage}] {bytes} bytes");
                    self.emit(cta, "tma", "copy_complete", detail);
                    self.complete_bytes_on(cta, bar, index, bytes, &clock, &site)?;
                }
            }
            Event::RemoteStore {
                cta,
                buf,
                stage,
                tile,
                bar,
                index,
                agent,
                clock,
                site,
            } => {
                let storage = self.storage_of[buf];
                self.access(cta, buf, stage, true, agent, &clock, &site)?;
                self.ctas[cta].smem[storage][stage] = tile;
                let detail = format!("{}[{stage}]", self.p.buffers[buf].name);
                self.emit(cta, "dsm", "remote_store_complete", detail);
                self.arrive_on(cta, bar, index, 1, &clock, &site)?;
            }
            Event::RemoteArrive {
                cta,
                bar,
                index,
                n,
                clock,
                site,
            } => {
                let detail = format!("{}[{index}] count {n}", self.p.barriers[bar].name);
                self.emit(cta, "dsm", "remote_arrive", detail);
                self.arrive_on(cta, bar, index, n, &clock, &site)?;
            }
            Event::ClcResponse { cta, ctx, stage, tile } => {
                self.emit(cta, "clc", "clc_response", format!("tile_id={tile}"));
                self.summary.clc_dispatch.entry(cta).or_default().push(tile);
                let flipped = self.ctas[cta].clc[ctx].deliver(stage, tile).expect("initialized");
                if flipped {
                    self.ctas[cta].clc_clocks[ctx].1[stage].complete();
                }
            }
            Event::MmaDone { stream, acc } => {
                let s = &mut self.streams[stream];
                s.mma_pending -= 1;
                s.mma_last = Some(acc);
                let (cta, label) = (s.cta, s.label.clone());
                self.emit(cta, &label, "mma_complete", String::new());
            }
            Event::CollectiveDeliver { stream, acc, clock } => {
                self.streams[stream].pending = Pending::CollectiveDone(acc, clock);
            }
        }
        Ok(())
    }

    // ---- operand evaluation --------------------------------------------

    fn val(&self, s: usize, op: &Operand) -> Result<Value, String> {
        let st = &self.streams[s];
        match op {
            Operand::Int(i) => Ok(Value::Int(*i)),
            Operand::Float(f) => Ok(Value::Float(*f)),
            Operand::Reg(r) => st
                .regs
                .get(r.as_str())
                .cloned()
                .ok_or_else(|| format!("read of unset register %{r}")),
            Operand::Sym(name) => match self.syms.get(name.as_str()) {
                Some(Sym::Buf(b)) => Ok(Value::Buf {
                    cta: st.cta,
                    buf: *b,
                    stage: None,
                }),
                Some(Sym::Bar(b)) => Ok(Value::Bar {
                    cta: st.cta,
                    bar: *b,
                    index: None,
                }),
                Some(Sym::Tensor(t)) => Ok(Value::Tensor(*t)),
                Some(Sym::F32(v)) => Ok(Value::Float(*v)),
                Some(Sym::I32(v)) => Ok(Value::Int(*v)),
                None => Err(format!("undeclared symbol @{name}")),
            },
            Operand::Ident(i) => Err(format!("bare identifier `{i}`")),
        }
    }

    fn int(&self, s: usize, op: &Operand) -> Result<i64, String> {
        match self.val(s, op)? {
            Value::Int(i) => Ok(i),
            v => Err(format!("expected int, found {}", v.kind())),
        }
    }

    fn tile(&self, s: usize, op: &Operand) -> Result<Tensor, String> {
        match self.val(s, op)? {
            Value::Tile(t) => Ok(t),
            v => Err(format!("expected tile, found {}", v.kind())),
        }
    }

    fn bar(&self, s: usize, op: &Operand) -> Result<(usize, usize, usize), String> {
        match self.val(s, op)? {
            Value::Bar { cta, bar, index } => Ok((cta, bar, index.unwrap_or(0))),
            v => Err(format!("expected barrier, found {}", v.kind())),
        }
    }

    fn view(&self, s: usize, op: &Operand) -> Result<(usize, usize, usize), String> {
        match self.val(s, op)? {
            Value::Buf { cta, buf, stage } => Ok((cta, buf, stage.unwrap_or(0))),
            v => Err(format!("expected buffer view, found {}", v.kind())),
        }
    }

    fn ctx(&self, s: usize, op: &Operand) -> Result<usize, String> {
        match self.val(s, op)? {
            Value::Ctx(c) => Ok(c),
            v => Err(format!("expected clc context, found {}", v.kind())),
        }
    }

    fn peer(&self, s: usize, of_cta: usize, rank: i64) -> Result<usize, String> {
        let _ = s;
        let c = &self.ctas[of_cta];
        let members = &self.members[c.cluster];
        if rank < 0 || rank as usize >= members.len() {
            return Err(format!("rank {rank} outside cluster of size {}", members.len()));
        }
        Ok(members[rank as usize])
    }

    fn bar_label(&self, bar: usize, index: usize) -> String {
        format!("{}[{index}]", self.p.barriers[bar].name)
    }

    // ---- scheduling -----------------------------------------------------

    fn current(&self, s: usize) -> Option<&'p Inst> {
        let f = self.streams[s].frames.last()?;
        f.insts.get(f.pc)
    }

    /// Why stream `s` cannot execute its next instruction right now.
    fn wait_reason(&self, s: usize) -> Option<String> {
        let st = &self.streams[s];
        if st.done {
            return None;
        }
        match &st.pending {
            Pending::ClusterBarrier { gen } => {
                let cl = self.ctas[st.cta].cluster;
                let n = self.cluster_sync.get(&(cl, *gen)).map_or(0, |x| x.0.len());
                return (n < self.members[cl].len()).then(|| format!("cluster_barrier ({n}/{} arrived)", self.members[cl].len()));
            }
            Pending::Collective => return Some(String::from("collective_dot rendezvous")),
            _ => {}
        }
        if !st.started {
            return None;
        }
        let inst = self.current(s)?;
        let a = &inst.args;
        match inst.op {
            Opcode::BarrierWait => {
                let (cta, bar, index) = self.bar(s, &a[0]).ok()?;
                let parity = self.int(s, &a[1]).ok()?;
                let b = &self.ctas[cta].bars[bar][index];
                (!b.ready((parity & 1) as u8)).then(|| format!("barrier_wait {} parity {}", self.bar_label(bar, index), parity & 1))
            }
            Opcode::ClcProducer => {
                let c = self.ctx(s, &a[0]).ok()?;
                let ctx = &self.ctas[st.cta].clc[c];
                let mut probe = ctx.clone();
                match probe.produce(s) {
                    Ok(ProducerStep::Blocked { stage }) => Some(format!("clc_producer empty slot {stage}")),
                    _ => None,
                }
            }
            Opcode::ClcConsumer => {
                let c = self.ctx(s, &a[0]).ok()?;
                let ctx = &self.ctas[st.cta].clc[c];
                let stage = ctx.consumer_stage(s);
                let mut probe = ctx.clone();
                match probe.consume(s) {
                    Ok(ConsumerStep::Blocked { .. }) => Some(format!("clc_consumer full slot {stage}")),
                    _ => None,
                }
            }
            Opcode::AsyncDotWait => {
                let n = a.first().and_then(Operand::int).unwrap_or(0).max(0) as usize;
                (st.mma_pending > n).then(|| format!("async_dot_wait {} outstanding", st.mma_pending))
            }
            _ => None,
        }
    }

    fn runnable(&self) -> Vec<usize> {
        (0..self.streams.len())
            .filter(|&s| !self.streams[s].done && self.wait_reason(s).is_none())
            .collect()
    }

    fn run(&mut self) -> Result<(), SimFault> {
        loop {
            while let Some(entry) = self.events.first_entry() {
                if entry.key().0 > self.step {
                    break;
                }
                let ev = entry.remove();
                self.apply(ev)?;
            }
            let ready = self.runnable();
            if ready.is_empty() {
                if let Some((&(due, _), _)) = self.events.first_key_value() {
                    self.step = due;
                    continue;
                }
                return self.quiescent();
            }
            let s = match self.cfg.scheduler {
                Scheduler::RoundRobin => {
                    let s = ready.iter().copied().find(|&s| s >= self.rr_next).unwrap_or(ready[0]);
                    self.rr_next = s + 1;
                    s
                }
                Scheduler::SeededRandom => ready[self.rng.random_range(0..ready.len())],
            };
            self.visit(s)?;
            self.step += 1;
            if self.step >= self.cfg.max_steps {
                return Err(SimFault::StepLimit { steps: self.step });
            }
        }
    }

    fn quiescent(&mut self) -> Result<(), SimFault> {
        if self.streams.iter().all(|s| s.done) {
            return Ok(());
        }
        if let Some(((cluster, group, _), rv)) = self.rendezvous.iter().next() {
            let missing = group.iter().copied().filter(|r| !rv.arrived.contains_key(r)).collect();
            return Err(SimFault::CollectiveMismatch {
                cluster: *cluster,
                group: group.clone(),
                missing,
                detail: String::new(),
            });
        }
        let blocked = (0..self.streams.len())
            .filter(|&s| !self.streams[s].done)
            .map(|s| BlockedTask {
                cta: self.streams[s].cta,
                task: self.streams[s].label.clone(),
                on: self.wait_reason(s).unwrap_or_else(|| String::from("unknown")),
            })
            .collect();
        Err(SimFault::Deadlock { blocked })
    }

    fn visit(&mut self, s: usize) -> Result<(), SimFault> {
        self.streams[s].steps += 1;
        if !self.streams[s].started {
            self.streams[s].started = true;
            let cta = self.streams[s].cta;
            let agent = self.streams[s].agent;
            let c = &mut self.ctas[cta];
            c.init_epoch = (agent, self.streams[s].clock.get(agent));
            for (bi, b) in self.p.barriers.iter().enumerate() {
                for st in c.bars[bi].iter_mut() {
                    st.init(b.arrive);
                }
            }
            self.emit(cta, "prologue", "init_barriers", format!("{} barrier(s)", self.p.barriers.len()));
            return self.settle(s);
        }
        let Some(inst) = self.current(s) else {
            return self.settle(s);
        };
        let flow = self.exec(s, inst).map_err(|message| SimFault::Runtime {
            cta: self.streams[s].cta,
            task: self.streams[s].label.clone(),
            line: inst.line,
            message,
        })?;
        match flow? {
            Flow::Next => self.streams[s].frames.last_mut().expect("frame").pc += 1,
            Flow::Stay => {}
            Flow::Push(f) => {
                let st = &mut self.streams[s];
                st.frames.last_mut().expect("frame").pc += 1;
                st.frames.push(f);
            }
        }
        self.settle(s)
    }

    /// Unwinds finished blocks and loops until the stream has an
    /// instruction to run or is done.
    fn settle(&mut self, s: usize) -> Result<(), SimFault> {
        loop {
            let Some(f) = self.streams[s].frames.last() else {
                return self.finish_stream(s);
            };
            if f.pc < f.insts.len() {
                return Ok(());
            }
            let st = &mut self.streams[s];
            let f = st.frames.last_mut().expect("frame");
            match &mut f.kind {
                FrameKind::Plain => {
                    st.frames.pop();
                }
                FrameKind::For { var, cur, hi, step } => {
                    *cur += *step;
                    if (*step > 0 && *cur < *hi) || (*step < 0 && *cur > *hi) {
                        let (v, c) = (*var, *cur);
                        f.pc = 0;
                        st.regs.insert(v, Value::Int(c));
                    } else {
                        st.frames.pop();
                    }
                }
                FrameKind::While { cond } => {
                    let cond = *cond;
                    let t = self.val(s, cond).and_then(|v| v.truthy().ok_or_else(|| String::from("while condition is not a scalar")));
                    let t = t.map_err(|message| SimFault::Runtime {
                        cta: self.streams[s].cta,
                        task: self.streams[s].label.clone(),
                        line: 0,
                        message,
                    })?;
                    let st = &mut self.streams[s];
                    if t {
                        st.frames.last_mut().expect("frame").pc = 0;
                    } else {
                        st.frames.pop();
                    }
                }
            }
        }
    }

    fn finish_stream(&mut self, s: usize) -> Result<(), SimFault> {
        if self.streams[s].done {
            return Ok(());
        }
        self.streams[s].done = true;
        let (cta, label) = (self.streams[s].cta, self.streams[s].label.clone());
        if self.streams[s].task.is_some() || self.p.tasks.is_empty() {
            self.emit(cta, &label, "exit", String::new());
            return Ok(());
        }
        let infos = self.p.streams();
        self.emit(cta, "prologue", "fork", format!("{} stream(s)", infos.len()));
        for info in infos {
            let agent = self.new_agent();
            let parent = &self.streams[s];
            let mut clock = parent.clock.clone();
            clock.set(agent, 1);
            let mut regs = parent.regs.clone();
            regs.insert("replica_id", Value::Int(i64::from(info.replica)));
            let stream = Stream {
                cta,
                task: Some(info.task),
                replica: info.replica,
                label: info.label,
                regs,
                frames: vec![Frame {
                    insts: &self.p.tasks[info.task].body,
                    pc: 0,
                    kind: FrameKind::Plain,
                }],
                started: true,
                done: false,
                steps: 0,
                agent,
                clock,
                mma_pending: 0,
                mma_last: None,
                mma_free_at: 0,
                pending: Pending::None,
                coll_seq: BTreeMap::new(),
            };
            self.streams.push(stream);
            let idx = self.streams.len() - 1;
            self.settle(idx)?;
        }
        Ok(())
    }

    // ---- instructions ---------------------------------------------------

    fn set(&mut self, s: usize, inst: &'p Inst, v: Value) {
        if let Some(d) = &inst.dst {
            self.streams[s].regs.insert(d.as_str(), v);
        }
    }

    fn release_tick(&mut self, s: usize) {
        let st = &mut self.streams[s];
        st.clock.tick(st.agent);
    }

    /// Executes one instruction. The outer error is a runtime fault in the
    /// program; the inner one a simulator-level fault.
    fn exec(&mut self, s: usize, inst: &'p Inst) -> Result<Result<Flow<'p>, SimFault>, String> {
        use Opcode::*;
        let a = &inst.args;
        let cta = self.streams[s].cta;
        let label = self.streams[s].label.clone();
        let mut detail = String::new();
        let flow = match inst.op {
            Mov | ReleaseLayout | LayoutConvert => {
                let v = self.val(s, &a[0])?;
                self.set(s, inst, v);
                Flow::Next
            }
            op if op.is_binary() => {
                let v = binary(op, &self.val(s, &a[0])?, &self.val(s, &a[1])?)?;
                self.set(s, inst, v);
                Flow::Next
            }
            Not | Exp | Log | Rsqrt | Sqrt => {
                let v = unary(inst.op, &self.val(s, &a[0])?)?;
                self.set(s, inst, v);
                Flow::Next
            }
            Select => {
                let v = select(&self.val(s, &a[0])?, &self.val(s, &a[1])?, &self.val(s, &a[2])?)?;
                self.set(s, inst, v);
                Flow::Next
            }
            CtaRank => {
                let r = self.ctas[cta].rank as i64;
                self.set(s, inst, Value::Int(r));
                Flow::Next
            }
            ClusterSize => {
                self.set(s, inst, Value::Int(i64::from(self.p.cluster_size())));
                Flow::Next
            }
            ReplicaId => {
                let r = i64::from(self.streams[s].replica);
                self.set(s, inst, Value::Int(r));
                Flow::Next
            }
            ProgramId | NumPrograms => {
                let ax = inst.attr_int("axis").unwrap_or(0) as usize;
                let v = if inst.op == ProgramId {
                    self.ctas[cta].coords[ax]
                } else {
                    self.p.grid[ax]
                };
                self.set(s, inst, Value::Int(i64::from(v)));
                Flow::Next
            }
            Zeros | Full | Iota => {
                let shape: Vec<usize> = inst.attr_ints("shape").unwrap_or_default().iter().map(|&x| x as usize).collect();
                let t = match inst.op {
                    Zeros => Tensor::zeros(&shape),
                    Full => {
                        let v = match self.val(s, &a[0])? {
                            Value::Int(i) => i as f32,
                            Value::Float(f) => f,
                            v => return Err(format!("full of {}", v.kind())),
                        };
                        Tensor::full(&shape, v)
                    }
                    _ => Tensor::iota(&shape, inst.attr_int("axis").unwrap_or(0) as usize),
                };
                self.set(s, inst, Value::Tile(t));
                Flow::Next
            }
            Sum | ReduceMax => {
                let t = self.tile(s, &a[0])?;
                let ax = inst.attr_int("axis").unwrap_or(0) as usize;
                let r = if inst.op == Sum {
                    t.reduce(ax, 0.0, |x, y| x + y)
                } else {
                    t.reduce(ax, f32::NEG_INFINITY, f32::max)
                }
                .ok_or("bad reduction axis")?;
                self.set(s, inst, Value::Tile(r));
                Flow::Next
            }
            Dot => {
                let (x, y, acc) = (self.tile(s, &a[0])?, self.tile(s, &a[1])?, self.tile(s, &a[2])?);
                let r = Tensor::matmul_acc(&x, &y, &acc).ok_or("dot operands do not conform")?;
                self.set(s, inst, Value::Tile(r));
                Flow::Next
            }
            Transpose => {
                let t = self.tile(s, &a[0])?.transpose2d().ok_or("transpose of non-2-D tile")?;
                self.set(s, inst, Value::Tile(t));
                Flow::Next
            }
            View => {
                let shape: Vec<usize> = inst.attr_ints("shape").unwrap_or_default().iter().map(|&x| x as usize).collect();
                let t = self.tile(s, &a[0])?.reshape(&shape).ok_or("view changes element count")?;
                self.set(s, inst, Value::Tile(t));
                Flow::Next
            }
            Load => {
                let Value::Tensor(ti) = self.val(s, &a[0])? else {
                    return Err(String::from("load from non-tensor"));
                };
                let offs = a[1..].iter().map(|o| self.int(s, o)).collect::<Result<Vec<_>, _>>()?;
                let shape: Vec<usize> = inst.attr_ints("shape").unwrap_or_default().iter().map(|&x| x as usize).collect();
                let (t, touched) = self.tensors[ti].as_ref().expect("tensor").read_window(&offs, &shape);
                for i in touched {
                    self.load_counts[ti][i] += 1;
                }
                detail = format!("@{} {:?}", self.p.params[ti].name, offs);
                self.set(s, inst, Value::Tile(t));
                Flow::Next
            }
            Store => {
                let Value::Tensor(ti) = self.val(s, &a[0])? else {
                    return Err(String::from("store to non-tensor"));
                };
                let n = a.len();
                let offs = a[1..n - 1].iter().map(|o| self.int(s, o)).collect::<Result<Vec<_>, _>>()?;
                let t = self.tile(s, &a[n - 1])?;
                self.tensors[ti].as_mut().expect("tensor").write_window(&offs, &t);
                detail = format!("@{} {:?}", self.p.params[ti].name, offs);
                Flow::Next
            }
            LocalView => {
                let i = self.int(s, &a[1])?;
                let v = match self.val(s, &a[0])? {
                    Value::Buf { cta, buf, .. } => {
                        let n = self.p.buffers[buf].stages;
                        if i < 0 || i as usize >= n {
                            return Err(format!("stage {i} out of range for @{} with {n} stages", self.p.buffers[buf].name));
                        }
                        Value::Buf {
                            cta,
                            buf,
                            stage: Some(i as usize),
                        }
                    }
                    Value::Bar { cta, bar, .. } => {
                        let n = self.p.barriers[bar].count;
                        if i < 0 || i as usize >= n {
                            return Err(format!("index {i} out of range for @{} with count {n}", self.p.barriers[bar].name));
                        }
                        Value::Bar {
                            cta,
                            bar,
                            index: Some(i as usize),
                        }
                    }
                    v => return Err(format!("local_view of {}", v.kind())),
                };
                self.set(s, inst, v);
                Flow::Next
            }
            RemoteView => {
                let rank = self.int(s, &a[1])?;
                let v = match self.val(s, &a[0])? {
                    Value::Buf { cta: c, buf, stage } => Value::Buf {
                        cta: self.peer(s, c, rank)?,
                        buf,
                        stage,
                    },
                    Value::Bar { cta: c, bar, index } => Value::Bar {
                        cta: self.peer(s, c, rank)?,
                        bar,
                        index,
                    },
                    v => return Err(format!("remote_view of {}", v.kind())),
                };
                self.set(s, inst, v);
                Flow::Next
            }
            LocalLoad => {
                let (c, buf, stage) = self.view(s, &a[0])?;
                let site = self.site(s, inst);
                let (agent, clock) = (self.streams[s].agent, self.streams[s].clock.clone());
                if let Err(f) = self.access(c, buf, stage, false, agent, &clock, &site) {
                    return Ok(Err(f));
                }
                self.bank_check(buf);
                let t = self.ctas[c].smem[self.storage_of[buf]][stage].clone();
                detail = format!("{}[{stage}]", self.p.buffers[buf].name);
                self.set(s, inst, Value::Tile(t));
                Flow::Next
            }
            LocalStore => {
                let (c, buf, stage) = self.view(s, &a[0])?;
                let t = self.tile(s, &a[1])?;
                let site = self.site(s, inst);
                let (agent, clock) = (self.streams[s].agent, self.streams[s].clock.clone());
                if let Err(f) = self.access(c, buf, stage, true, agent, &clock, &site) {
                    return Ok(Err(f));
                }
                self.bank_check(buf);
                let storage = self.storage_of[buf];
                self.ctas[c].smem[storage][stage] = t;
                detail = format!("{}[{stage}]", self.p.buffers[buf].name);
                Flow::Next
            }
            LocalAlias | RequireLayout => Flow::Next,
            BarrierArrive => {
                let (mut c, bar, index) = self.bar(s, &a[0])?;
                let n = inst.attr_int("count").unwrap_or(1) as u32;
                let remote = match inst.attr("remote") {
                    Some([r]) => {
                        let r = self.int(s, r)?;
                        c = self.peer(s, c, r)?;
                        true
                    }
                    _ => c != cta,
                };
                let site = self.site(s, inst);
                let clock = self.streams[s].clock.clone();
                detail = format!("{} cta {c} count {n}", self.bar_label(bar, index));
                self.emit(cta, &label, "barrier_arrive", detail);
                self.release_tick(s);
                let r = if remote {
                    let ev = Event::RemoteArrive {
                        cta: c,
                        bar,
                        index,
                        n,
                        clock,
                        site,
                    };
                    self.schedule(self.cfg.remote_arrive_delay, ev)
                } else {
                    self.arrive_on(c, bar, index, n, &clock, &site).map(|_| ())
                };
                return Ok(r.map(|_| Flow::Next));
            }
            BarrierWait => {
                let (c, bar, index) = self.bar(s, &a[0])?;
                if c != cta {
                    return Err(String::from("wait on remote mbarrier"));
                }
                let parity = self.int(s, &a[1])? & 1;
                let bc = &self.ctas[c].bar_clocks[bar][index];
                let st = &mut self.streams[s];
                bc.acquire(&mut st.clock);
                detail = format!("{} parity {parity}", self.bar_label(bar, index));
                Flow::Next
            }
            BarrierExpectBytes => {
                let (c, bar, index) = self.bar(s, &a[0])?;
                let n = self.int(s, &a[1])?;
                if n < 0 {
                    return Err(format!("negative byte count {n}"));
                }
                let st = &mut self.ctas[c].bars[bar][index];
                st.expect_bytes(n as u64).map_err(|e| e.to_string())?;
                detail = format!("{} {n} bytes", self.bar_label(bar, index));
                Flow::Next
            }
            ClusterBarrier => {
                let cl = self.ctas[cta].cluster;
                match core::mem::replace(&mut self.streams[s].pending, Pending::None) {
                    Pending::ClusterBarrier { gen } => {
                        let (_, clock) = &self.cluster_sync[&(cl, gen)];
                        let clock = clock.clone();
                        self.streams[s].clock.join(&clock);
                        detail = format!("generation {gen} released");
                        Flow::Next
                    }
                    _ => {
                        let gen = self.ctas[cta].cb_gen;
                        self.ctas[cta].cb_gen += 1;
                        let clock = self.streams[s].clock.clone();
                        let e = self.cluster_sync.entry((cl, gen)).or_default();
                        e.0.insert(cta);
                        e.1.join(&clock);
                        self.release_tick(s);
                        self.streams[s].pending = Pending::ClusterBarrier { gen };
                        detail = format!("generation {gen} arrive");
                        Flow::Stay
                    }
                }
            }
            AsyncCopy => {
                let n = a.len();
                let Value::Tensor(ti) = self.val(s, &a[0])? else {
                    return Err(String::from("async_copy from non-tensor"));
                };
                let offs = a[1..n - 2].iter().map(|o| self.int(s, o)).collect::<Result<Vec<_>, _>>()?;
                let (vc, buf, stage) = self.view(s, &a[n - 2])?;
                let (_, bar, index) = self.bar(s, &a[n - 1])?;
                let shape = self.p.buffers[buf].shape.clone();
                let (tile, touched) = self.tensors[ti].as_ref().expect("tensor").read_window(&offs, &shape);
                for i in touched {
                    self.load_counts[ti][i] += 1;
                }
                let targets = match inst.attr("multicast") {
                    Some(ranks) => ranks
                        .iter()
                        .map(|r| self.int(s, r).and_then(|r| self.peer(s, vc, r)))
                        .collect::<Result<Vec<_>, _>>()?,
                    None => vec![vc],
                };
                let agent = self.new_agent();
                let mut clock = self.streams[s].clock.clone();
                clock.set(agent, 1);
                self.release_tick(s);
                let site = self.site(s, inst);
                detail = format!(
                    "@{} {:?} -> {}[{stage}] ctas {:?}",
                    self.p.params[ti].name, offs, self.p.buffers[buf].name, targets
                );
                self.emit(cta, &label, "async_copy", detail);
                let ev = Event::CopyLand {
                    targets,
                    buf,
                    stage,
                    tile,
                    bar,
                    index,
                    agent,
                    clock,
                    site,
                };
                return Ok(self.schedule(self.cfg.async_copy_latency, ev).map(|_| Flow::Next));
            }
            AsyncRemoteStore => {
                let (c, buf, stage) = self.view(s, &a[0])?;
                let tile = self.tile(s, &a[1])?;
                let (_, bar, index) = self.bar(s, &a[2])?;
                let agent = self.new_agent();
                let mut clock = self.streams[s].clock.clone();
                clock.set(agent, 1);
                self.release_tick(s);
                let site = self.site(s, inst);
                detail = format!("{}[{stage}] -> cta {c}", self.p.buffers[buf].name);
                self.emit(cta, &label, "async_remote_store", detail);
                let ev = Event::RemoteStore {
                    cta: c,
                    buf,
                    stage,
                    tile,
                    bar,
                    index,
                    agent,
                    clock,
                    site,
                };
                return Ok(self.schedule(self.cfg.remote_arrive_delay, ev).map(|_| Flow::Next));
            }
            AsyncDot => {
                let (x, y, acc) = (self.tile(s, &a[0])?, self.tile(s, &a[1])?, self.tile(s, &a[2])?);
                let r = Tensor::matmul_acc(&x, &y, &acc).ok_or("async_dot operands do not conform")?;
                let st = &mut self.streams[s];
                let due = st.mma_free_at.max(self.step) + self.cfg.mma_latency;
                st.mma_free_at = due;
                st.mma_pending += 1;
                if self.cfg.mma_latency == 0 && due <= self.step {
                    st.mma_pending -= 1;
                    st.mma_last = Some(r);
                } else {
                    self.schedule_at(due, Event::MmaDone { stream: s, acc: r });
                }
                Flow::Next
            }
            AsyncDotWait => {
                if inst.dst.is_some() {
                    let t = self.streams[s].mma_last.clone().ok_or("async_dot_wait with no completed async_dot")?;
                    self.set(s, inst, Value::Tile(t));
                }
                Flow::Next
            }
            CollectiveDot => return self.collective(s, inst),
            ClcCreateContext => {
                let stages = inst.attr_int("stages").unwrap_or(1).max(1) as usize;
                let consumers = inst.attr_int("consumers").unwrap_or(1).max(1) as u32;
                let total = inst.attr_int("tiles").map_or(u64::from(self.p.grid_ctas()), |t| t.max(0) as u64);
                self.queue.get_or_insert_with(|| TileQueue::new(total));
                let c = &mut self.ctas[cta];
                c.clc.push(ClcContext::new(stages, consumers));
                c.clc_clocks.push((vec![BarrierClock::default(); stages], vec![BarrierClock::default(); stages]));
                let id = c.clc.len() - 1;
                detail = format!("stages {stages} consumers {consumers}");
                self.set(s, inst, Value::Ctx(id));
                Flow::Next
            }
            ClcProducer => {
                let c = self.ctx(s, &a[0])?;
                let ctx = &mut self.ctas[cta].clc[c];
                let stage = match ctx.produce(s).map_err(|e| e.to_string())? {
                    ProducerStep::Issued { stage } => stage,
                    ProducerStep::Blocked { .. } => return Ok(Ok(Flow::Stay)),
                };
                let clocks = &mut self.ctas[cta].clc_clocks[c];
                clocks.0[stage].acquire(&mut self.streams[s].clock);
                clocks.1[stage].release(&self.streams[s].clock);
                self.release_tick(s);
                let tile = self.queue.as_mut().expect("queue").pop();
                self.emit(cta, &label, "clc_request", format!("slot {stage}"));
                let ev = Event::ClcResponse { cta, ctx: c, stage, tile };
                return Ok(self.schedule(self.cfg.clc_latency, ev).map(|_| Flow::Next));
            }
            ClcConsumer => {
                let c = self.ctx(s, &a[0])?;
                let ctx = &mut self.ctas[cta].clc[c];
                let before = ctx.empty.iter().map(|b| b.flips).collect::<Vec<_>>();
                let (stage, tile) = match ctx.consume(s).map_err(|e| e.to_string())? {
                    ConsumerStep::Consumed { stage, tile } => (stage, tile),
                    ConsumerStep::Blocked { .. } => return Ok(Ok(Flow::Stay)),
                };
                let flipped = ctx.empty[stage].flips != before[stage];
                let clocks = &mut self.ctas[cta].clc_clocks[c];
                clocks.1[stage].acquire(&mut self.streams[s].clock);
                clocks.0[stage].release(&self.streams[s].clock);
                if flipped {
                    clocks.0[stage].complete();
                }
                self.release_tick(s);
                self.emit(cta, &label, "clc_consume", format!("tile_id={tile}"));
                self.set(s, inst, Value::Int(tile));
                return Ok(Ok(Flow::Next));
            }
            For => {
                let (lo, hi, step) = (self.int(s, &a[0])?, self.int(s, &a[1])?, self.int(s, &a[2])?);
                if step == 0 {
                    return Err(String::from("loop step is zero"));
                }
                detail = format!("{lo} to {hi} step {step}");
                if (step > 0 && lo < hi) || (step < 0 && lo > hi) {
                    let var = inst.dst.as_deref().unwrap_or("");
                    self.streams[s].regs.insert(var, Value::Int(lo));
                    Flow::Push(Frame {
                        insts: &inst.body[0],
                        pc: 0,
                        kind: FrameKind::For { var, cur: lo, hi, step },
                    })
                } else {
                    Flow::Next
                }
            }
            While => {
                let t = self.val(s, &a[0])?.truthy().ok_or("while condition is not a scalar")?;
                if t {
                    Flow::Push(Frame {
                        insts: &inst.body[0],
                        pc: 0,
                        kind: FrameKind::While { cond: &a[0] },
                    })
                } else {
                    Flow::Next
                }
            }
            If => {
                let t = self.val(s, &a[0])?.truthy().ok_or("if condition is not a scalar")?;
                let block = if t { &inst.body[0] } else { &inst.body[1] };
                Flow::Push(Frame {
                    insts: block,
                    pc: 0,
                    kind: FrameKind::Plain,
                })
            }
            op => return Err(format!("{} is not executable", op.name())),
        };
        self.emit(cta, &label, inst.op.name(), detail);
        Ok(Ok(flow))
    }

    fn collective(&mut self, s: usize, inst: &'p Inst) -> Result<Result<Flow<'p>, SimFault>, String> {
        let cta = self.streams[s].cta;
        let label = self.streams[s].label.clone();
        match core::mem::replace(&mut self.streams[s].pending, Pending::None) {
            Pending::CollectiveDone(acc, clock) => {
                self.streams[s].clock.join(&clock);
                self.emit(cta, &label, "collective_dot", String::from("complete"));
                self.set(s, inst, Value::Tile(acc));
                return Ok(Ok(Flow::Next));
            }
            Pending::None => {}
            other => {
                self.streams[s].pending = other;
                return Ok(Ok(Flow::Stay));
            }
        }
        let a = &inst.args;
        let (x, y, acc) = (self.tile(s, &a[0])?, self.tile(s, &a[1])?, self.tile(s, &a[2])?);
        let group: Vec<i64> = inst.attr_ints("group").unwrap_or_default();
        let cl = self.ctas[cta].cluster;
        let rank = self.ctas[cta].rank as i64;
        let mismatch = |detail: String| SimFault::CollectiveMismatch {
            cluster: cl,
            group: group.clone(),
            missing: Vec::new(),
            detail,
        };
        if !group.contains(&rank) {
            return Ok(Err(mismatch(format!("rank {rank} issued but is not in the group"))));
        }
        let seq = {
            let e = self.streams[s].coll_seq.entry(group.clone()).or_insert(0);
            *e += 1;
            *e - 1
        };
        let key = (cl, group.clone(), seq);
        let clock = self.streams[s].clock.clone();
        self.release_tick(s);
        let rv = self.rendezvous.entry(key.clone()).or_insert_with(|| Rendezvous {
            arrived: BTreeMap::new(),
            clock: VClock::default(),
        });
        if rv.arrived.contains_key(&rank) {
            return Ok(Err(mismatch(format!("rank {rank} issued twice for one rendezvous"))));
        }
        if let Some((_, (_, x0, y0, acc0))) = rv.arrived.iter().next() {
            if x0.shape()[1] != x.shape()[1] || y0.shape() != y.shape() || acc0.shape()[1] != acc.shape()[1] {
                return Ok(Err(mismatch(format!(
                    "rank {rank} fragments {:?}·{:?} do not match {:?}·{:?}",
                    x.shape(),
                    y.shape(),
                    x0.shape(),
                    y0.shape()
                ))));
            }
        }
        rv.arrived.insert(rank, (s, x, y, acc));
        rv.clock.join(&clock);
        let full = rv.arrived.len() == group.len();
        self.streams[s].pending = Pending::Collective;
        self.emit(cta, &label, "collective_dot", format!("issue group {group:?} seq {seq}"));
        if full {
            let rv = self.rendezvous.remove(&key).expect("rendezvous");
            let bs: Vec<&Tensor> = group.iter().map(|r| &rv.arrived[r].2).collect();
            let b = Tensor::concat2d(&bs, 1).ok_or("collective B fragments do not concatenate")?;
            let lat = self.cfg.mma_latency;
            for r in &group {
                let (stream, x, _, acc) = &rv.arrived[r];
                let out = Tensor::matmul_acc(x, &b, acc).ok_or("collective fragments do not conform")?;
                let ev = Event::CollectiveDeliver {
                    stream: *stream,
                    acc: out,
                    clock: rv.clock.clone(),
                };
                if let Err(f) = self.schedule(lat, ev) {
                    return Ok(Err(f));
                }
            }
        }
        Ok(Ok(Flow::Stay))
    }

    fn fill_summary(&mut self) {
        self.summary.steps = self.step;
        for st in &self.streams {
            *self.summary.task_steps.entry((st.cta, st.label.clone())).or_insert(0) += st.steps;
        }
        for (ci, c) in self.ctas.iter().enumerate() {
            for (bi, b) in self.p.barriers.iter().enumerate() {
                for (idx, st) in c.bars[bi].iter().enumerate() {
                    self.summary.barrier_flips.insert((ci, b.name.clone(), idx), st.flips);
                }
            }
        }
        for (i, prm) in self.p.params.iter().enumerate() {
            if matches!(prm.kind, ParamKind::Tensor { .. }) {
                let total = self.load_counts[i].iter().map(|&x| u64::from(x)).sum();
                self.summary.global_loads.insert(prm.name.clone(), total);
            }
        }
        self.summary.races = self.races.len();
    }

    fn finish(mut self) -> SimResult {
        self.fill_summary();
        let mut outputs = BTreeMap::new();
        let mut load_counts = BTreeMap::new();
        for (i, prm) in self.p.params.iter().enumerate() {
            if let ParamKind::Tensor { output, .. } = prm.kind {
                if output {
                    outputs.insert(prm.name.clone(), self.tensors[i].take().expect("tensor"));
                }
                load_counts.insert(prm.name.clone(), core::mem::take(&mut self.load_counts[i]));
            }
        }
        SimResult {
            outputs,
            trace: self.trace,
            summary: self.summary,
            races: self.races,
            load_counts,
        }
    }
}
