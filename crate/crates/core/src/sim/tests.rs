use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::*;
use crate::pipeline::{compile, PipelineOptions};

const PIPE: &str = "\
kernel pipe grid(2 1 1) cluster(2 1 1) warps(2)

param x tensor(512)
param y tensor(512) out

buffer slot shape(64) f32 stages(2) storage(smem)
barrier full count(2) arrive(1)
barrier empty count(2) arrive(1)

%rank = cta_rank
%pid = program_id axis(0)
%base = mul %pid 256

task warps(1) {
  for %i = 0 to 4 {
    %s = rem %i 2
    %k = div %i 2
    %par = and %k 1
    %par = sub 1 %par
    %e = local_view @empty %s
    barrier_wait %e %par
    %off = mul %i 64
    %off = add %off %base
    %t = load @x %off shape(64)
    %v = local_view @slot %s
    local_store %v %t
    %f = local_view @full %s
    barrier_arrive %f
  }
}

task default {
  for %i = 0 to 4 {
    %s = rem %i 2
    %k = div %i 2
    %par = and %k 1
    %f = local_view @full %s
    barrier_wait %f %par
    %v = local_view @slot %s
    %t = local_load %v
    %u = mul %t 2.0
    %u = add %u %rank
    %off = mul %i 64
    %off = add %off %base
    store @y %off %u
    %e = local_view @empty %s
    barrier_arrive %e
  }
}
";

fn build(src: &str) -> ResolvedProgram {
    compile(src, &PipelineOptions::default()).unwrap_or_else(|e| panic!("{e}: {:?}", e.diagnostics())).resolved
}

use crate::layout::ResolvedProgram;

fn ramp(name: &str, n: usize) -> BTreeMap<String, Tensor> {
    let t = Tensor::new(alloc::vec![n], (0..n).map(|i| i as f32 * 0.5).collect()).unwrap();
    BTreeMap::from([(name.to_string(), t)])
}

#[test]
fn pipe_computes_affine_per_rank() {
    let r = build(PIPE);
    let inputs = ramp("x", 512);
    for cfg in [SimConfig::default(), SimConfig::seeded(7)] {
        let res = simulate(&r, &inputs, &cfg).unwrap();
        assert!(res.races.is_empty(), "{:?}", res.races);
        let y = res.outputs["y"].data();
        for (i, v) in y.iter().enumerate() {
            let rank = (i / 256) as f32;
            assert_eq!(*v, 2.0 * (i as f32 * 0.5) + rank);
        }
        assert_eq!(res.summary.barrier_flips[&(0, "full".to_string(), 0)], 2);
    }
}

#[test]
fn pipe_is_schedule_independent() {
    let r = build(PIPE);
    let rep = fuzz(&r, &ramp("x", 512), &SimConfig::default(), 0..30, true);
    assert_eq!(rep.runs, 30);
    assert!(rep.is_clean(), "{rep:?}");
}

#[test]
fn same_seed_same_trace() {
    let r = build(PIPE);
    let inputs = ramp("x", 512);
    let a = simulate(&r, &inputs, &SimConfig::seeded(3)).unwrap();
    let b = simulate(&r, &inputs, &SimConfig::seeded(3)).unwrap();
    assert_eq!(a.render_trace(), b.render_trace());
    let c = simulate(&r, &inputs, &SimConfig::seeded(4)).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn missing_empty_wait_is_a_race() {
    let src = PIPE.replacen("    barrier_wait %e %par\n", "", 1);
    let r = build(&src);
    let res = simulate(&r, &ramp("x", 512), &SimConfig::default()).unwrap();
    assert!(res.races.iter().any(|r| r.kind == RaceKind::ReadWrite || r.kind == RaceKind::WriteWrite), "{:?}", res.races);
    let mut strict = SimConfig::default();
    strict.strict = true;
    let e = simulate(&r, &ramp("x", 512), &strict).unwrap_err();
    assert!(matches!(e.fault, SimFault::RaceDetected(_)));
}

#[test]
fn missing_full_arrive_deadlocks() {
    let src = PIPE.replacen("    barrier_arrive %f\n", "", 1);
    let r = build(&src);
    let e = simulate(&r, &ramp("x", 512), &SimConfig::default()).unwrap_err();
    match &e.fault {
        SimFault::Deadlock { blocked } => {
            assert_eq!(blocked.len(), 4);
            assert!(blocked.iter().any(|b| b.task == "default" && b.on.contains("full[0]")));
            assert!(blocked.iter().any(|b| b.task == "task0" && b.on.contains("empty[0]")));
        }
        f => panic!("{f}"),
    }
}

const MULTICAST: &str = "\
kernel mc grid(2 1 1) cluster(2 1 1) warps(1)

param a tensor(8 8)
param out tensor(16 8) out

buffer tile shape(8 8) f32 stages(1) storage(smem_cluster)
barrier full count(1) arrive(1)

%rank = cta_rank
%f = local_view @full 0
%v = local_view @tile 0
barrier_expect_bytes %f 256
barrier_arrive %f

task default {
  %lead = eq %rank 0
  if %lead {
    async_copy @a 0 0 %v %f multicast(0 1)
  }
  barrier_wait %f 0
  %t = local_load %v
  %row = mul %rank 8
  store @out %row 0 %t
}
";

#[test]
fn multicast_loads_once_and_lands_everywhere() {
    let r = build(MULTICAST);
    assert!(r.program.prologue.iter().any(|i| i.op == crate::ir::Opcode::ClusterBarrier));
    let a = Tensor::new(alloc::vec![8, 8], (0..64).map(|i| i as f32).collect()).unwrap();
    let inputs = BTreeMap::from([("a".to_string(), a.clone())]);
    for seed in 0..20 {
        let res = simulate(&r, &inputs, &SimConfig::seeded(seed)).unwrap();
        assert!(res.races.is_empty());
        assert!(res.load_counts["a"].iter().all(|&c| c == 1));
        assert_eq!(&res.outputs["out"].data()[..64], a.data());
        assert_eq!(&res.outputs["out"].data()[64..], a.data());
    }
}

#[test]
fn removing_cluster_barrier_exposes_uninitialized_arrivals() {
    let mut r = build(MULTICAST);
    r.program.prologue.retain(|i| i.op != crate::ir::Opcode::ClusterBarrier);
    let a = Tensor::zeros(&[8, 8]);
    let inputs = BTreeMap::from([("a".to_string(), a)]);
    let mut base = SimConfig::default();
    base.async_copy_latency = 0;
    base.remote_arrive_delay = 0;
    let mut hits = 0;
    for seed in 0..10 {
        let cfg = SimConfig { seed, scheduler: Scheduler::SeededRandom, ..base.clone() };
        let races = match simulate(&r, &inputs, &cfg) {
            Ok(res) => res.races,
            Err(e) => e.races,
        };
        if races.iter().any(|r| r.kind == RaceKind::UninitializedBarrier) {
            hits += 1;
        }
    }
    assert_eq!(hits, 10);
}

const COLLECTIVE: &str = "\
kernel coll grid(2 1 1) cluster(2 1 1) warps(1)

param a tensor(4 8)
param b tensor(8 8)
param c tensor(8 8) out

%rank = cta_rank
%row = mul %rank 2
%col = mul %rank 4

task default {
  %x = load @a %row 0 shape(2 8)
  %y = load @b 0 %col shape(8 4)
  %acc = zeros shape(2 8)
  %acc = collective_dot %x %y %acc group(0 1)
  store @c %row 0 %acc
}
";

#[test]
fn collective_dot_hstacks_fragments() {
    let r = build(COLLECTIVE);
    let a = Tensor::new(alloc::vec![4, 8], (0..32).map(|i| (i % 5) as f32).collect()).unwrap();
    let b = Tensor::new(alloc::vec![8, 8], (0..64).map(|i| (i % 7) as f32 - 3.0).collect()).unwrap();
    let inputs = BTreeMap::from([("a".to_string(), a.clone()), ("b".to_string(), b.clone())]);
    let res = simulate(&r, &inputs, &SimConfig::seeded(1)).unwrap();
    let full = Tensor::matmul_acc(&a, &b, &Tensor::zeros(&[4, 8])).unwrap();
    assert_eq!(&res.outputs["c"].data()[..32], full.data());
}

#[test]
fn collective_with_missing_rank_is_reported() {
    let src = COLLECTIVE.replace(
        "  %acc = collective_dot %x %y %acc group(0 1)\n",
        "  %lead = eq %rank 0\n  if %lead {\n    %acc = collective_dot %x %y %acc group(0 1)\n  }\n",
    );
    let r = build(&src);
    let a = Tensor::zeros(&[4, 8]);
    let b = Tensor::zeros(&[8, 8]);
    let inputs = BTreeMap::from([("a".to_string(), a), ("b".to_string(), b)]);
    let e = simulate(&r, &inputs, &SimConfig::default()).unwrap_err();
    match e.fault {
        SimFault::CollectiveMismatch { missing, .. } => assert_eq!(missing, alloc::vec![1]),
        f => panic!("{f}"),
    }
}

const CLC: &str = "\
kernel persist grid(2 1 1) cluster(1 1 1) warps(2)

param x tensor(5 16)
param y tensor(5 16) out

%clc = clc_create_context stages(2) consumers(2) tiles(5)

task warps(1) {
  clc_producer %clc
  %tile = clc_consumer %clc
  %live = ne %tile -1
  while %live {
    clc_producer %clc
    %tile = clc_consumer %clc
    %live = ne %tile -1
  }
}

task default {
  %tile = clc_consumer %clc
  %live = ne %tile -1
  while %live {
    %t = load @x %tile 0 shape(1 16)
    %t = add %t 1.0
    store @y %tile 0 %t
    %tile = clc_consumer %clc
    %live = ne %tile -1
  }
}
";

#[test]
fn clc_dispatches_each_tile_once() {
    let r = build(CLC);
    let x = Tensor::full(&[5, 16], 2.0);
    let inputs = BTreeMap::from([("x".to_string(), x)]);
    for seed in 0..20 {
        let mut cfg = SimConfig::seeded(seed);
        cfg.clc_latency = seed % 9;
        let res = simulate(&r, &inputs, &cfg).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(res.outputs["y"].data().iter().all(|&v| v == 3.0));
        let mut ids: Vec<i64> = res.summary.clc_dispatch.values().flatten().copied().filter(|&t| t >= 0).collect();
        ids.sort();
        assert_eq!(ids, alloc::vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn capacity_is_checked_at_launch() {
    let r = build(PIPE);
    let mut cfg = SimConfig::default();
    cfg.shared_capacity_bytes = 100;
    let e = simulate(&r, &ramp("x", 512), &cfg).unwrap_err();
    assert_eq!(e.fault, SimFault::CapacityExceeded { bytes: 512, capacity: 100 });
}
