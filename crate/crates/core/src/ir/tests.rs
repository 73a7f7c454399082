use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

const PIPE: &str = "\
kernel pipe grid(2 1 1) cluster(2 1 1) warps(4)

param x tensor(256)
param y tensor(256) out

buffer smem shape(256) f32 stages(1) storage(smem)
barrier full count(1) arrive(1)
barrier empty count(1) arrive(1)

%tile0 = program_id axis(0)
%clc = clc_create_context stages(1) consumers(2) tiles(1)
%rank = cta_rank
%full0 = local_view @full 0
%empty0 = local_view @empty 0
%slot = local_view @smem 0

task default {
  %tile_id = mov %tile0
  %k = mov 0
  %live = ne %tile_id -1
  while %live {
    %par = and %k 1
    %par = sub 1 %par
    barrier_wait %empty0 %par
    %off = mul %tile_id 256
    %x = load @x %off shape(256)
    local_store %slot %x
    barrier_arrive %full0
    clc_producer %clc
    %tile_id = clc_consumer %clc
    %k = add %k 1
    %live = ne %tile_id -1
  }
}

task warps(1) {
  %tile_id = mov %tile0
  %k = mov 0
  %live = ne %tile_id -1
  while %live {
    %par = and %k 1
    barrier_wait %full0 %par
    %xl = local_load %slot
    %y = mul %xl 2.0
    %y = add %y %rank
    %off = mul %tile_id 256
    store @y %off %y
    barrier_arrive %empty0
    %tile_id = clc_consumer %clc
    %k = add %k 1
    %live = ne %tile_id -1
  }
}
";

fn parse(src: &str) -> KernelProgram {
    parse_kernel(src).unwrap_or_else(|e| panic!("{e}"))
}

fn codes(p: &KernelProgram) -> Vec<&'static str> {
    validate(p).diagnostics.iter().map(|d| d.code).collect()
}

#[test]
fn pipeline_kernel_validates_cleanly() {
    let p = parse(PIPE);
    let r = validate(&p);
    assert!(r.is_ok(), "{:?}", r.diagnostics);
}

#[test]
fn canonical_print_round_trips() {
    let p = parse(PIPE);
    let text = print_ir(&p, Stage::Parsed);
    let q = parse(&text);
    assert_eq!(p, q);
    assert_eq!(text, print_ir(&q, Stage::Parsed));
    assert_eq!(text, alloc::format!("// stage: parsed\n{PIPE}"));
}

#[test]
fn stage_tag_only_changes_header() {
    let p = parse(PIPE);
    let a = print_ir(&p, Stage::Parsed);
    let b = print_ir(&p, Stage::Resolve);
    assert_eq!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>());
    assert_ne!(a.lines().next(), b.lines().next());
}

#[test]
fn undeclared_barrier_parses_but_fails_validation() {
    let src = PIPE.replace("barrier_wait %full0 %par", "barrier_wait @full2 %par");
    let p = parse(&src);
    assert!(codes(&p).contains(&"V003"));
}

#[test]
fn prologue_only_program_is_valid() {
    let p = parse(
        "kernel simb grid(1 1 1) cluster(1 1 1) warps(4)\n\
         param x tensor(8)\nparam y tensor(8) out\n\
         %t = load @x 0 shape(8)\n%t = add %t 1.0\nstore @y 0 %t\n",
    );
    assert!(p.tasks.is_empty());
    assert!(validate(&p).is_ok());
}

#[test]
fn warp_budget_is_enforced() {
    let p = parse(
        "kernel w grid(1 1 1) cluster(1 1 1) warps(4)\n\
         task warps(4) {\n}\ntask warps(4) {\n}\n",
    );
    let r = validate(&p);
    assert!(r.diagnostics.iter().any(|d| d.code == "V006" && d.message.contains("warp budget exceeded")));
}

#[test]
fn default_region_needs_warps() {
    let p = parse("kernel w grid(1 1 1) cluster(1 1 1) warps(4)\ntask default {\n}\ntask warps(4) {\n}\n");
    assert!(codes(&p).contains(&"V006"));
    let p = parse("kernel w grid(1 1 1) cluster(1 1 1) warps(4)\ntask warps(4) {\n}\n");
    assert!(validate(&p).is_ok());
}

#[test]
fn dot_shapes_must_conform() {
    let p = parse(
        "kernel d grid(1 1 1) cluster(1 1 1) warps(4)\n\
         %a = zeros shape(64 32)\n%b = zeros shape(16 64)\n%c = zeros shape(64 64)\n\
         %c = dot %a %b %c\n",
    );
    let r = validate(&p);
    let d = r.diagnostics.iter().find(|d| d.code == "V005").expect("shape error");
    assert_eq!(d.site.inst, Some(3));
}

#[test]
fn cluster_must_divide_grid() {
    let p = parse("kernel c grid(3 1 1) cluster(2 1 1) warps(1)\n");
    assert!(codes(&p).contains(&"V007"));
}

#[test]
fn capacity_counts_stages() {
    let p = parse(
        "kernel c grid(1 1 1) cluster(1 1 1) warps(1)\n\
         buffer big shape(512 32) f32 stages(2) storage(smem)\n",
    );
    assert!(validate(&p).is_ok());
    assert!(!validate_with_capacity(&p, 100 * 1024).is_ok());
}

#[test]
fn storage_and_rank_rules() {
    let base = "kernel r grid(2 1 1) cluster(2 1 1) warps(1)\n\
                buffer s shape(4) f32 stages(1) storage(smem)\n\
                buffer c shape(4) f32 stages(1) storage(smem_cluster)\n";
    let p = parse(&alloc::format!("{base}%v = remote_view @s 1\n"));
    assert!(codes(&p).contains(&"V011"));
    let p = parse(&alloc::format!("{base}%v = remote_view @c 2\n"));
    assert!(codes(&p).contains(&"V010"));
    let p = parse(&alloc::format!("{base}%v = remote_view @c 1\n%t = local_load %v\n"));
    assert!(codes(&p).contains(&"V011"));
    let p = parse(&alloc::format!(
        "{base}param x tensor(4)\nbarrier b count(1) arrive(1)\nasync_copy @x 0 @c @b multicast()\n"
    ));
    assert!(codes(&p).contains(&"V013"));
}

#[test]
fn clc_stages_zero_is_rejected() {
    let p = parse("kernel c grid(1 1 1) cluster(1 1 1) warps(1)\n%c = clc_create_context stages(0) consumers(1)\n");
    assert!(codes(&p).contains(&"V012"));
}

#[test]
fn parse_errors_carry_location() {
    let e = parse_kernel("kernel k grid(1 1 1) cluster(1 1 1) warps(1)\n%a = frobnicate 1\n").unwrap_err();
    assert_eq!((e.line, e.col), (2, 6));
    assert!(e.expected.contains("opcode"));
}

#[test]
fn streams_partition_warps() {
    let p = parse(
        "kernel s grid(1 1 1) cluster(1 1 1) warps(12)\n\
         task default {\n}\ntask warps(4) replicate(2) {\n}\n",
    );
    let s = p.streams();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0].warps, 8..12);
    assert_eq!(s[1].warps, 0..4);
    assert_eq!(s[2].warps, 4..8);
    assert_eq!(s[2].label, "task1.1");
}

// Arbitrary (not necessarily valid) programs for the syntactic round trip.

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,5}".prop_filter("reserved", |s| s != "inf" && s != "else")
}

fn operand() -> impl Strategy<Value = Operand> {
    prop_oneof![
        name().prop_map(Operand::Reg),
        name().prop_map(Operand::Sym),
        any::<i32>().prop_map(|i| Operand::Int(i as i64)),
        prop_oneof![
            (-1.0e6f32..1.0e6).boxed(),
            Just(f32::NEG_INFINITY).boxed(),
            Just(1e-5f32).boxed(),
            Just(f32::INFINITY).boxed(),
        ]
        .prop_map(Operand::Float),
        "[a-z]{2,6}"
            .prop_filter("reserved", |s| s != "inf")
            .prop_map(Operand::Ident),
    ]
}

fn attr() -> impl Strategy<Value = Attr> {
    (name(), proptest::collection::vec(operand(), 0..3)).prop_map(|(name, values)| Attr { name, values })
}

fn leaf() -> impl Strategy<Value = Inst> {
    let ops: Vec<Opcode> = Opcode::ALL.iter().copied().filter(|o| !o.is_control()).collect();
    (
        proptest::option::of(name()),
        proptest::sample::select(ops),
        proptest::collection::vec(operand(), 0..4),
        proptest::collection::vec(attr(), 0..3),
    )
        .prop_map(|(dst, op, args, attrs)| Inst {
            dst,
            op,
            args,
            attrs,
            body: vec![],
            line: 0,
        })
}

fn inst() -> impl Strategy<Value = Inst> {
    leaf().prop_recursive(2, 12, 4, |inner| {
        let blk = proptest::collection::vec(inner, 0..3);
        prop_oneof![
            (name(), operand(), operand(), operand(), blk.clone()).prop_map(|(iv, lo, hi, st, b)| Inst {
                dst: Some(iv),
                op: Opcode::For,
                args: vec![lo, hi, st],
                attrs: vec![],
                body: vec![b],
                line: 0,
            }),
            (operand(), blk.clone()).prop_map(|(c, b)| Inst {
                dst: None,
                op: Opcode::While,
                args: vec![c],
                attrs: vec![],
                body: vec![b],
                line: 0,
            }),
            (operand(), blk.clone(), blk).prop_map(|(c, t, e)| Inst {
                dst: None,
                op: Opcode::If,
                args: vec![c],
                attrs: vec![],
                body: vec![t, e],
                line: 0,
            }),
        ]
    })
}

fn encoding() -> impl Strategy<Value = Option<LayoutEncoding>> {
    proptest::option::of(proptest::sample::select(LayoutEncoding::ALL.to_vec()))
}

fn program() -> impl Strategy<Value = KernelProgram> {
    let params = proptest::collection::vec(
        (
            name(),
            prop_oneof![
                (proptest::collection::vec(1usize..64, 1..3), any::<bool>())
                    .prop_map(|(shape, output)| ParamKind::Tensor { shape, output }),
                (-100.0f32..100.0).prop_map(ParamKind::F32),
                (-100i64..100).prop_map(ParamKind::I32),
            ],
        )
            .prop_map(|(name, kind)| Param { name, kind, line: 0 }),
        0..3,
    );
    let buffers = proptest::collection::vec(
        (
            name(),
            proptest::collection::vec(1usize..64, 1..3),
            1usize..4,
            any::<bool>(),
            encoding(),
            encoding(),
        )
            .prop_map(|(name, shape, stages, c, layout, resolved)| BufferDecl {
                name,
                shape,
                stages,
                storage: if c { Storage::SmemCluster } else { Storage::Smem },
                layout,
                resolved,
                line: 0,
            }),
        0..3,
    );
    let barriers = proptest::collection::vec(
        (name(), 1usize..4, 1u32..4).prop_map(|(name, count, arrive)| BarrierDecl {
            name,
            count,
            arrive,
            line: 0,
        }),
        0..3,
    );
    let tasks = proptest::collection::vec(
        (
            proptest::option::of(1u32..8),
            1u32..3,
            proptest::option::of(24u32..256),
            proptest::collection::vec(inst(), 0..4),
        )
            .prop_map(|(w, rep, registers, body)| TaskRegion {
                kind: w.map_or(TaskKind::Default, |warps| TaskKind::Explicit { warps }),
                replicate: if w.is_some() { rep } else { 1 },
                registers,
                body,
                line: 0,
            }),
        0..3,
    );
    (
        name(),
        [1u32..4, 1u32..4, 1u32..4],
        [1u32..3, 1u32..3, 1u32..3],
        1u32..16,
        params,
        buffers,
        barriers,
        proptest::collection::vec(inst(), 0..5),
        tasks,
    )
        .prop_map(|(name, grid, cluster, num_warps, params, buffers, barriers, prologue, tasks)| KernelProgram {
            name,
            grid,
            cluster,
            num_warps,
            params,
            buffers,
            barriers,
            prologue,
            tasks,
        })
}

proptest! {
    #[test]
    fn print_parse_round_trip(p in program()) {
        let text = print_ir(&p, Stage::Parsed);
        let q = parse_kernel(&text).map_err(|e| TestCaseError::fail(alloc::format!("{e}\n{text}")))?;
        prop_assert_eq!(&p, &q);
        prop_assert_eq!(text, print_ir(&q, Stage::Parsed));
    }

    #[test]
    fn printing_is_deterministic(p in program()) {
        prop_assert_eq!(print_ir(&p, Stage::Forward), print_ir(&p.clone(), Stage::Forward));
    }

    #[test]
    fn streams_partition_warp_range(ws in proptest::collection::vec((1u32..4, 1u32..3), 0..4), extra in 1u32..4, with_default in any::<bool>()) {
        let claimed: u32 = ws.iter().map(|(w, r)| w * r).sum();
        let mut tasks: Vec<TaskRegion> = ws.iter().map(|&(warps, replicate)| TaskRegion {
            kind: TaskKind::Explicit { warps }, replicate, registers: None, body: vec![], line: 0,
        }).collect();
        let num_warps = if with_default { claimed + extra } else { claimed.max(1) };
        if with_default {
            tasks.insert(0, TaskRegion { kind: TaskKind::Default, replicate: 1, registers: None, body: vec![], line: 0 });
        }
        let p = KernelProgram {
            name: "k".to_string(), grid: [1; 3], cluster: [1; 3], num_warps,
            params: vec![], buffers: vec![], barriers: vec![], prologue: vec![], tasks,
        };
        prop_assert!(validate(&p).is_ok(), "{:?}", validate(&p).diagnostics);
        let mut covered: Vec<u32> = p.streams().iter().flat_map(|s| s.warps.clone()).collect();
        covered.sort_unstable();
        let expect: Vec<u32> = if with_default || claimed > 0 { (0..num_warps.max(claimed)).collect() } else { vec![] };
        prop_assert_eq!(covered, expect);
    }
}
