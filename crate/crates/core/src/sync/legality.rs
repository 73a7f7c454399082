//! Cluster legality: no waits on remote barriers, and a cluster-wide
//! barrier between barrier initialization and the first remote arrival.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::diag::Diagnostic;
use crate::ir::{infer_types, Inst, KernelProgram, Opcode, Operand, Scope, Ty, TypeMap};

fn ty<'a>(types: &'a TypeMap, scope: Scope, op: &Operand) -> Option<&'a Ty> {
    let r = op.reg()?;
    types
        .get(&(scope, r.to_string()))
        .or_else(|| types.get(&(Scope::Prologue, r.to_string())))
}

fn remote_bar(types: &TypeMap, scope: Scope, op: &Operand) -> bool {
    matches!(ty(types, scope, op), Some(Ty::Bar { remote: true, .. }))
}

/// True when `inst` (or anything nested in it) can signal a barrier that
/// lives in another CTA.
fn arrives_remotely(types: &TypeMap, scope: Scope, inst: &Inst) -> bool {
    let here = match inst.op {
        Opcode::BarrierArrive => {
            inst.attr("remote").is_some() || inst.args.first().is_some_and(|a| remote_bar(types, scope, a))
        }
        Opcode::AsyncRemoteStore => true,
        Opcode::AsyncCopy => inst.attr("multicast").is_some(),
        _ => false,
    };
    here || inst.body.iter().flatten().any(|i| arrives_remotely(types, scope, i))
}

fn has_remote_arrival(p: &KernelProgram, types: &TypeMap) -> bool {
    p.prologue.iter().any(|i| arrives_remotely(types, Scope::Prologue, i))
        || p
            .tasks
            .iter()
            .enumerate()
            .any(|(t, r)| r.body.iter().any(|i| arrives_remotely(types, Scope::Task(t), i)))
}

/// Rejects waits on remote barriers (C001) and inserts a `cluster_barrier`
/// into the prologue when remote arrivals exist and none guards them.
pub fn legalize_cluster(p: &KernelProgram) -> Result<KernelProgram, Vec<Diagnostic>> {
    let types = infer_types(p);
    let mut errors = Vec::new();
    p.walk(|id, task, inst| {
        let scope = task.map_or(Scope::Prologue, Scope::Task);
        if inst.op == Opcode::BarrierWait && inst.args.first().is_some_and(|a| remote_bar(&types, scope, a)) {
            errors.push(Diagnostic::error("C001", "wait on remote mbarrier").at(Some(id), inst.line));
        }
    });
    if !errors.is_empty() {
        return Err(errors);
    }
    if p.cluster_size() <= 1 || !has_remote_arrival(p, &types) {
        return Ok(p.clone());
    }
    // The first prologue instruction that may arrive remotely; tasks start
    // after the whole prologue.
    let first_remote = p
        .prologue
        .iter()
        .position(|i| arrives_remotely(&types, Scope::Prologue, i))
        .unwrap_or(p.prologue.len());
    if p.prologue[..first_remote].iter().any(|i| i.op == Opcode::ClusterBarrier) {
        return Ok(p.clone());
    }
    let mut q = p.clone();
    let line = q
        .prologue
        .get(first_remote)
        .map(|i| i.line)
        .or_else(|| q.prologue.last().map(|i| i.line))
        .unwrap_or(0);
    let mut cb = Inst::new(Opcode::ClusterBarrier);
    cb.line = line;
    q.prologue.insert(first_remote, cb);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_kernel, validate};

    const REMOTE: &str = "\
kernel r grid(2 1 1) cluster(2 1 1) warps(1)

barrier b count(1) arrive(1)

%b0 = local_view @b 0
%peer = cta_rank
%peer = sub 1 %peer

task default {
  barrier_arrive %b0 remote(%peer)
  barrier_wait %b0 0
}
";

    fn parse(src: &str) -> KernelProgram {
        let p = parse_kernel(src).unwrap();
        assert!(validate(&p).is_ok(), "{:?}", validate(&p).diagnostics);
        p
    }

    #[test]
    fn inserts_after_init() {
        let p = parse(REMOTE);
        let q = legalize_cluster(&p).unwrap();
        assert_eq!(q.prologue.len(), p.prologue.len() + 1);
        assert_eq!(q.prologue.last().unwrap().op, Opcode::ClusterBarrier);
        // Already legal programs are left alone.
        assert_eq!(legalize_cluster(&q).unwrap(), q);
    }

    #[test]
    fn inserts_before_prologue_remote_arrival() {
        let src = REMOTE.replace("%peer = sub 1 %peer\n", "%peer = sub 1 %peer\nbarrier_arrive %b0 remote(%peer)\n%z = cta_rank\n");
        let q = legalize_cluster(&parse(&src)).unwrap();
        let ops: Vec<_> = q.prologue.iter().map(|i| i.op).collect();
        let cb = ops.iter().position(|o| *o == Opcode::ClusterBarrier).unwrap();
        assert_eq!(ops[cb + 1], Opcode::BarrierArrive);
    }

    #[test]
    fn remote_wait_is_c001() {
        let src = REMOTE.replace("barrier_wait %b0 0", "%rb0 = remote_view %b0 %peer\n  barrier_wait %rb0 0");
        let errs = legalize_cluster(&parse(&src)).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "C001");
        assert_eq!(errs[0].message, "wait on remote mbarrier");
        assert!(errs[0].site.inst.is_some());
    }

    #[test]
    fn single_cta_cluster_is_identity() {
        let src = REMOTE.replace("grid(2 1 1) cluster(2 1 1)", "grid(2 1 1) cluster(1 1 1)").replace("remote(%peer)", "");
        let p = parse(&src);
        assert_eq!(legalize_cluster(&p).unwrap(), p);
    }
}
