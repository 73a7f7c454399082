//! Trace records and their JSON-lines rendering.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub cluster: usize,
    pub cta: usize,
    pub task: String,
    pub event: String,
    pub detail: String,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

impl TraceEvent {
    pub fn to_json(&self) -> String {
        format!(
            "{{\"step\":{},\"cluster\":{},\"cta\":{},\"task\":\"{}\",\"event\":\"{}\",\"detail\":\"{}\"}}",
            self.step,
            self.cluster,
            self.cta,
            escape(&self.task),
            escape(&self.event),
            escape(&self.detail)
        )
    }
}

/// Totals reported at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    pub steps: u64,
    /// `(cta, task label)` → instructions executed.
    pub task_steps: BTreeMap<(usize, String), u64>,
    /// `(cta, barrier, index)` → completed phases.
    pub barrier_flips: BTreeMap<(usize, String, usize), u64>,
    /// cta → tile ids delivered by CLC, in delivery order.
    pub clc_dispatch: BTreeMap<usize, Vec<i64>>,
    pub bank_conflicts: u64,
    /// tensor → total element loads.
    pub global_loads: BTreeMap<String, u64>,
    pub races: usize,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\"summary\":{");
        let _ = write!(s, "\"steps\":{}", self.steps);
        s.push_str(",\"task_steps\":[");
        for (i, ((cta, t), n)) in self.task_steps.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{{\"cta\":{cta},\"task\":\"{}\",\"steps\":{n}}}", escape(t));
        }
        s.push_str("],\"barrier_flips\":[");
        for (i, ((cta, b, idx), n)) in self.barrier_flips.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{{\"cta\":{cta},\"barrier\":\"{}\",\"index\":{idx},\"flips\":{n}}}", escape(b));
        }
        s.push_str("],\"clc_dispatch\":[");
        for (i, (cta, ids)) in self.clc_dispatch.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let list: Vec<String> = ids.iter().map(|x| format!("{x}")).collect();
            let _ = write!(
                s,
                "{{\"cta\":{cta},\"count\":{},\"tiles\":[{}]}}",
                ids.iter().filter(|&&x| x >= 0).count(),
                list.join(",")
            );
        }
        let _ = write!(s, "],\"bank_conflicts\":{}", self.bank_conflicts);
        s.push_str(",\"global_loads\":{");
        for (i, (t, n)) in self.global_loads.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "\"{}\":{n}", escape(t));
        }
        let _ = write!(s, "}},\"races\":{},\"warnings\":[", self.races);
        for (i, w) in self.warnings.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "\"{}\"", escape(w));
        }
        s.push_str("]}}");
        s
    }
}

/// Renders events one per line followed by the summary record.
pub fn render_trace(events: &[TraceEvent], summary: &Summary) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json());
        out.push('\n');
    }
    out.push_str(&summary.to_json());
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_shape() {
        let e = TraceEvent {
            step: 3,
            cluster: 0,
            cta: 1,
            task: "task1".into(),
            event: "barrier_wait".into(),
            detail: "full[0] \"p\"".into(),
        };
        assert_eq!(
            e.to_json(),
            r#"{"step":3,"cluster":0,"cta":1,"task":"task1","event":"barrier_wait","detail":"full[0] \"p\""}"#
        );
        let s = Summary::default().to_json();
        assert!(s.starts_with("{\"summary\":{\"steps\":0"));
        assert!(s.ends_with("\"warnings\":[]}}"));
    }
}
