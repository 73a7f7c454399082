//! Layout encodings, constraint priorities and the fact lattice.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MmaRole {
    A,
    B,
    Acc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayoutEncoding {
    RowMajor,
    ColMajor,
    /// Swizzle width in bytes: 32, 64 or 128.
    Swizzled(u16),
    MmaOperand(MmaRole),
}

impl LayoutEncoding {
    pub const ALL: [LayoutEncoding; 8] = [
        LayoutEncoding::RowMajor,
        LayoutEncoding::ColMajor,
        LayoutEncoding::Swizzled(32),
        LayoutEncoding::Swizzled(64),
        LayoutEncoding::Swizzled(128),
        LayoutEncoding::MmaOperand(MmaRole::A),
        LayoutEncoding::MmaOperand(MmaRole::B),
        LayoutEncoding::MmaOperand(MmaRole::Acc),
    ];

    pub fn token(self) -> &'static str {
        match self {
            LayoutEncoding::RowMajor => "row_major",
            LayoutEncoding::ColMajor => "col_major",
            LayoutEncoding::Swizzled(32) => "swizzle32",
            LayoutEncoding::Swizzled(64) => "swizzle64",
            LayoutEncoding::Swizzled(_) => "swizzle128",
            LayoutEncoding::MmaOperand(MmaRole::A) => "mma_a",
            LayoutEncoding::MmaOperand(MmaRole::B) => "mma_b",
            LayoutEncoding::MmaOperand(MmaRole::Acc) => "mma_acc",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|e| e.token() == s)
    }

    /// The encoding seen on the other side of a 2-D transpose.
    pub fn transposed(self) -> Self {
        match self {
            LayoutEncoding::RowMajor => LayoutEncoding::ColMajor,
            LayoutEncoding::ColMajor => LayoutEncoding::RowMajor,
            other => other,
        }
    }

    /// Whether a transpose changes how this encoding is recorded (swizzles
    /// keep their token but remember the axis permutation).
    pub fn permutes_under_transpose(self) -> bool {
        matches!(self, LayoutEncoding::Swizzled(_))
    }
}

impl fmt::Display for LayoutEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    HeuristicDefault = 1,
    UserRequested = 2,
    OperationRequired = 3,
}

impl Priority {
    pub fn token(self) -> &'static str {
        match self {
            Priority::HeuristicDefault => "default",
            Priority::UserRequested => "user",
            Priority::OperationRequired => "required",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "default" => Some(Priority::HeuristicDefault),
            "user" => Some(Priority::UserRequested),
            "required" => Some(Priority::OperationRequired),
            _ => None,
        }
    }
}

/// One constraint as observed at a particular value: the constraint id,
/// the encoding in this value's frame, and whether an odd number of
/// transposes separates the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Observation {
    pub constraint: usize,
    pub encoding: LayoutEncoding,
    pub permuted: bool,
}

/// Lattice element with provenance. `Any` is top, `Conflict` is bottom.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayoutFact {
    pub provenance: BTreeSet<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactKind {
    Any,
    Known(LayoutEncoding),
    Conflict,
}

impl LayoutFact {
    pub fn any() -> Self {
        LayoutFact::default()
    }

    pub fn known(obs: Observation) -> Self {
        let mut provenance = BTreeSet::new();
        provenance.insert(obs);
        LayoutFact { provenance }
    }

    pub fn kind(&self) -> FactKind {
        let mut encs = self.provenance.iter().map(|o| o.encoding);
        match encs.next() {
            None => FactKind::Any,
            Some(first) if encs.all(|e| e == first) => FactKind::Known(first),
            Some(_) => FactKind::Conflict,
        }
    }

    pub fn meet(&self, other: &LayoutFact) -> LayoutFact {
        LayoutFact {
            provenance: self.provenance.union(&other.provenance).copied().collect(),
        }
    }

    /// Meets `other` into `self`; returns true when `self` changed.
    pub fn meet_in(&mut self, other: &LayoutFact) -> bool {
        let before = self.provenance.len();
        self.provenance.extend(other.provenance.iter().copied());
        self.provenance.len() != before
    }

    /// The fact as seen across a transpose.
    pub fn transposed(&self) -> LayoutFact {
        LayoutFact {
            provenance: self
                .provenance
                .iter()
                .map(|o| Observation {
                    constraint: o.constraint,
                    encoding: o.encoding.transposed(),
                    permuted: o.permuted ^ o.encoding.permutes_under_transpose(),
                })
                .collect(),
        }
    }

    pub fn constraints(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.provenance.iter().map(|o| o.constraint).collect();
        ids.dedup();
        ids
    }
}

impl fmt::Display for LayoutFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            FactKind::Any => f.write_str("any"),
            FactKind::Known(e) => write!(f, "known({e})"),
            FactKind::Conflict => f.write_str("conflict"),
        }?;
        if !self.provenance.is_empty() {
            f.write_str(" [")?;
            for (i, o) in self.provenance.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "c{}:{}", o.constraint, o.encoding)?;
                if o.permuted {
                    f.write_str("'")?;
                }
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn obs(c: usize, e: LayoutEncoding) -> Observation {
        Observation {
            constraint: c,
            encoding: e,
            permuted: false,
        }
    }

    #[test]
    fn tokens_round_trip() {
        for e in LayoutEncoding::ALL {
            assert_eq!(LayoutEncoding::from_token(e.token()), Some(e));
        }
    }

    #[test]
    fn meet_table() {
        let any = LayoutFact::any();
        let a = LayoutFact::known(obs(0, LayoutEncoding::RowMajor));
        let a2 = LayoutFact::known(obs(1, LayoutEncoding::RowMajor));
        let b = LayoutFact::known(obs(2, LayoutEncoding::MmaOperand(MmaRole::A)));
        assert_eq!(any.meet(&a).kind(), a.kind());
        assert_eq!(a.meet(&a2).kind(), FactKind::Known(LayoutEncoding::RowMajor));
        assert_eq!(a.meet(&b).kind(), FactKind::Conflict);
        assert_eq!(a.meet(&b).meet(&any).kind(), FactKind::Conflict);
        assert_eq!(a.meet(&b).constraints(), vec![0, 2]);
    }

    #[test]
    fn transpose_flips_majors_only() {
        let r = LayoutFact::known(obs(0, LayoutEncoding::RowMajor)).transposed();
        assert_eq!(r.kind(), FactKind::Known(LayoutEncoding::ColMajor));
        let s = LayoutFact::known(obs(0, LayoutEncoding::Swizzled(128))).transposed();
        assert_eq!(s.kind(), FactKind::Known(LayoutEncoding::Swizzled(128)));
        assert!(s.provenance.iter().all(|o| o.permuted));
    }

    fn enc() -> impl Strategy<Value = LayoutEncoding> {
        (0..LayoutEncoding::ALL.len()).prop_map(|i| LayoutEncoding::ALL[i])
    }

    fn fact() -> impl Strategy<Value = LayoutFact> {
        proptest::collection::vec((0usize..6, enc()), 0..4).prop_map(|v| LayoutFact {
            provenance: v.into_iter().map(|(c, e)| obs(c, e)).collect(),
        })
    }

    fn rank(k: FactKind) -> u8 {
        match k {
            FactKind::Any => 2,
            FactKind::Known(_) => 1,
            FactKind::Conflict => 0,
        }
    }

    proptest! {
        #[test]
        fn meet_is_commutative_associative_idempotent(a in fact(), b in fact(), c in fact()) {
            prop_assert_eq!(a.meet(&b), b.meet(&a));
            prop_assert_eq!(a.meet(&b).meet(&c), a.meet(&b.meet(&c)));
            prop_assert_eq!(a.meet(&a), a.clone());
        }

        #[test]
        fn meet_only_descends(a in fact(), b in fact()) {
            let m = a.meet(&b);
            prop_assert!(rank(m.kind()) <= rank(a.kind()));
            prop_assert!(rank(m.kind()) <= rank(b.kind()));
        }

        #[test]
        fn transpose_is_an_involution(a in fact()) {
            prop_assert_eq!(a.transposed().transposed(), a);
        }
    }
}
