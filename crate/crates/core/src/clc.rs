//! Cluster launch control: a grid-wide tile queue and the per-CTA
//! producer/consumer slot protocol on top of it.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::ir::CLC_SLOT_BYTES;
use crate::sync::{MbarrierError, MbarrierState};

/// Hands out tile ids `0..total` once each, then `-1` forever.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileQueue {
    next: i64,
    total: i64,
}

impl TileQueue {
    pub fn new(total: u64) -> Self {
        TileQueue {
            next: 0,
            total: total as i64,
        }
    }

    pub fn pop(&mut self) -> i64 {
        if self.next < self.total {
            self.next += 1;
            self.next - 1
        } else {
            -1
        }
    }

    pub fn issued(&self) -> i64 {
        self.next
    }

    pub fn total(&self) -> i64 {
        self.total
    }
}

/// Response record: four little-endian 32-bit words, tile id in word 0.
pub fn encode_response(tile: i64) -> [u8; CLC_SLOT_BYTES] {
    let mut r = [0u8; CLC_SLOT_BYTES];
    r[..4].copy_from_slice(&(tile as i32).to_le_bytes());
    r
}

pub fn decode_response(r: &[u8; CLC_SLOT_BYTES]) -> i64 {
    i64::from(i32::from_le_bytes([r[0], r[1], r[2], r[3]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProducerStep {
    /// The next slot has not been released by every consumer yet.
    Blocked { stage: usize },
    /// Expect and arrive are done on the full barrier; the caller must now
    /// pop the queue and deliver the response into `stage`.
    Issued { stage: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumerStep {
    Blocked { stage: usize },
    Consumed { stage: usize, tile: i64 },
}

/// One CTA's CLC pipeline.
#[derive(Debug, Clone)]
pub struct ClcContext {
    pub stages: usize,
    pub consumers: u32,
    pub empty: Vec<MbarrierState>,
    pub full: Vec<MbarrierState>,
    pub slots: Vec<[u8; CLC_SLOT_BYTES]>,
    produced: BTreeMap<usize, u64>,
    consumed: BTreeMap<usize, u64>,
}

impl ClcContext {
    /// Barriers start initialized; every slot is immediately acquirable.
    pub fn new(stages: usize, consumers: u32) -> Self {
        ClcContext {
            stages,
            consumers,
            empty: (0..stages).map(|_| MbarrierState::new(consumers)).collect(),
            full: (0..stages).map(|_| MbarrierState::new(1)).collect(),
            slots: alloc::vec![[0u8; CLC_SLOT_BYTES]; stages],
            produced: BTreeMap::new(),
            consumed: BTreeMap::new(),
        }
    }

    fn at(&self, k: u64) -> (usize, u8) {
        let s = self.stages as u64;
        ((k % s) as usize, ((k / s) & 1) as u8)
    }

    /// Producer side for the calling task `who`.
    pub fn produce(&mut self, who: usize) -> Result<ProducerStep, MbarrierError> {
        let k = self.produced.get(&who).copied().unwrap_or(0);
        let (stage, parity) = self.at(k);
        if !self.empty[stage].ready(parity ^ 1) {
            return Ok(ProducerStep::Blocked { stage });
        }
        self.full[stage].expect_bytes(CLC_SLOT_BYTES as u64)?;
        self.full[stage].arrive(1)?;
        self.produced.insert(who, k + 1);
        Ok(ProducerStep::Issued { stage })
    }

    /// The asynchronous response lands. Returns whether the full barrier
    /// flipped.
    pub fn deliver(&mut self, stage: usize, tile: i64) -> Result<bool, MbarrierError> {
        self.slots[stage] = encode_response(tile);
        Ok(self.full[stage].complete_bytes(CLC_SLOT_BYTES as u64)?.flipped)
    }

    /// Consumer side for the calling task `who`.
    pub fn consume(&mut self, who: usize) -> Result<ConsumerStep, MbarrierError> {
        let k = self.consumed.get(&who).copied().unwrap_or(0);
        let (stage, parity) = self.at(k);
        if !self.full[stage].ready(parity) {
            return Ok(ConsumerStep::Blocked { stage });
        }
        let tile = decode_response(&self.slots[stage]);
        self.empty[stage].arrive(1)?;
        self.consumed.insert(who, k + 1);
        Ok(ConsumerStep::Consumed { stage, tile })
    }

    /// Stage a blocked consumer `who` is waiting on.
    pub fn consumer_stage(&self, who: usize) -> usize {
        self.at(self.consumed.get(&who).copied().unwrap_or(0)).0
    }
}
