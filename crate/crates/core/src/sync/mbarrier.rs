//! Phase-parity barrier with arrival and transaction-byte accounting.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MbarrierError {
    #[error("arrive on uninitialized barrier")]
    Uninitialized,
    #[error("arrive overflow: {arrivals} arrivals with {pending} pending")]
    Overflow { arrivals: u32, pending: u32 },
}

/// What a state transition did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transition {
    /// The phase completed and the parity bit flipped.
    pub flipped: bool,
    /// Transaction bytes landed before they were expected.
    pub early_bytes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MbarrierState {
    pub arrive_count: u32,
    pub pending: u32,
    pub phase: u8,
    pub tx_bytes: u64,
    pub init_done: bool,
    /// Completed phases since init.
    pub flips: u64,
    /// Bytes that completed with nothing expected; paid back by the next
    /// expect.
    pub tx_debt: u64,
}

impl MbarrierState {
    pub fn new(arrive_count: u32) -> Self {
        let mut b = MbarrierState::default();
        b.init(arrive_count);
        b
    }

    pub fn init(&mut self, arrive_count: u32) {
        *self = MbarrierState {
            arrive_count,
            pending: arrive_count,
            init_done: true,
            ..MbarrierState::default()
        };
    }

    fn settle(&mut self) -> bool {
        if self.pending == 0 && self.tx_bytes == 0 {
            self.phase ^= 1;
            self.flips += 1;
            self.pending = self.arrive_count;
            true
        } else {
            false
        }
    }

    pub fn arrive(&mut self, n: u32) -> Result<Transition, MbarrierError> {
        if !self.init_done {
            return Err(MbarrierError::Uninitialized);
        }
        if n > self.pending {
            return Err(MbarrierError::Overflow {
                arrivals: n,
                pending: self.pending,
            });
        }
        self.pending -= n;
        Ok(Transition {
            flipped: self.settle(),
            early_bytes: false,
        })
    }

    /// Adds expected transaction bytes. Does not count as an arrival.
    pub fn expect_bytes(&mut self, n: u64) -> Result<Transition, MbarrierError> {
        if !self.init_done {
            return Err(MbarrierError::Uninitialized);
        }
        let paid = n.min(self.tx_debt);
        self.tx_debt -= paid;
        self.tx_bytes += n - paid;
        Ok(Transition::default())
    }

    /// An asynchronous transfer of `n` bytes landed.
    pub fn complete_bytes(&mut self, n: u64) -> Result<Transition, MbarrierError> {
        if !self.init_done {
            return Err(MbarrierError::Uninitialized);
        }
        if n == 0 {
            return Ok(Transition::default());
        }
        let covered = n.min(self.tx_bytes);
        let early = n - covered;
        self.tx_debt += early;
        if covered == 0 {
            return Ok(Transition {
                flipped: false,
                early_bytes: true,
            });
        }
        self.tx_bytes -= covered;
        Ok(Transition {
            flipped: self.settle(),
            early_bytes: early > 0,
        })
    }

    /// A wait with `parity` is satisfied once the current phase differs.
    pub fn ready(&self, parity: u8) -> bool {
        self.init_done && self.phase != (parity & 1)
    }
}
