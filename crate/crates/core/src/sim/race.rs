//! Vector-clock happens-before tracking at barrier granularity.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VClock(Vec<u64>);

impl VClock {
    pub fn get(&self, agent: usize) -> u64 {
        self.0.get(agent).copied().unwrap_or(0)
    }

    pub fn set(&mut self, agent: usize, t: u64) {
        if self.0.len() <= agent {
            self.0.resize(agent + 1, 0);
        }
        self.0[agent] = t;
    }

    pub fn tick(&mut self, agent: usize) {
        let t = self.get(agent) + 1;
        self.set(agent, t);
    }

    pub fn join(&mut self, o: &VClock) {
        if self.0.len() < o.0.len() {
            self.0.resize(o.0.len(), 0);
        }
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a = (*a).max(*b);
        }
    }
}

/// Clock state attached to one barrier instance: arrivals of the current
/// phase accumulate, completion publishes them to waiters.
#[derive(Debug, Clone, Default)]
pub struct BarrierClock {
    accum: VClock,
    completed: VClock,
}

impl BarrierClock {
    pub fn release(&mut self, c: &VClock) {
        self.accum.join(c);
    }

    pub fn complete(&mut self) {
        let a = core::mem::take(&mut self.accum);
        self.completed.join(&a);
    }

    pub fn acquire(&self, c: &mut VClock) {
        c.join(&self.completed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RaceKind {
    WriteWrite,
    ReadWrite,
    WriteRead,
    UninitializedBarrier,
}

impl RaceKind {
    pub fn token(self) -> &'static str {
        match self {
            RaceKind::WriteWrite => "W/W",
            RaceKind::ReadWrite => "R/W",
            RaceKind::WriteRead => "W/R",
            RaceKind::UninitializedBarrier => "uninitialized_barrier",
        }
    }
}

/// One reported race: the earlier and later access sites.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Race {
    pub kind: RaceKind,
    pub cta: usize,
    /// Buffer (or barrier) name.
    pub object: String,
    pub index: usize,
    pub first: String,
    pub second: String,
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RaceKind::UninitializedBarrier => write!(
                f,
                "arrive on uninitialized barrier {}[{}] of cta {} by {}",
                self.object, self.index, self.cta, self.second
            ),
            k => write!(
                f,
                "{} race on {}[{}] of cta {}: {} vs {}",
                k.token(),
                self.object,
                self.index,
                self.cta,
                self.first,
                self.second
            ),
        }
    }
}

#[derive(Debug, Clone)]
struct Access {
    agent: usize,
    time: u64,
    site: String,
}

#[derive(Debug, Clone, Default)]
struct Location {
    write: Option<Access>,
    reads: BTreeMap<usize, Access>,
}

/// Last-access epochs per `(cta, storage, stage)`.
#[derive(Debug, Clone, Default)]
pub struct RaceDetector {
    locs: BTreeMap<(usize, usize, usize), Location>,
}

impl RaceDetector {
    fn ordered(a: &Access, c: &VClock) -> bool {
        a.time <= c.get(a.agent)
    }

    pub fn read(&mut self, key: (usize, usize, usize), agent: usize, c: &VClock, site: &str) -> Option<(RaceKind, String)> {
        let loc = self.locs.entry(key).or_default();
        let race = match &loc.write {
            Some(w) if w.agent != agent && !Self::ordered(w, c) => Some((RaceKind::WriteRead, w.site.clone())),
            _ => None,
        };
        loc.reads.insert(
            agent,
            Access {
                agent,
                time: c.get(agent),
                site: String::from(site),
            },
        );
        race
    }

    pub fn write(&mut self, key: (usize, usize, usize), agent: usize, c: &VClock, site: &str) -> Option<(RaceKind, String)> {
        let loc = self.locs.entry(key).or_default();
        let mut race = match &loc.write {
            Some(w) if w.agent != agent && !Self::ordered(w, c) => Some((RaceKind::WriteWrite, w.site.clone())),
            _ => None,
        };
        if race.is_none() {
            race = loc
                .reads
                .values()
                .find(|r| r.agent != agent && !Self::ordered(r, c))
                .map(|r| (RaceKind::ReadWrite, r.site.clone()));
        }
        loc.write = Some(Access {
            agent,
            time: c.get(agent),
            site: String::from(site),
        });
        loc.reads.clear();
        race
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unordered_writes_race() {
        let mut d = RaceDetector::default();
        let (mut a, mut b) = (VClock::default(), VClock::default());
        a.tick(0);
        b.tick(1);
        assert!(d.write((0, 0, 0), 0, &a, "a").is_none());
        assert_eq!(d.write((0, 0, 0), 1, &b, "b").unwrap().0, RaceKind::WriteWrite);
    }

    #[test]
    fn barrier_orders_accesses() {
        let mut d = RaceDetector::default();
        let (mut a, mut b) = (VClock::default(), VClock::default());
        a.tick(0);
        b.tick(1);
        let mut bar = BarrierClock::default();
        assert!(d.write((0, 0, 0), 0, &a, "a").is_none());
        bar.release(&a);
        a.tick(0);
        bar.complete();
        bar.acquire(&mut b);
        assert!(d.read((0, 0, 0), 1, &b, "b").is_none());
        // A later write by `a` has not seen the read.
        assert_eq!(d.write((0, 0, 0), 0, &a, "a2").unwrap().0, RaceKind::ReadWrite);
    }
}
