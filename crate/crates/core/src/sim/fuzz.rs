//! Seeded schedule fuzzing: one simulation per seed, outputs compared
//! bitwise against the first successful run.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{simulate, Race, Scheduler, SimConfig};
use crate::layout::ResolvedProgram;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuzzReport {
    pub runs: usize,
    /// Seeds whose outputs differ from the reference run.
    pub divergent: Vec<u64>,
    /// Seeds with at least one race, and the first one seen.
    pub races: Vec<(u64, Race)>,
    pub faults: Vec<(u64, String)>,
}

impl FuzzReport {
    pub fn is_clean(&self) -> bool {
        self.divergent.is_empty() && self.races.is_empty() && self.faults.is_empty()
    }
}

fn bits(outputs: &BTreeMap<String, Tensor>) -> BTreeMap<&str, Vec<u32>> {
    outputs
        .iter()
        .map(|(k, t)| (k.as_str(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

/// The configuration used for `seed`. With `vary_latency` the CLC response
/// latency is drawn from `[0, 8]` and the copy and remote delays from
/// `[0, 4]`.
pub fn fuzz_config(base: &SimConfig, seed: u64, vary_latency: bool) -> SimConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.scheduler = Scheduler::SeededRandom;
    cfg.record_trace = false;
    if vary_latency {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_6d77);
        cfg.clc_latency = rng.random_range(0..=8);
        cfg.async_copy_latency = rng.random_range(0..=4);
        cfg.remote_arrive_delay = rng.random_range(0..=4);
    }
    cfg
}

pub fn fuzz(
    r: &ResolvedProgram,
    inputs: &BTreeMap<String, Tensor>,
    base: &SimConfig,
    seeds: impl IntoIterator<Item = u64>,
    vary_latency: bool,
) -> FuzzReport {
    let mut report = FuzzReport::default();
    let mut reference: Option<BTreeMap<String, Tensor>> = None;
    for seed in seeds {
        report.runs += 1;
        let cfg = fuzz_config(base, seed, vary_latency);
        match simulate(r, inputs, &cfg) {
            Ok(res) => {
                if let Some(race) = res.races.first() {
                    report.races.push((seed, race.clone()));
                }
                match &reference {
                    None => reference = Some(res.outputs),
                    Some(want) => {
                        if bits(want) != bits(&res.outputs) {
                            report.divergent.push(seed);
                        }
                    }
                }
            }
            Err(e) => {
                if let Some(race) = e.races.first() {
                    report.races.push((seed, race.clone()));
                }
                report.faults.push((seed, e.fault.to_string()));
            }
        }
    }
    report
}
