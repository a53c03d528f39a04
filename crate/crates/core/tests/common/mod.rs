#![allow(dead_code)]

use cqstream::dp::{BufferGrid, FinalBuffer, PlanRequest};
use cqstream::ladder::Level;
use cqstream::utility::Objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random planning instance that owns its window.
#[derive(Debug, Clone)]
pub struct Instance {
    pub window: Vec<Vec<Level>>,
    pub b_init: f64,
    pub b_final: FinalBuffer,
    pub grid: BufferGrid,
    pub tau: f64,
    pub bandwidth: f64,
}

impl Instance {
    pub fn request(&self, objective: Objective) -> PlanRequest<'_> {
        PlanRequest {
            b_init: self.b_init,
            b_final: self.b_final,
            grid: self.grid,
            tau: self.tau,
            bandwidth_bps: self.bandwidth,
            window: &self.window,
            objective,
            prev_level: None,
        }
    }
}

/// Seeded instance with `H <= 7`, `L <= 3` and `K` drawn from {50, 400}.
/// Bitrates straddle the bandwidth so both buffer directions occur.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.gen_range(1..=7);
    let l = rng.gen_range(1..=3);
    let bins = if rng.gen_bool(0.5) { 50 } else { 400 };
    let bandwidth = 1e6;
    let tau = 2.0;
    let window = (0..h)
        .map(|_| {
            let mut rate = rng.gen_range(0.3e6..0.9e6);
            (0..l)
                .map(|i| {
                    if i > 0 {
                        rate *= rng.gen_range(1.2..2.0);
                    }
                    Level::new(rate, rng.gen_range(1.0..10.0))
                })
                .collect()
        })
        .collect();
    let b_low = rng.gen_range(0.0..5.0);
    let b_high = b_low + rng.gen_range(2.0..12.0);
    let grid = BufferGrid::new(b_low, b_high, bins).unwrap();
    let b_init = rng.gen_range(b_low..=b_high);
    let b_final = if rng.gen_bool(0.7) {
        FinalBuffer::Target(rng.gen_range(b_low..=b_high))
    } else {
        FinalBuffer::Free
    };
    Instance {
        window,
        b_init,
        b_final,
        grid,
        tau,
        bandwidth,
    }
}
