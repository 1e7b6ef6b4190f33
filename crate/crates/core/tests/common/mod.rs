#![allow(dead_code)]

use capgame::{random_instance, NetworkInstance, PayoffMode, RandomInstanceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SIZE: usize = 520;

/// Seeded instance family: up to 20 links and 40 flows, routing probability
/// 0.5, capacities in [10, 100], gamma in {0.5, 1}, both payoff modes.
pub fn corpus() -> Vec<(u64, NetworkInstance)> {
    corpus_sized(CORPUS_SIZE, 20, 40)
}

pub fn corpus_sized(n: usize, max_links: usize, max_flows: usize) -> Vec<(u64, NetworkInstance)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n as u64)
        .map(|i| {
            let spec = RandomInstanceSpec {
                links: rng.gen_range(1..=max_links),
                flows: rng.gen_range(1..=max_flows),
                p_route: 0.5,
                cap_range: (10.0, 100.0),
                gamma: if i % 2 == 0 { 0.5 } else { 1.0 },
                payoff_mode: if (i / 2) % 2 == 0 {
                    PayoffMode::Uniform
                } else {
                    PayoffMode::PathLength
                },
                seed: 1000 + i,
                randomize_weights: i % 3 == 0,
            };
            (spec.seed, random_instance(&spec).expect("valid spec"))
        })
        .collect()
}

/// Instances with at most four links and four flows.
pub fn tiny_corpus(n: usize, seed: u64) -> Vec<NetworkInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| {
            let spec = RandomInstanceSpec {
                links: rng.gen_range(1..=4),
                flows: rng.gen_range(1..=4),
                p_route: 0.5,
                cap_range: (2.0, 10.0),
                gamma: if i % 2 == 0 { 0.5 } else { 1.0 },
                payoff_mode: PayoffMode::Uniform,
                seed: seed * 7919 + i,
                randomize_weights: true,
            };
            random_instance(&spec).expect("valid spec")
        })
        .collect()
}
