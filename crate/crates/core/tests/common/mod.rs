#![allow(dead_code)]

use pbcrt::{ObservedTrialF64, Record, VarianceComponentsF64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vc(rng: &mut impl Rng) -> VarianceComponentsF64 {
    VarianceComponentsF64 {
        sigma_w2: rng.random_range(0.1..3.0),
        tau_alpha2: rng.random_range(0.0..2.0),
        tau_gamma2: rng.random_range(0.0..1.0),
    }
}

/// Builds a trial from `(sequence, k0, k1)` per cluster with outcomes drawn
/// around a cluster effect, a period effect and a treatment effect.
pub fn trial_from_sizes(rng: &mut impl Rng, design: &[(u8, usize, usize)]) -> ObservedTrialF64 {
    let mut records = Vec::new();
    for (i, &(s, k0, k1)) in design.iter().enumerate() {
        let id = format!("k{i:03}");
        let alpha: f64 = rng.random_range(-1.0..1.0);
        for (j, k) in [(0u8, k0), (1u8, k1)] {
            let gamma: f64 = rng.random_range(-0.3..0.3);
            for _ in 0..k {
                let mean = 1.0 + alpha + gamma + 0.2 * f64::from(j) + 0.4 * f64::from(s * j);
                records.push(Record::new(id.clone(), j, s, mean + rng.random_range(-1.0..1.0)));
            }
        }
    }
    ObservedTrialF64::new(records).expect("valid design")
}

/// A random trial with an even number of clusters split between the arms.
///
/// `equal_periods` gives each cluster the same size in both periods;
/// `common_size` additionally gives every cluster the same size.
pub fn random_trial(rng: &mut impl Rng, equal_periods: bool, common_size: bool) -> ObservedTrialF64 {
    let n = 2 * rng.random_range(2..7usize);
    let shared = rng.random_range(1..15usize);
    let design: Vec<(u8, usize, usize)> = (0..n)
        .map(|i| {
            let k0 = if common_size { shared } else { rng.random_range(1..15usize) };
            let k1 = if equal_periods { k0 } else { rng.random_range(1..15usize) };
            ((i % 2) as u8, k0, k1)
        })
        .collect();
    trial_from_sizes(rng, &design)
}
