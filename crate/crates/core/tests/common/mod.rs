//! Shared helpers for the integration suites: deterministic RNG and random
//! measure generators.

#![allow(dead_code)]

use fibred::measures::{Cell, DiscreteMeasure, FibredMeasure, LabelMarginal};

/// Tiny deterministic generator (splitmix64 stream) so test inputs are
/// reproducible without pulling a full RNG into every suite.
pub struct TestRng {
    state: u64,
}

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }
}

/// Random normalised weight vector of length `n`.
pub fn random_weights(rng: &mut TestRng, n: usize) -> Vec<f64> {
    let mut ws: Vec<f64> = (0..n).map(|_| rng.unit() + 0.05).collect();
    let sum: f64 = ws.iter().sum();
    ws.iter_mut().for_each(|w| *w /= sum);
    ws
}

/// Distinct random atom positions in `[0, 1]`.
pub fn random_atom_positions(rng: &mut TestRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 + 0.1 + 0.8 * rng.unit()) / n as f64)
        .collect()
}

/// A random fibred measure on the given atomic layout.
pub fn random_atomic_measure(
    rng: &mut TestRng,
    positions: &[f64],
    weights: &[f64],
    dim: usize,
    radius: f64,
) -> FibredMeasure<f64> {
    let atoms = positions
        .iter()
        .zip(weights)
        .map(|(&omega, &w)| {
            let npts = rng.usize_in(1, 3);
            let pts = (0..npts)
                .map(|_| {
                    (
                        (0..dim).map(|_| rng.range(-radius, radius)).collect::<Vec<_>>(),
                        1.0 / npts as f64,
                    )
                })
                .collect();
            (omega, w, pts)
        })
        .collect();
    FibredMeasure::from_atoms(atoms, dim).unwrap()
}

/// A matched-marginal pair of random atomic measures.
pub fn random_matched_pair(
    rng: &mut TestRng,
    dim: usize,
    radius: f64,
) -> (FibredMeasure<f64>, FibredMeasure<f64>) {
    let n = rng.usize_in(2, 4);
    let positions = random_atom_positions(rng, n);
    let weights = random_weights(rng, n);
    (
        random_atomic_measure(rng, &positions, &weights, dim, radius),
        random_atomic_measure(rng, &positions, &weights, dim, radius),
    )
}

/// Random discrete measure with uniform weights and exactly `n` points.
pub fn random_uniform_discrete(
    rng: &mut TestRng,
    n: usize,
    dim: usize,
    radius: f64,
) -> DiscreteMeasure<f64> {
    loop {
        let w = 1.0 / n as f64;
        let m = DiscreteMeasure::new(
            (0..n)
                .map(|_| ((0..dim).map(|_| rng.range(-radius, radius)).collect(), w))
                .collect(),
            dim,
        )
        .unwrap();
        if m.len() == n {
            return m;
        }
    }
}

/// Piecewise-constant measure on the equipartition into `n` cells with
/// one-point fibres at `f(rep)`.
pub fn graph_measure(
    pi: &LabelMarginal<f64>,
    n: usize,
    f: impl Fn(f64) -> f64,
) -> FibredMeasure<f64> {
    let part = fibred::discretize::equipartition(pi, n).unwrap();
    FibredMeasure::from_fibre_fn(pi.clone(), part.cells().to_vec(), 1, |rep| {
        vec![(vec![f(rep)], 1.0)]
    })
    .unwrap()
}

/// Two-atom measure `½(δ_{(0,lo)} + δ_{(ε,hi)})` (the opposite-drift
/// counterexample layout).
pub fn two_atom_measure(eps: f64, lo: f64, hi: f64) -> FibredMeasure<f64> {
    FibredMeasure::from_atoms(
        vec![
            (0.0, 0.5, vec![(vec![lo], 1.0)]),
            (eps, 0.5, vec![(vec![hi], 1.0)]),
        ],
        1,
    )
    .unwrap()
}

pub fn interval_cells(bounds: &[f64]) -> Vec<Cell<f64>> {
    bounds.windows(2).map(|w| Cell::interval(w[0], w[1])).collect()
}
