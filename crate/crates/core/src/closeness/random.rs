//! Seeded synthetic instances for the abstract framework.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FormPair, IdentificationSet};

fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    // rank between 1 and n, so singular forms occur
    let rank = rng.random_range(1..=n);
    let scale = 10f64.powf(rng.random_range(-1.0..1.5));
    let b = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let k = &b * b.transpose() * scale;
    (&k + k.transpose()) * 0.5
}

fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.2..5.0)).collect()
}

fn random_map(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let s = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * s)
}

/// Instance with the given dimensions and order `k`: random PSD forms
/// (possibly singular), random weights in `[0.2, 5]` and unrelated random maps.
pub fn random_instance_dims(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    k: u8,
) -> (FormPair, IdentificationSet) {
    let pair = FormPair::new(
        random_psd(rng, n),
        random_weights(rng, n),
        random_psd(rng, m),
        random_weights(rng, m),
    )
    .expect("valid random forms");
    let j = random_map(rng, m, n);
    let jp = random_map(rng, n, m);
    let j1 = &j + random_map(rng, m, n) * rng.random_range(0.0..0.5);
    let j1p = &jp + random_map(rng, n, m) * rng.random_range(0.0..0.5);
    (pair, IdentificationSet { j, jp, j1, j1p, k })
}

/// Instance with dimensions drawn from `1..=max_dim` and `k ∈ {1, 2}`.
pub fn random_instance(rng: &mut impl Rng, max_dim: usize) -> (FormPair, IdentificationSet) {
    let n = rng.random_range(1..=max_dim);
    let m = rng.random_range(1..=max_dim);
    let k = rng.random_range(1..=2);
    random_instance_dims(rng, n, m, k)
}

/// A pair `(A, A + ηE)` with identifications `I + ηF` and its weighted
/// adjoint. The base data depend only on `seed`, so a sweep over `eta` is a
/// family with every condition constant proportional to `eta`.
pub fn near_identical_instance(n: usize, eta: f64, seed: u64) -> (FormPair, IdentificationSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_psd(&mut rng, n) + DMatrix::identity(n, n);
    let e = random_psd(&mut rng, n);
    let w = random_weights(&mut rng, n);
    let f = random_map(&mut rng, n, n);
    let j = DMatrix::identity(n, n) + f * eta;
    // weighted adjoint W⁻¹ Jᵀ W
    let jp = DMatrix::from_fn(n, n, |r, c| j[(c, r)] * w[c] / w[r]);
    let pair = FormPair::new(k.clone(), w.clone(), k + e * eta, w).expect("valid forms");
    (
        pair,
        IdentificationSet {
            j1: j.clone(),
            j1p: jp.clone(),
            j,
            jp,
            k: 2,
        },
    )
}
