#![allow(dead_code)]

use dnlfa::data::{SparseDataset, Triple};
use dnlfa::model::{Hyperparameters, Model, Variant};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random observed pattern with exactly `round(density·rows·cols)` entries
/// and values uniform on [0, value_max).
pub fn random_dataset(rows: usize, cols: usize, density: f64, value_max: f64, seed: u64) -> SparseDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (density * (rows * cols) as f64).round() as usize;
    let mut cells = sample(&mut rng, rows * cols, count).into_vec();
    cells.sort_unstable();
    let entries = cells
        .into_iter()
        .map(|c| Triple {
            row: (c / cols) as u32,
            col: (c % cols) as u32,
            value: rng.random::<f64>() * value_max,
        })
        .collect();
    SparseDataset::from_triples(rows, cols, entries)
}

pub struct Instance {
    pub model: Model,
    pub ds: SparseDataset,
}

/// Model with every X, Y, G, H entry uniform on [lo, hi] and all masks on.
pub fn random_instance(
    ds: SparseDataset,
    d1: usize,
    d2: usize,
    lambda: f64,
    (lo, hi): (f64, f64),
    seed: u64,
) -> Instance {
    let variant = if d2 == 0 { Variant::Nlfa } else { Variant::Dnlfa };
    let hp = Hyperparameters {
        variant,
        d1,
        d2,
        lambda,
        ..Hyperparameters::default()
    };
    let mut model = Model::init_for(&hp, &ds, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut fill = |a: &mut ndarray::Array2<f64>| a.mapv_inplace(|_| lo + (hi - lo) * rng.random::<f64>());
    fill(&mut model.factors.x);
    fill(&mut model.factors.y);
    if let Some(b) = model.biases.as_mut() {
        fill(&mut b.g);
        fill(&mut b.h);
    }
    Instance { model, ds }
}

/// Relative difference, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
