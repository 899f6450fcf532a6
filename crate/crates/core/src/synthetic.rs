//! Planted-model data generator.
//!
//! Ratings are `x_m · y_n + g_m + h_n + noise`, clipped at zero, observed on
//! a uniformly random subset of cells of the requested density.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{SparseDataset, Triple};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Fraction of cells observed.
    pub density: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Planted factor entries are uniform on [0, factor_scale].
    pub factor_scale: f64,
    /// Planted biases are uniform on [0, bias_scale].
    pub bias_scale: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 80,
            rank: 3,
            density: 0.15,
            noise: 0.01,
            factor_scale: 1.0,
            bias_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: SparseDataset,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub row_bias: Vec<f64>,
    pub col_bias: Vec<f64>,
}

impl Planted {
    /// Noise-free value of cell (m, n).
    pub fn clean(&self, m: usize, n: usize) -> f64 {
        self.x.row(m).dot(&self.y.row(n)) + self.row_bias[m] + self.col_bias[n]
    }
}

pub fn planted(spec: &PlantedSpec) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut uniform = |rows, cols, scale: f64| {
        Array2::from_shape_simple_fn((rows, cols), || scale * rng.random::<f64>())
    };
    let x = uniform(spec.rows, spec.rank, spec.factor_scale);
    let y = uniform(spec.cols, spec.rank, spec.factor_scale);
    let row_bias = uniform(spec.rows, 1, spec.bias_scale).into_raw_vec_and_offset().0;
    let col_bias = uniform(spec.cols, 1, spec.bias_scale).into_raw_vec_and_offset().0;

    let cells = spec.rows * spec.cols;
    let count = ((cells as f64) * spec.density.clamp(0.0, 1.0)).round() as usize;
    let mut picked: Vec<usize> = sample(&mut rng, cells, count).into_vec();
    picked.sort_unstable();

    let mut planted = Planted {
        dataset: SparseDataset::from_triples(spec.rows, spec.cols, Vec::new()),
        x,
        y,
        row_bias,
        col_bias,
    };
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite sigma");
    let entries = picked
        .into_iter()
        .map(|cell| {
            let (m, n) = (cell / spec.cols, cell % spec.cols);
            let value = (planted.clean(m, n) + noise.sample(&mut rng)).max(0.0);
            Triple {
                row: m as u32,
                col: n as u32,
                value,
            }
        })
        .collect();
    planted.dataset = SparseDataset::from_triples(spec.rows, spec.cols, entries);
    planted
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let spec = PlantedSpec::default();
        let a = planted(&spec);
        assert_eq!(a.dataset.len(), 1200);
        assert_eq!(a.dataset.num_rows(), 100);
        let b = planted(&spec);
        assert_eq!(a.dataset, b.dataset);
        assert!(a.dataset.entries().iter().all(|t| t.value >= 0.0));
    }

    #[test]
    fn noise_is_small() {
        let p = planted(&PlantedSpec::default());
        let worst = p
            .dataset
            .entries()
            .iter()
            .map(|t| (t.value - p.clean(t.row as usize, t.col as usize)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.06, "{worst}");
    }
}
