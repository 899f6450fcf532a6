//! Demo operations behind the browser page. Each takes and returns JSON so
//! the bindings stay trivial and everything here runs under `cargo test`.

use dnlfa::data::{FoldPlan, Role, SparseDataset};
use dnlfa::eval::{self, Timing};
use dnlfa::model::{Hyperparameters, Variant};
use dnlfa::synthetic::{planted, PlantedSpec};
use dnlfa::Trainer;
use serde::{Deserialize, Serialize};

/// Largest matrix the page may request; keeps a click under a few seconds.
pub const MAX_CELLS: usize = 200 * 200;
pub const MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DataParams {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub density: f64,
    pub noise: f64,
    pub bias_scale: f64,
    pub seed: u64,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 80,
            rank: 3,
            density: 0.15,
            noise: 0.01,
            bias_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub variant: String,
    pub d1: usize,
    pub d2: usize,
    pub lambda: f64,
    pub threshold_e: f64,
    pub init_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            variant: "dnlfa".into(),
            d1: 5,
            d2: 2,
            lambda: 0.05,
            threshold_e: 0.01,
            init_scale: 0.05,
            max_iters: 300,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl ModelParams {
    fn hyperparameters(&self, variant: Variant) -> Result<Hyperparameters, String> {
        if self.max_iters > MAX_ITERS {
            return Err(format!("max_iters is capped at {MAX_ITERS} in the demo"));
        }
        let base = Hyperparameters {
            variant: Variant::Dnlfa,
            d1: self.d1,
            d2: self.d2,
            lambda: self.lambda,
            threshold_e: self.threshold_e,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            init_scale: self.init_scale,
        };
        let hp = base.for_variant(variant);
        hp.validate().map_err(|e| e.to_string())?;
        Ok(hp)
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(default)]
struct Request {
    data: DataParams,
    model: ModelParams,
    /// Thresholds for the sweep.
    thresholds: Vec<f64>,
    /// Repetitions for the comparison.
    repetitions: usize,
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub variant: String,
    pub train_rmse: Vec<f64>,
    pub valid_rmse: Vec<f64>,
    pub active_i: Vec<usize>,
    pub active_j: Vec<usize>,
    pub bias_slots: usize,
    pub termination: String,
    pub test_rmse: f64,
    /// RMSE of the noise-free planted model on the test entries.
    pub floor_rmse: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub threshold_e: f64,
    pub test_rmse: f64,
    pub active_fraction: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub rmse_mean: f64,
    pub rmse_std: Option<f64>,
    pub iters_mean: f64,
}

struct Split {
    data: dnlfa::synthetic::Planted,
    train: SparseDataset,
    valid: SparseDataset,
    test: SparseDataset,
}

fn split(p: &DataParams) -> Result<Split, String> {
    if p.rows == 0 || p.cols == 0 || p.rows * p.cols > MAX_CELLS {
        return Err(format!("matrix must be non-empty and at most {MAX_CELLS} cells"));
    }
    if !(p.density > 0.0 && p.density <= 1.0) || p.rank == 0 {
        return Err("density must be in (0, 1] and rank positive".into());
    }
    let data = planted(&PlantedSpec {
        rows: p.rows,
        cols: p.cols,
        rank: p.rank,
        density: p.density,
        noise: p.noise.max(0.0),
        factor_scale: 1.0,
        bias_scale: p.bias_scale.max(0.0),
        seed: p.seed,
    });
    let plan = FoldPlan::new(&data.dataset, p.seed).map_err(|e| e.to_string())?;
    let part = |role| data.dataset.subset(&plan, role).map_err(|e| e.to_string());
    Ok(Split {
        train: part(Role::Train)?,
        valid: part(Role::Validation)?,
        test: part(Role::Test)?,
        data,
    })
}

fn curve(split: &Split, hp: &Hyperparameters) -> Result<Curve, String> {
    let mut trainer =
        Trainer::new(hp, &split.train, Some(&split.valid), hp.seed).map_err(|e| e.to_string())?;
    while !trainer.is_done() {
        trainer.step();
    }
    let (model, report) = trainer.into_parts();
    let test_rmse = eval::rmse(&model, &split.test).map_err(|e| e.to_string())?;
    let floor_rmse =
        eval::rmse_with(&split.test, |m, n| split.data.clean(m, n)).map_err(|e| e.to_string())?;
    let r = &report.records;
    Ok(Curve {
        variant: hp.variant.label().to_string(),
        train_rmse: r.iter().map(|x| x.train_rmse).collect(),
        valid_rmse: r.iter().filter_map(|x| x.valid_rmse).collect(),
        active_i: r.iter().map(|x| x.active_i).collect(),
        active_j: r.iter().map(|x| x.active_j).collect(),
        bias_slots: (model.num_rows() + model.num_cols()) * hp.d2,
        termination: report.termination.to_string(),
        test_rmse,
        floor_rmse,
    })
}

fn parse(json: &str) -> Result<Request, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn variant(name: &str) -> Result<Variant, String> {
    name.parse().map_err(|e: dnlfa::model::ModelError| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Trains one model on planted data and returns its per-iteration curves.
pub fn train_curve(json: &str) -> Result<String, String> {
    let req = parse(json)?;
    let hp = req.model.hyperparameters(variant(&req.model.variant)?)?;
    let split = split(&req.data)?;
    to_json(&curve(&split, &hp)?)
}

/// Trains DNLFA once per threshold on the same split and initialization.
pub fn threshold_sweep(json: &str) -> Result<String, String> {
    let req = parse(json)?;
    if req.thresholds.is_empty() || req.thresholds.len() > 12 {
        return Err("give between 1 and 12 thresholds".into());
    }
    let split = split(&req.data)?;
    let points = req
        .thresholds
        .iter()
        .map(|&e| {
            let hp = ModelParams { threshold_e: e, ..req.model.clone() }
                .hyperparameters(Variant::Dnlfa)?;
            let c = curve(&split, &hp)?;
            let active = c.active_i.last().zip(c.active_j.last()).map_or(0, |(i, j)| i + j);
            Ok(SweepPoint {
                threshold_e: e,
                test_rmse: c.test_rmse,
                active_fraction: active as f64 / c.bias_slots.max(1) as f64,
                iterations: c.train_rmse.len(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    to_json(&points)
}

/// Paired cross-validation of all four variants on planted data.
pub fn compare(json: &str) -> Result<String, String> {
    let req = parse(json)?;
    let reps = req.repetitions.clamp(1, 10);
    let split = split(&req.data)?;
    let base = req.model.hyperparameters(Variant::Dnlfa)?;
    let table = eval::compare_variants(
        &base,
        &split.data.dataset,
        &Variant::ALL,
        reps,
        req.data.seed,
        Timing::Sequential,
    )
    .map_err(|e| e.to_string())?;
    let rows: Vec<ComparisonRow> = table
        .rows
        .iter()
        .map(|r| ComparisonRow {
            variant: r.summary.variant.label().to_string(),
            rmse_mean: r.summary.rmse_mean,
            rmse_std: r.summary.rmse_std,
            iters_mean: r.summary.iters_mean,
        })
        .collect();
    to_json(&rows)
}
