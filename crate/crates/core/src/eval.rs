//! RMSE scoring and the tenfold cross-validation protocol.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::data::{DataError, FoldPlan, Role, SparseDataset};
use crate::model::{Hyperparameters, Model, ModelError, Variant};
use crate::trainer::{self, Termination, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot score an empty set")]
    EmptyScoredSet,
    #[error("repetitions must be in 1..=10, got {0}")]
    Repetitions(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// RMSE of `predictions` (aligned with `ds` entries) against the ratings.
/// Returns NaN for an empty set; callers that care check first.
pub fn rmse_from_predictions(ds: &SparseDataset, predictions: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (t, p) in ds.entries().iter().zip(predictions) {
        let r = t.value - p;
        sum += r * r;
    }
    (sum / ds.len() as f64).sqrt()
}

/// Model-free scoring: RMSE of `predict(m, n)` over the entries of `ds`.
pub fn rmse_with(
    ds: &SparseDataset,
    predict: impl Fn(usize, usize) -> f64,
) -> Result<f64, EvalError> {
    if ds.is_empty() {
        return Err(EvalError::EmptyScoredSet);
    }
    let preds: Vec<f64> = ds
        .entries()
        .iter()
        .map(|t| predict(t.row as usize, t.col as usize))
        .collect();
    Ok(rmse_from_predictions(ds, &preds))
}

pub fn rmse(model: &Model, ds: &SparseDataset) -> Result<f64, EvalError> {
    model.check_compatible(ds)?;
    rmse_with(ds, |m, n| model.predict_unchecked(m, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub variant: Variant,
    pub repetition: usize,
    /// Test-set RMSE.
    pub rmse: f64,
    pub entry_count: usize,
    /// Training wall time only.
    pub wall_time_s: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub plan_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub variant: Variant,
    pub repetitions: usize,
    pub rmse_mean: f64,
    /// Sample standard deviation; absent for a single repetition.
    pub rmse_std: Option<f64>,
    pub time_mean_s: f64,
    pub time_std_s: Option<f64>,
    pub iters_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| {
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (mean, std)
}

impl Summary {
    pub fn of(variant: Variant, results: &[EvalResult]) -> Self {
        let rmses: Vec<f64> = results.iter().map(|r| r.rmse).collect();
        let times: Vec<f64> = results.iter().map(|r| r.wall_time_s).collect();
        let (rmse_mean, rmse_std) = mean_std(&rmses);
        let (time_mean_s, time_std_s) = mean_std(&times);
        let iters_mean =
            results.iter().map(|r| r.iterations as f64).sum::<f64>() / results.len() as f64;
        Self {
            variant,
            repetitions: results.len(),
            rmse_mean,
            rmse_std,
            time_mean_s,
            time_std_s,
            iters_mean,
        }
    }
}

/// How repetitions are scheduled. Concurrent runs perturb each other's wall
/// times; use sequential mode when timings matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Sequential,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub results: Vec<EvalResult>,
    pub summary: Summary,
}

fn run_repetition(
    hp: &Hyperparameters,
    ds: &SparseDataset,
    base: &FoldPlan,
    repetition: usize,
    seed: u64,
) -> Result<EvalResult, EvalError> {
    let plan = base.rotate(repetition)?;
    let train = ds.subset(&plan, Role::Train)?;
    let valid = ds.subset(&plan, Role::Validation)?;
    let test = ds.subset(&plan, Role::Test)?;
    let init_seed = seed.wrapping_add(repetition as u64);
    let (model, report) = trainer::train(hp, &train, Some(&valid), init_seed)?;
    Ok(EvalResult {
        variant: hp.variant,
        repetition,
        rmse: rmse(&model, &test)?,
        entry_count: test.len(),
        wall_time_s: report.elapsed_s(),
        iterations: report.iterations(),
        termination: report.termination,
        plan_fingerprint: plan.fingerprint(),
    })
}

/// Tenfold cross-validation: repetition `r` uses fold rotation `r` (7 train,
/// 1 validation, 2 test folds) and initialization seed `seed + r`. The fold
/// assignment itself is drawn once from `seed`.
pub fn run_cv(
    hp: &Hyperparameters,
    ds: &SparseDataset,
    repetitions: usize,
    seed: u64,
    timing: Timing,
) -> Result<CvOutcome, EvalError> {
    if !(1..=crate::data::FOLD_COUNT).contains(&repetitions) {
        return Err(EvalError::Repetitions(repetitions));
    }
    hp.validate()?;
    let plan = FoldPlan::new(ds, seed)?;
    let run = |r: usize| run_repetition(hp, ds, &plan, r, seed);
    let results: Result<Vec<_>, _> = match timing {
        #[cfg(feature = "parallel")]
        Timing::Concurrent => {
            use rayon::prelude::*;
            (0..repetitions).into_par_iter().map(run).collect()
        }
        _ => (0..repetitions).map(run).collect(),
    };
    let results = results?;
    let summary = Summary::of(hp.variant, &results);
    Ok(CvOutcome { results, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CvOutcome>,
}

/// Runs [`run_cv`] for each variant with the same fold plan and seeds, so
/// every variant sees identical splits and repetition-wise pairing holds.
pub fn compare_variants(
    base: &Hyperparameters,
    ds: &SparseDataset,
    variants: &[Variant],
    repetitions: usize,
    seed: u64,
    timing: Timing,
) -> Result<Comparison, EvalError> {
    let rows = variants
        .iter()
        .map(|&v| run_cv(&base.for_variant(v), ds, repetitions, seed, timing))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison { rows })
}

fn sci(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |s| format!("{s:.1E}"))
}

impl Comparison {
    pub const CSV_HEADER: &'static str =
        "variant,repetitions,rmse_mean,rmse_std,iters_mean,time_mean_s,time_std_s";
    /// Columns from this index on carry wall-clock timings.
    pub const CSV_TIMING_FROM: usize = 5;

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            let s = &row.summary;
            let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{:?},{},{:?},{:.6},{}",
                s.variant,
                s.repetitions,
                s.rmse_mean,
                opt(s.rmse_std),
                s.iters_mean,
                s.time_mean_s,
                s.time_std_s.map(|x| format!("{x:.6}")).unwrap_or_default(),
            )?;
        }
        Ok(())
    }

    /// Aligned Markdown table; the last column holds timings.
    pub fn to_markdown(&self) -> String {
        let header = ["Model", "RMSE", "Iterations", "Time (s)"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|row| {
                let s = &row.summary;
                [
                    s.variant.label().to_string(),
                    format!("{:.4}±{}", s.rmse_mean, sci(s.rmse_std)),
                    format!("{:.1}", s.iters_mean),
                    match s.time_std_s {
                        Some(sd) => format!("{:.3}±{:.3}", s.time_mean_s, sd),
                        None => format!("{:.3}", s.time_mean_s),
                    },
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            out.push('|');
            for (c, w) in cells.iter().zip(widths) {
                let pad = w - c.chars().count();
                let _ = write!(out, " {c}{} |", " ".repeat(pad));
            }
            out.push('\n');
        };
        line(&mut out, &header.map(String::from));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule);
        for cells in &body {
            line(&mut out, cells);
        }
        out
    }

    /// One line per repetition, for inspection.
    pub fn write_runs_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "variant,repetition,test_rmse,test_entries,iterations,termination,plan,wall_time_s"
        )?;
        for r in self.rows.iter().flat_map(|row| &row.results) {
            writeln!(
                out,
                "{},{},{:?},{},{},{},{:016x},{:.6}",
                r.variant,
                r.repetition,
                r.rmse,
                r.entry_count,
                r.iterations,
                r.termination,
                r.plan_fingerprint,
                r.wall_time_s
            )?;
        }
        Ok(())
    }
}
