//! Nonnegative multiplicative training.
//!
//! One iteration runs the phases X → Y → G → H → masks. Every phase reads a
//! snapshot of r̂ taken from the state left by the previous phase, so rows
//! within a phase are independent and may be updated in parallel. Each row's
//! sums run in the dataset's ascending index order, which makes results
//! identical for any worker count.

use std::fmt;
use std::io::Write;

use ndarray::{Array2, ArrayViewMut1, Zip};
use thiserror::Error;
use web_time::Instant;

use crate::data::{Slot, SparseDataset};
use crate::eval::rmse_from_predictions;
use crate::model::{Hyperparameters, Model, ModelError};

/// Added to every multiplicative denominator.
pub const DEFAULT_GUARD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// r̂ for every entry of `ds`, in entry order.
pub fn predictions(model: &Model, ds: &SparseDataset) -> Vec<f64> {
    let entries = ds.entries();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        entries
            .par_iter()
            .map(|t| model.predict_unchecked(t.row as usize, t.col as usize))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    entries
        .iter()
        .map(|t| model.predict_unchecked(t.row as usize, t.col as usize))
        .collect()
}

fn for_each_row<F>(a: &mut Array2<f64>, f: F)
where
    F: Fn(usize, ArrayViewMut1<f64>) + Sync + Send,
{
    let z = Zip::indexed(a.rows_mut());
    #[cfg(feature = "parallel")]
    z.par_for_each(f);
    #[cfg(not(feature = "parallel"))]
    z.for_each(f);
}

/// Shared body of the X and Y phases: for every line `a` with observations,
/// `t[a,k] ← t[a,k] · Σ r·o[b,k] / (Σ (r̂·o[b,k] + λ·t[a,k]) + guard)`.
fn factor_phase<'d>(
    target: &mut Array2<f64>,
    other: &Array2<f64>,
    ds: &'d SparseDataset,
    line: impl Fn(usize) -> &'d [Slot] + Sync + Send,
    rhat: &[f64],
    lambda: f64,
    guard: f64,
) {
    let d = target.ncols();
    for_each_row(target, |a, mut t| {
        let slots = line(a);
        if slots.is_empty() {
            return;
        }
        let mut num = vec![0.0; d];
        let mut den = vec![0.0; d];
        for s in slots {
            let r = ds.value(*s);
            let p = rhat[s.entry as usize];
            let o = other.row(s.other as usize);
            for k in 0..d {
                num[k] += r * o[k];
                den[k] += p * o[k] + lambda * t[k];
            }
        }
        for k in 0..d {
            t[k] *= num[k] / (den[k] + guard);
        }
    });
}

/// Shared body of the G and H phases. Inactive entries are set to zero;
/// active ones follow `b ← b · Σ r·i / (Σ (r̂·i + λ·b) + guard)`.
fn bias_phase<'d>(
    bias: &mut Array2<f64>,
    mask: &Array2<u8>,
    ds: &'d SparseDataset,
    line: impl Fn(usize) -> &'d [Slot] + Sync + Send,
    rhat: &[f64],
    lambda: f64,
    guard: f64,
) {
    let d = bias.ncols();
    for_each_row(bias, |a, mut b| {
        let slots = line(a);
        if slots.is_empty() {
            return;
        }
        for k in 0..d {
            let on = mask[[a, k]];
            if on == 0 {
                b[k] = 0.0;
                continue;
            }
            let on = f64::from(on);
            let mut num = 0.0;
            let mut den = 0.0;
            for s in slots {
                num += ds.value(*s) * on;
                den += rhat[s.entry as usize] * on + lambda * b[k];
            }
            b[k] *= num / (den + guard);
        }
    });
}

/// Multiplicative update of X from the current state.
pub fn update_x_phase(model: &mut Model, ds: &SparseDataset, guard: f64) {
    let rhat = predictions(model, ds);
    let lambda = model.hp.lambda;
    let f = &mut model.factors;
    factor_phase(&mut f.x, &f.y, ds, |m| ds.row(m), &rhat, lambda, guard);
}

/// Multiplicative update of Y from the current state.
pub fn update_y_phase(model: &mut Model, ds: &SparseDataset, guard: f64) {
    let rhat = predictions(model, ds);
    let lambda = model.hp.lambda;
    let f = &mut model.factors;
    factor_phase(&mut f.y, &f.x, ds, |n| ds.col(n), &rhat, lambda, guard);
}

/// Multiplicative update of the row biases G. No-op without a bias bank.
pub fn update_g_phase(model: &mut Model, ds: &SparseDataset, guard: f64) {
    if model.biases.is_none() {
        return;
    }
    let rhat = predictions(model, ds);
    let lambda = model.hp.lambda;
    let b = model.biases.as_mut().expect("checked above");
    bias_phase(&mut b.g, &b.i, ds, |m| ds.row(m), &rhat, lambda, guard);
}

/// Multiplicative update of the column biases H. No-op without a bias bank.
pub fn update_h_phase(model: &mut Model, ds: &SparseDataset, guard: f64) {
    if model.biases.is_none() {
        return;
    }
    let rhat = predictions(model, ds);
    let lambda = model.hp.lambda;
    let b = model.biases.as_mut().expect("checked above");
    bias_phase(&mut b.h, &b.j, ds, |n| ds.col(n), &rhat, lambda, guard);
}

/// Deactivates every bias strictly below `threshold` and zeroes it.
/// Masks are never switched back on.
pub fn update_masks(model: &mut Model, threshold: f64) {
    let Some(b) = model.biases.as_mut() else {
        return;
    };
    for (bias, mask) in [(&mut b.g, &mut b.i), (&mut b.h, &mut b.j)] {
        Zip::from(bias).and(mask).for_each(|v, on| {
            if *v < threshold {
                *on = 0;
                *v = 0.0;
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIters,
    TolReached,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::MaxIters => "max-iters",
            Termination::TolReached => "tol-reached",
        })
    }
}

/// Which RMSE drives the tolerance check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Validation,
    Training,
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Monitor::Validation => "validation",
            Monitor::Training => "training",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub train_rmse: f64,
    pub valid_rmse: Option<f64>,
    pub active_i: usize,
    pub active_j: usize,
    /// Cumulative since training started.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub monitor: Monitor,
    /// RMSE of the monitored set before the first iteration.
    pub initial_rmse: f64,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn elapsed_s(&self) -> f64 {
        self.last().map_or(0.0, |r| r.elapsed_s)
    }

    pub const CSV_HEADER: &'static str =
        "iter,objective,train_rmse,valid_rmse,active_i,active_j,elapsed_s";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let valid = r.valid_rmse.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:?},{:?},{},{},{},{:.6}",
                r.iter, r.objective, r.train_rmse, valid, r.active_i, r.active_j, r.elapsed_s
            )?;
        }
        Ok(())
    }
}

/// Drives training one iteration at a time.
pub struct Trainer<'a> {
    model: Model,
    train: &'a SparseDataset,
    valid: Option<&'a SparseDataset>,
    guard: f64,
    previous: f64,
    started: Instant,
    report: TrainReport,
    done: bool,
}

impl<'a> Trainer<'a> {
    /// Starts from a fresh random model seeded with `seed`.
    pub fn new(
        hp: &Hyperparameters,
        train: &'a SparseDataset,
        valid: Option<&'a SparseDataset>,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let model = Model::init_for(hp, train, seed)?;
        Self::from_model(model, train, valid)
    }

    /// Continues from an existing model.
    pub fn from_model(
        model: Model,
        train: &'a SparseDataset,
        valid: Option<&'a SparseDataset>,
    ) -> Result<Self, TrainError> {
        model.hp.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        model.check_compatible(train)?;
        let valid = valid.filter(|v| !v.is_empty());
        if let Some(v) = valid {
            model.check_compatible(v)?;
        }
        let monitor = if valid.is_some() {
            Monitor::Validation
        } else {
            Monitor::Training
        };
        let monitored = valid.unwrap_or(train);
        let initial = rmse_from_predictions(monitored, &predictions(&model, monitored));
        Ok(Self {
            model,
            train,
            valid,
            guard: DEFAULT_GUARD,
            previous: initial,
            started: Instant::now(),
            report: TrainReport {
                records: Vec::new(),
                termination: Termination::MaxIters,
                monitor,
                initial_rmse: initial,
            },
            done: false,
        })
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// True once a termination rule has fired.
    pub fn is_done(&self) -> bool {
        self.done || self.report.iterations() >= self.model.hp.max_iters
    }

    /// Runs the parameter phases of one iteration without bookkeeping.
    fn phases(&mut self) {
        let (ds, guard) = (self.train, self.guard);
        let model = &mut self.model;
        update_x_phase(model, ds, guard);
        update_y_phase(model, ds, guard);
        if model.biases.is_some() {
            update_g_phase(model, ds, guard);
            update_h_phase(model, ds, guard);
            if model.hp.variant.dynamic_masks() {
                let e = model.hp.threshold_e;
                update_masks(model, e);
            }
        }
    }

    /// Runs one iteration, records it and evaluates the termination rules.
    pub fn step(&mut self) -> &IterationRecord {
        self.phases();
        let train_pred = predictions(&self.model, self.train);
        let train_rmse = rmse_from_predictions(self.train, &train_pred);
        let valid_rmse = self
            .valid
            .map(|v| rmse_from_predictions(v, &predictions(&self.model, v)));
        let objective = self
            .model
            .objective(self.train)
            .expect("compatibility checked at construction");
        let (active_i, active_j) = self.model.active_counts();
        let iter = self.report.iterations() + 1;
        self.report.records.push(IterationRecord {
            iter,
            objective,
            train_rmse,
            valid_rmse,
            active_i,
            active_j,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        });

        let current = valid_rmse.unwrap_or(train_rmse);
        if (current - self.previous).abs() < self.model.hp.tol {
            self.report.termination = Termination::TolReached;
            self.done = true;
        } else if iter >= self.model.hp.max_iters {
            self.report.termination = Termination::MaxIters;
            self.done = true;
        }
        self.previous = current;
        self.report.records.last().expect("just pushed")
    }

    pub fn run(mut self) -> (Model, TrainReport) {
        while !self.is_done() {
            self.step();
        }
        (self.model, self.report)
    }

    pub fn into_parts(self) -> (Model, TrainReport) {
        (self.model, self.report)
    }
}

/// Trains a fresh model on `train`, monitoring `valid` when it is non-empty.
pub fn train(
    hp: &Hyperparameters,
    train: &SparseDataset,
    valid: Option<&SparseDataset>,
    seed: u64,
) -> Result<(Model, TrainReport), TrainError> {
    Ok(Trainer::new(hp, train, valid, seed)?.run())
}
