//! Nonnegative latent factor analysis for sparse, incomplete matrices.
//!
//! Models approximate each observed rating as a nonnegative low-rank product
//! plus optional row and column bias terms. Bias terms live in small matrices
//! gated by 0/1 masks; in the dynamic variant a mask entry switches off for
//! good once its bias drops below a threshold. All variants train with
//! multiplicative updates that keep every parameter nonnegative.
//!
//! * [`data`] loads triple files and plans cross-validation folds.
//! * [`model`] holds parameters, predictions, the objective and the model file format.
//! * [`trainer`] runs the update phases and termination rules.
//! * [`eval`] scores models and runs the tenfold protocol.
//! * [`oracle`] is a dense reference used by the test suites.
//! * [`synthetic`] plants known factors and biases for recovery experiments.
//!
//! ```no_run
//! use dnlfa::{load_triples, rmse, train, Hyperparameters, Variant};
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let ds = load_triples(std::io::BufReader::new(std::fs::File::open("ratings.txt")?))?;
//! let hp = Hyperparameters { variant: Variant::Dnlfa, d1: 10, d2: 3, ..Default::default() };
//! let (model, report) = train(&hp, &ds, None, 42)?;
//! println!("{} after {} iterations, rmse {:.4}", report.termination, report.iterations(), rmse(&model, &ds)?);
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod synthetic;
pub mod trainer;

pub use data::{load_triples, FoldPlan, Role, SparseDataset};
pub use eval::{compare_variants, rmse, run_cv, Comparison, CvOutcome, EvalResult, Summary, Timing};
pub use model::{Hyperparameters, Model, Variant};
pub use trainer::{train, Termination, TrainReport, Trainer};
