//! Model state: nonnegative factors, masked bias banks and hyperparameters,
//! plus prediction, the regularized objective and the text model format.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{IdMap, SparseDataset};

pub const MODEL_MAGIC: &str = "dnlfa-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("index ({row}, {col}) out of range for a {rows} x {cols} model")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("dataset is {data_rows} x {data_cols} but model is {rows} x {cols}")]
    Incompatible {
        data_rows: usize,
        data_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("unsupported model format: {0}")]
    VersionMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corrupted model stream: {0}")]
    Corrupted(String),
}

/// Which bias scheme a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// No biases.
    Nlfa,
    /// One bias column per side, always active.
    Bnlfa,
    /// `d2` bias columns per side, always active.
    Ebnl,
    /// `d2` bias columns per side, deactivated once they fall below `e`.
    Dnlfa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Nlfa, Variant::Bnlfa, Variant::Ebnl, Variant::Dnlfa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nlfa => "nlfa",
            Variant::Bnlfa => "bnlfa",
            Variant::Ebnl => "ebnl",
            Variant::Dnlfa => "dnlfa",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Nlfa => "NLFA",
            Variant::Bnlfa => "BNLFA",
            Variant::Ebnl => "EBNL",
            Variant::Dnlfa => "DNLFA",
        }
    }

    /// Whether the mask phase runs during training.
    pub fn dynamic_masks(self) -> bool {
        self == Variant::Dnlfa
    }

    /// The bias dimension this variant uses when none is requested.
    pub fn default_d2(self) -> usize {
        match self {
            Variant::Nlfa => 0,
            Variant::Bnlfa => 1,
            Variant::Ebnl | Variant::Dnlfa => 5,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::InvalidHyperparameters(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub variant: Variant,
    /// Latent dimension.
    pub d1: usize,
    /// Bias dimension; 0 disables biases.
    pub d2: usize,
    /// L2 regularization coefficient, strictly positive.
    pub lambda: f64,
    /// Mask deactivation threshold.
    pub threshold_e: f64,
    pub max_iters: usize,
    /// Stop once consecutive monitored RMSEs differ by less than this.
    pub tol: f64,
    pub seed: u64,
    /// Initial entries are drawn uniformly from (0, init_scale].
    pub init_scale: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            variant: Variant::Dnlfa,
            d1: 20,
            d2: 5,
            lambda: 0.05,
            threshold_e: 0.01,
            max_iters: 1000,
            tol: 1e-5,
            seed: 0,
            init_scale: 0.05,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyperparameters(m));
        if self.d1 == 0 {
            return bad("d1 must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.threshold_e >= 0.0 && self.threshold_e.is_finite()) {
            return bad(format!("threshold e must be >= 0, got {}", self.threshold_e));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale must be positive, got {}", self.init_scale));
        }
        match (self.variant, self.d2) {
            (Variant::Nlfa, d2) if d2 != 0 => bad(format!("nlfa requires d2 = 0, got {d2}")),
            (Variant::Bnlfa, d2) if d2 != 1 => bad(format!("bnlfa requires d2 = 1, got {d2}")),
            (Variant::Ebnl | Variant::Dnlfa, 0) => {
                bad(format!("{} requires d2 >= 1", self.variant))
            }
            (Variant::Dnlfa, _) if self.threshold_e <= 0.0 => {
                bad("dnlfa requires threshold e > 0".into())
            }
            _ => Ok(()),
        }
    }

    /// Copy retargeted at `variant`: NLFA drops biases, BNLFA uses one bias
    /// column, the matrix variants keep this `d2` (or their default if 0).
    pub fn for_variant(&self, variant: Variant) -> Self {
        let d2 = match variant {
            Variant::Nlfa => 0,
            Variant::Bnlfa => 1,
            Variant::Ebnl | Variant::Dnlfa if self.d2 == 0 => variant.default_d2(),
            _ => self.d2,
        };
        Self {
            variant,
            d2,
            ..self.clone()
        }
    }
}

/// Nonnegative latent factors: `x` is |M|×d1, `y` is |N|×d1.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Nonnegative bias matrices `g` (|M|×d2), `h` (|N|×d2) and their 0/1
/// activity masks `i`, `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasBank {
    pub g: Array2<f64>,
    pub h: Array2<f64>,
    pub i: Array2<u8>,
    pub j: Array2<u8>,
}

impl BiasBank {
    pub fn active_counts(&self) -> (usize, usize) {
        let count = |m: &Array2<u8>| m.iter().filter(|&&v| v == 1).count();
        (count(&self.i), count(&self.j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hp: Hyperparameters,
    pub factors: FactorPair,
    pub biases: Option<BiasBank>,
    pub row_map: Arc<IdMap>,
    pub col_map: Arc<IdMap>,
}

fn draw(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    // 1 - U[0,1) lands in (0, 1]
    Array2::from_shape_simple_fn((rows, cols), || scale * (1.0 - rng.random::<f64>()))
}

#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (u, v) in a.iter().zip(b.iter()) {
        s += u * v;
    }
    s
}

impl Model {
    /// Random positive initialization; masks start fully active. X, Y, G, H
    /// are drawn in that order from one seeded stream, so variants sharing
    /// `seed` and `d1` start from identical factors.
    pub fn init(
        hp: &Hyperparameters,
        num_rows: usize,
        num_cols: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = draw(&mut rng, num_rows, hp.d1, hp.init_scale);
        let y = draw(&mut rng, num_cols, hp.d1, hp.init_scale);
        let biases = (hp.d2 > 0).then(|| BiasBank {
            g: draw(&mut rng, num_rows, hp.d2, hp.init_scale),
            h: draw(&mut rng, num_cols, hp.d2, hp.init_scale),
            i: Array2::ones((num_rows, hp.d2)),
            j: Array2::ones((num_cols, hp.d2)),
        });
        Ok(Self {
            hp: hp.clone(),
            factors: FactorPair { x, y },
            biases,
            row_map: Arc::new(IdMap::identity(num_rows)),
            col_map: Arc::new(IdMap::identity(num_cols)),
        })
    }

    /// [`Model::init`] sized to and carrying the id maps of `ds`.
    pub fn init_for(hp: &Hyperparameters, ds: &SparseDataset, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::init(hp, ds.num_rows(), ds.num_cols(), seed)?;
        model.row_map = ds.row_map().clone();
        model.col_map = ds.col_map().clone();
        Ok(model)
    }

    pub fn num_rows(&self) -> usize {
        self.factors.x.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.factors.y.nrows()
    }

    pub fn check_compatible(&self, ds: &SparseDataset) -> Result<(), ModelError> {
        if ds.num_rows() != self.num_rows() || ds.num_cols() != self.num_cols() {
            return Err(ModelError::Incompatible {
                data_rows: ds.num_rows(),
                data_cols: ds.num_cols(),
                rows: self.num_rows(),
                cols: self.num_cols(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, m: usize, n: usize) -> Result<f64, ModelError> {
        if m >= self.num_rows() || n >= self.num_cols() {
            return Err(ModelError::IndexOutOfRange {
                row: m,
                col: n,
                rows: self.num_rows(),
                cols: self.num_cols(),
            });
        }
        Ok(self.predict_unchecked(m, n))
    }

    /// r̂ = Σ x·y + Σ (i·g + j·h), each sum in ascending k.
    #[inline]
    pub fn predict_unchecked(&self, m: usize, n: usize) -> f64 {
        let f = &self.factors;
        let latent = dot(f.x.row(m), f.y.row(n));
        match &self.biases {
            None => latent,
            Some(b) => latent + bias_sum(b, m, n),
        }
    }

    /// Learning objective: over every observed entry, half of the squared
    /// residual plus λ times the squared norms of that entry's row and column
    /// parameters (masked biases included).
    pub fn objective(&self, ds: &SparseDataset) -> Result<f64, ModelError> {
        self.check_compatible(ds)?;
        let lambda = self.hp.lambda;
        let f = &self.factors;
        // per-row and per-column squared norms are reused across entries
        let row_sq: Vec<f64> = (0..self.num_rows())
            .map(|m| sq_norm(f.x.row(m)) + self.biases.as_ref().map_or(0.0, |b| masked_sq(&b.g, &b.i, m)))
            .collect();
        let col_sq: Vec<f64> = (0..self.num_cols())
            .map(|n| sq_norm(f.y.row(n)) + self.biases.as_ref().map_or(0.0, |b| masked_sq(&b.h, &b.j, n)))
            .collect();
        let mut total = 0.0;
        for t in ds.entries() {
            let (m, n) = (t.row as usize, t.col as usize);
            let r = t.value - self.predict_unchecked(m, n);
            total += 0.5 * (r * r + lambda * (row_sq[m] + col_sq[n]));
        }
        Ok(total)
    }

    /// Swaps the roles of rows and columns (X↔Y, G↔H, I↔J).
    pub fn transposed(&self) -> Self {
        Self {
            hp: self.hp.clone(),
            factors: FactorPair {
                x: self.factors.y.clone(),
                y: self.factors.x.clone(),
            },
            biases: self.biases.as_ref().map(|b| BiasBank {
                g: b.h.clone(),
                h: b.g.clone(),
                i: b.j.clone(),
                j: b.i.clone(),
            }),
            row_map: self.col_map.clone(),
            col_map: self.row_map.clone(),
        }
    }

    pub fn active_counts(&self) -> (usize, usize) {
        self.biases.as_ref().map_or((0, 0), BiasBank::active_counts)
    }
}

#[inline]
fn bias_sum(b: &BiasBank, m: usize, n: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..b.g.ncols() {
        s += f64::from(b.i[[m, k]]) * b.g[[m, k]] + f64::from(b.j[[n, k]]) * b.h[[n, k]];
    }
    s
}

fn sq_norm(v: ArrayView1<f64>) -> f64 {
    dot(v, v)
}

fn masked_sq(bias: &Array2<f64>, mask: &Array2<u8>, r: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..bias.ncols() {
        let v = f64::from(mask[[r, k]]) * bias[[r, k]];
        s += v * v;
    }
    s
}

// ---------------------------------------------------------------------------
// Text model format
// ---------------------------------------------------------------------------

impl Model {
    /// Writes the versioned text format. Floats use Rust's shortest
    /// round-trip rendering, so reading back is bit-exact.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let hp = &self.hp;
        writeln!(out, "{MODEL_MAGIC} v{MODEL_VERSION}")?;
        writeln!(out, "variant {}", hp.variant)?;
        writeln!(out, "rows {}", self.num_rows())?;
        writeln!(out, "cols {}", self.num_cols())?;
        writeln!(out, "d1 {}", hp.d1)?;
        writeln!(out, "d2 {}", hp.d2)?;
        writeln!(out, "lambda {:?}", hp.lambda)?;
        writeln!(out, "threshold_e {:?}", hp.threshold_e)?;
        writeln!(out, "max_iters {}", hp.max_iters)?;
        writeln!(out, "tol {:?}", hp.tol)?;
        writeln!(out, "seed {}", hp.seed)?;
        writeln!(out, "init_scale {:?}", hp.init_scale)?;
        write_block(&mut out, "X", &self.factors.x, |v| format!("{v:?}"))?;
        write_block(&mut out, "Y", &self.factors.y, |v| format!("{v:?}"))?;
        if let Some(b) = &self.biases {
            write_block(&mut out, "G", &b.g, |v| format!("{v:?}"))?;
            write_block(&mut out, "H", &b.h, |v| format!("{v:?}"))?;
            write_block(&mut out, "I", &b.i, |v| v.to_string())?;
            write_block(&mut out, "J", &b.j, |v| v.to_string())?;
        }
        write_ids(&mut out, "row_ids", &self.row_map)?;
        write_ids(&mut out, "col_ids", &self.col_map)?;
        writeln!(out, "end")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses the text format. Any truncation or malformed block fails the
    /// whole read.
    pub fn read<R: BufRead>(source: R) -> Result<Self, ModelError> {
        let mut p = Parser {
            lines: source.lines(),
            lineno: 0,
        };
        let magic = p.line()?;
        let expected = format!("{MODEL_MAGIC} v{MODEL_VERSION}");
        if magic.trim() != expected {
            return Err(ModelError::VersionMismatch(format!(
                "expected {expected:?}, found {:?}",
                magic.trim()
            )));
        }
        let variant: Variant = p.field("variant")?;
        let rows: usize = p.field("rows")?;
        let cols: usize = p.field("cols")?;
        let hp = Hyperparameters {
            variant,
            d1: p.field("d1")?,
            d2: p.field("d2")?,
            lambda: p.field("lambda")?,
            threshold_e: p.field("threshold_e")?,
            max_iters: p.field("max_iters")?,
            tol: p.field("tol")?,
            seed: p.field("seed")?,
            init_scale: p.field("init_scale")?,
        };
        hp.validate()
            .map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
        let x = p.block("X", rows, hp.d1)?;
        let y = p.block("Y", cols, hp.d1)?;
        let biases = if hp.d2 > 0 {
            let bank = BiasBank {
                g: p.block("G", rows, hp.d2)?,
                h: p.block("H", cols, hp.d2)?,
                i: p.block("I", rows, hp.d2)?,
                j: p.block("J", cols, hp.d2)?,
            };
            if bank.i.iter().chain(bank.j.iter()).any(|&v| v > 1) {
                return Err(ModelError::Corrupted("mask entry outside {0, 1}".into()));
            }
            Some(bank)
        } else {
            None
        };
        if x.iter().chain(y.iter()).any(|&v: &f64| v.is_nan() || v < 0.0) {
            return Err(ModelError::Corrupted("negative or NaN factor entry".into()));
        }
        let row_map = p.ids("row_ids", rows)?;
        let col_map = p.ids("col_ids", cols)?;
        if p.line()?.trim() != "end" {
            return Err(ModelError::Corrupted("missing end marker".into()));
        }
        Ok(Self {
            hp,
            factors: FactorPair { x, y },
            biases,
            row_map: Arc::new(row_map),
            col_map: Arc::new(col_map),
        })
    }
}

fn write_block<W: Write, T>(
    out: &mut W,
    name: &str,
    a: &Array2<T>,
    fmt: impl Fn(&T) -> String,
) -> std::io::Result<()> {
    writeln!(out, "matrix {name} {} {}", a.nrows(), a.ncols())?;
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn write_ids<W: Write>(out: &mut W, name: &str, map: &IdMap) -> std::io::Result<()> {
    writeln!(out, "{name} {}", map.len())?;
    let line: Vec<String> = map.externals().iter().map(i64::to_string).collect();
    writeln!(out, "{}", line.join(" "))
}

struct Parser<R: BufRead> {
    lines: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> Parser<R> {
    fn corrupt(&self, msg: impl fmt::Display) -> ModelError {
        ModelError::Corrupted(format!("line {}: {msg}", self.lineno))
    }

    fn line(&mut self) -> Result<String, ModelError> {
        self.lineno += 1;
        match self.lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(self.corrupt(e)),
            None => Err(self.corrupt("unexpected end of stream")),
        }
    }

    fn field<T: FromStr>(&mut self, key: &str) -> Result<T, ModelError> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => v
                .trim()
                .parse()
                .map_err(|_| self.corrupt(format!("bad value for {key}: {v:?}"))),
            _ => Err(self.corrupt(format!("expected field {key}, found {line:?}"))),
        }
    }

    fn block<T: FromStr + Clone + Default>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<Array2<T>, ModelError> {
        let header = self.line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        match parts.as_slice() {
            ["matrix", n, r, c] if *n == name => {
                let (r, c): (usize, usize) = (
                    r.parse().map_err(|_| self.corrupt("bad block rows"))?,
                    c.parse().map_err(|_| self.corrupt("bad block cols"))?,
                );
                if (r, c) != (rows, cols) {
                    return Err(ModelError::DimensionMismatch(format!(
                        "matrix {name} is {r} x {c}, expected {rows} x {cols}"
                    )));
                }
            }
            _ => return Err(self.corrupt(format!("expected matrix {name}, found {header:?}"))),
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.line()?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<T>()
                        .map_err(|_| self.corrupt(format!("bad entry {tok:?} in {name}")))?,
                );
            }
            if data.len() - before != cols {
                return Err(self.corrupt(format!(
                    "row of {name} has {} entries, expected {cols}",
                    data.len() - before
                )));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }

    fn ids(&mut self, name: &str, len: usize) -> Result<IdMap, ModelError> {
        let header = self.line()?;
        match header.split_once(' ') {
            Some((k, v)) if k == name => {
                let declared: usize = v.trim().parse().map_err(|_| self.corrupt("bad id count"))?;
                if declared != len {
                    return Err(ModelError::DimensionMismatch(format!(
                        "{name} lists {declared} ids, expected {len}"
                    )));
                }
            }
            _ => return Err(self.corrupt(format!("expected {name}, found {header:?}"))),
        }
        let line = self.line()?;
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| self.corrupt(format!("bad id in {name}")))?;
        if ids.len() != len {
            return Err(self.corrupt(format!("{name} has {} ids, expected {len}", ids.len())));
        }
        IdMap::from_external(ids).ok_or_else(|| self.corrupt(format!("duplicate id in {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Triple;
    use ndarray::array;

    fn hp(variant: Variant, d1: usize, d2: usize) -> Hyperparameters {
        Hyperparameters {
            variant,
            d1,
            d2,
            ..Hyperparameters::default()
        }
    }

    fn zero_model(rows: usize, cols: usize, d1: usize, d2: usize) -> Model {
        let variant = if d2 == 0 { Variant::Nlfa } else { Variant::Ebnl };
        let mut m = Model::init(&hp(variant, d1, d2), rows, cols, 0).unwrap();
        m.factors.x.fill(0.0);
        m.factors.y.fill(0.0);
        if let Some(b) = &mut m.biases {
            b.g.fill(0.0);
            b.h.fill(0.0);
        }
        m
    }

    #[test]
    fn variant_constraints() {
        assert!(hp(Variant::Nlfa, 3, 0).validate().is_ok());
        assert!(hp(Variant::Nlfa, 3, 3).validate().is_err());
        assert!(hp(Variant::Bnlfa, 3, 1).validate().is_ok());
        assert!(hp(Variant::Bnlfa, 3, 2).validate().is_err());
        assert!(hp(Variant::Ebnl, 3, 0).validate().is_err());
        assert!(hp(Variant::Dnlfa, 3, 0).validate().is_err());
        assert!(hp(Variant::Dnlfa, 0, 2).validate().is_err());
        let mut h = hp(Variant::Dnlfa, 3, 2);
        h.threshold_e = 0.0;
        assert!(h.validate().is_err());
        h.threshold_e = 0.01;
        h.lambda = 0.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn for_variant_adjusts_d2() {
        let base = Hyperparameters::default();
        assert_eq!(base.for_variant(Variant::Nlfa).d2, 0);
        assert_eq!(base.for_variant(Variant::Bnlfa).d2, 1);
        assert_eq!(base.for_variant(Variant::Ebnl).d2, 5);
        for v in Variant::ALL {
            assert!(base.for_variant(v).validate().is_ok());
        }
    }

    #[test]
    fn init_is_deterministic_positive_and_active() {
        let h = hp(Variant::Dnlfa, 4, 3);
        let a = Model::init(&h, 7, 5, 42).unwrap();
        let b = Model::init(&h, 7, 5, 42).unwrap();
        assert_eq!(a, b);
        let bank = a.biases.as_ref().unwrap();
        assert!(bank.i.iter().chain(bank.j.iter()).all(|&v| v == 1));
        let min = a
            .factors
            .x
            .iter()
            .chain(a.factors.y.iter())
            .chain(bank.g.iter())
            .chain(bank.h.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
        assert!(a.factors.x.iter().all(|&v| v <= h.init_scale));
        assert_ne!(a, Model::init(&h, 7, 5, 43).unwrap());
    }

    #[test]
    fn init_shares_factors_across_variants() {
        let a = Model::init(&hp(Variant::Nlfa, 4, 0), 6, 5, 9).unwrap();
        let b = Model::init(&hp(Variant::Dnlfa, 4, 2), 6, 5, 9).unwrap();
        assert_eq!(a.factors, b.factors);
    }

    #[test]
    fn predict_examples() {
        let m = zero_model(2, 2, 2, 1);
        assert_eq!(m.predict(1, 1).unwrap(), 0.0);

        let mut m = zero_model(1, 1, 2, 0);
        m.factors.x = array![[1.0, 2.0]];
        m.factors.y = array![[3.0, 4.0]];
        assert_eq!(m.predict(0, 0).unwrap(), 11.0);

        let mut m = zero_model(1, 1, 1, 1);
        let b = m.biases.as_mut().unwrap();
        b.g[[0, 0]] = 0.5;
        b.h[[0, 0]] = 0.25;
        assert_eq!(m.predict(0, 0).unwrap(), 0.75);
        m.biases.as_mut().unwrap().i[[0, 0]] = 0;
        assert_eq!(m.predict(0, 0).unwrap(), 0.25);

        assert!(matches!(
            m.predict(1, 0),
            Err(ModelError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let m = zero_model(1, 1, 2, 1);
        let ds = SparseDataset::from_triples(1, 1, vec![Triple { row: 0, col: 0, value: 2.0 }]);
        assert_eq!(m.objective(&ds).unwrap(), 2.0);
        let ds = SparseDataset::from_triples(1, 1, vec![Triple { row: 0, col: 0, value: 0.0 }]);
        assert_eq!(m.objective(&ds).unwrap(), 0.0);
        let wrong = SparseDataset::from_triples(2, 1, vec![]);
        assert!(matches!(m.objective(&wrong), Err(ModelError::Incompatible { .. })));
    }

    #[test]
    fn masked_bias_equivalence() {
        let h = hp(Variant::Dnlfa, 2, 2);
        let a = Model::init(&h, 3, 4, 1).unwrap();
        let mut masked = a.clone();
        let mut zeroed = a.clone();
        masked.biases.as_mut().unwrap().i[[1, 0]] = 0;
        zeroed.biases.as_mut().unwrap().g[[1, 0]] = 0.0;
        for m in 0..3 {
            for n in 0..4 {
                assert_eq!(masked.predict(m, n), zeroed.predict(m, n));
            }
        }
    }

    #[test]
    fn round_trip_and_errors() {
        let h = hp(Variant::Dnlfa, 3, 2);
        let mut m = Model::init(&h, 4, 5, 7).unwrap();
        m.biases.as_mut().unwrap().i[[2, 1]] = 0;
        m.biases.as_mut().unwrap().g[[2, 1]] = 0.0;
        m.row_map = Arc::new(IdMap::from_external(vec![10, -3, 99, 4]).unwrap());
        let bytes = m.to_bytes();
        assert_eq!(Model::read(&bytes[..]).unwrap(), m);

        // truncated anywhere → corruption
        let text = String::from_utf8(bytes.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for cut in [13, 15, lines.len() - 3, lines.len() - 1] {
            let partial = lines[..cut].join("\n");
            assert!(
                matches!(Model::read(partial.as_bytes()), Err(ModelError::Corrupted(_))),
                "cut at {cut}"
            );
        }

        let wrong_version = text.replacen("dnlfa-model v1", "dnlfa-model v2", 1);
        assert!(matches!(
            Model::read(wrong_version.as_bytes()),
            Err(ModelError::VersionMismatch(_))
        ));
        let wrong_dims = text.replacen("matrix Y 5 3", "matrix Y 5 4", 1);
        assert!(matches!(
            Model::read(wrong_dims.as_bytes()),
            Err(ModelError::DimensionMismatch(_))
        ));
        let bad_entry = text.replacen("matrix X 4 3\n", "matrix X 4 3\nfoo ", 1);
        assert!(matches!(
            Model::read(bad_entry.as_bytes()),
            Err(ModelError::Corrupted(_))
        ));
    }

    #[test]
    fn nlfa_stream_has_no_bias_bank() {
        let m = Model::init(&hp(Variant::Nlfa, 2, 0), 3, 3, 1).unwrap();
        let back = Model::read(&m.to_bytes()[..]).unwrap();
        assert!(back.biases.is_none());
        assert_eq!(back, m);
    }
}
