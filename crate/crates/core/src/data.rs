//! Sparse nonnegative incomplete matrices: ingestion, dual row/column
//! indexing, fold planning and summary statistics.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of folds in the cross-validation protocol.
pub const FOLD_COUNT: usize = 10;
const TRAIN_FOLDS: usize = 7;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed triple: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: usize, value: f64 },
    #[error("line {line}: duplicate entry ({row}, {col}), first seen on line {first}")]
    Duplicate {
        line: usize,
        first: usize,
        row: i64,
        col: i64,
    },
    #[error("dataset has a zero dimension ({rows} x {cols})")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("need at least {needed} entries for fold planning, got {got}")]
    TooFewEntries { needed: usize, got: usize },
    #[error("repetition {0} out of range 0..{FOLD_COUNT}")]
    RepetitionOutOfRange(usize),
    #[error("fold plan covers {plan} entries but dataset has {dataset}")]
    PlanMismatch { plan: usize, dataset: usize },
    #[error("invalid fold plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One parsed input line, still keyed by external ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: i64,
    pub col: i64,
    pub value: f64,
}

/// A parsed triple file: entries in file order with their source line numbers.
#[derive(Debug, Clone, Default)]
pub struct TripleSet {
    pub entries: Vec<Entry>,
    pub lines: Vec<usize>,
}

/// Bijection between opaque external ids and dense 0-based indices.
/// Dense indices are assigned in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<i64>,
    dense: HashMap<i64, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Map whose external id equals the dense index.
    pub fn identity(len: usize) -> Self {
        Self::from_external((0..len as i64).collect()).expect("identity ids are unique")
    }

    /// Rebuilds a map from its dense-ordered external ids; `None` on duplicates.
    pub fn from_external(external: Vec<i64>) -> Option<Self> {
        let mut dense = HashMap::with_capacity(external.len());
        for (i, &id) in external.iter().enumerate() {
            if dense.insert(id, i as u32).is_some() {
                return None;
            }
        }
        Some(Self { external, dense })
    }

    pub fn intern(&mut self, id: i64) -> u32 {
        let next = self.external.len() as u32;
        *self.dense.entry(id).or_insert_with(|| {
            self.external.push(id);
            next
        })
    }

    pub fn dense(&self, id: i64) -> Option<usize> {
        self.dense.get(&id).map(|&d| d as usize)
    }

    pub fn external(&self, idx: usize) -> i64 {
        self.external[idx]
    }

    pub fn externals(&self) -> &[i64] {
        &self.external
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

/// An observed entry in dense coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// One slot of a row or column view: the opposite coordinate and the
/// position of the entry in `SparseDataset::entries`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub other: u32,
    pub entry: u32,
}

/// Compressed index view (CSR when keyed by row, CSC when keyed by column).
#[derive(Debug, Clone, PartialEq)]
struct IndexView {
    offsets: Vec<usize>,
    slots: Vec<Slot>,
}

impl IndexView {
    fn build(len: usize, entries: &[Triple], key: impl Fn(&Triple) -> (u32, u32)) -> Self {
        let mut offsets = vec![0usize; len + 1];
        for t in entries {
            offsets[key(t).0 as usize + 1] += 1;
        }
        for i in 0..len {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut slots = vec![Slot { other: 0, entry: 0 }; entries.len()];
        for (idx, t) in entries.iter().enumerate() {
            let (k, other) = key(t);
            let pos = &mut cursor[k as usize];
            slots[*pos] = Slot {
                other,
                entry: idx as u32,
            };
            *pos += 1;
        }
        for i in 0..len {
            slots[offsets[i]..offsets[i + 1]].sort_unstable_by_key(|s| s.other);
        }
        Self { offsets, slots }
    }

    fn get(&self, i: usize) -> &[Slot] {
        &self.slots[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// The known entries of a nonnegative incomplete matrix with row-major and
/// column-major views. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    num_rows: usize,
    num_cols: usize,
    entries: Vec<Triple>,
    by_row: IndexView,
    by_col: IndexView,
    row_map: Arc<IdMap>,
    col_map: Arc<IdMap>,
}

impl SparseDataset {
    /// Builds a dataset over existing id spaces. Entries must be in range,
    /// nonnegative and unique; callers coming from files go through
    /// [`load_triples`] which reports violations with line numbers.
    pub fn from_dense(
        row_map: Arc<IdMap>,
        col_map: Arc<IdMap>,
        entries: Vec<Triple>,
    ) -> Self {
        let num_rows = row_map.len();
        let num_cols = col_map.len();
        for t in &entries {
            assert!((t.row as usize) < num_rows && (t.col as usize) < num_cols);
            assert!(t.value >= 0.0 && t.value.is_finite());
        }
        let by_row = IndexView::build(num_rows, &entries, |t| (t.row, t.col));
        let by_col = IndexView::build(num_cols, &entries, |t| (t.col, t.row));
        for r in 0..num_rows {
            let s = by_row.get(r);
            assert!(
                s.windows(2).all(|w| w[0].other < w[1].other),
                "duplicate entry in row {r}"
            );
        }
        Self {
            num_rows,
            num_cols,
            entries,
            by_row,
            by_col,
            row_map,
            col_map,
        }
    }

    /// Convenience constructor with identity id maps.
    pub fn from_triples(num_rows: usize, num_cols: usize, entries: Vec<Triple>) -> Self {
        Self::from_dense(
            Arc::new(IdMap::identity(num_rows)),
            Arc::new(IdMap::identity(num_cols)),
            entries,
        )
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Triple] {
        &self.entries
    }

    /// Λ(m): observed columns of row `m`, ascending.
    pub fn row(&self, m: usize) -> &[Slot] {
        self.by_row.get(m)
    }

    /// Λ(n): observed rows of column `n`, ascending.
    pub fn col(&self, n: usize) -> &[Slot] {
        self.by_col.get(n)
    }

    pub fn value(&self, slot: Slot) -> f64 {
        self.entries[slot.entry as usize].value
    }

    pub fn row_map(&self) -> &Arc<IdMap> {
        &self.row_map
    }

    pub fn col_map(&self) -> &Arc<IdMap> {
        &self.col_map
    }

    /// The same entries with rows and columns swapped.
    pub fn transpose(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|t| Triple {
                row: t.col,
                col: t.row,
                value: t.value,
            })
            .collect();
        Self::from_dense(self.col_map.clone(), self.row_map.clone(), entries)
    }

    /// |Λ| / (|M|·|N|).
    pub fn density(&self) -> Result<f64, DataError> {
        density(self.len(), self.num_rows, self.num_cols)
    }

    /// Restricts to entries whose fold plays `role` under the plan's rotation.
    /// Dimensions and id maps are preserved.
    pub fn subset(&self, plan: &FoldPlan, role: Role) -> Result<Self, DataError> {
        if plan.assignment.len() != self.len() {
            return Err(DataError::PlanMismatch {
                plan: plan.assignment.len(),
                dataset: self.len(),
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&plan.assignment)
            .filter(|(_, &fold)| plan.role_of(fold as usize) == role)
            .map(|(t, _)| *t)
            .collect();
        Ok(Self::from_dense(
            self.row_map.clone(),
            self.col_map.clone(),
            entries,
        ))
    }

    /// Writes entries as `row col value` lines with external ids, in entry order.
    pub fn write_triples<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.entries {
            writeln!(
                out,
                "{} {} {}",
                self.row_map.external(t.row as usize),
                self.col_map.external(t.col as usize),
                t.value
            )?;
        }
        Ok(())
    }
}

pub fn density(known: usize, rows: usize, cols: usize) -> Result<f64, DataError> {
    if rows == 0 || cols == 0 {
        return Err(DataError::ZeroDimension { rows, cols });
    }
    Ok(known as f64 / (rows as f64 * cols as f64))
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Entry>, DataError> {
    let body = line.trim();
    if body.is_empty() || body.starts_with('#') {
        return Ok(None);
    }
    let malformed = |reason: String| DataError::Malformed {
        line: lineno,
        reason,
    };
    let fields: Vec<&str> = body
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .collect();
    if fields.len() != 3 {
        return Err(malformed(format!("expected 3 fields, found {}", fields.len())));
    }
    let row = fields[0]
        .parse::<i64>()
        .map_err(|e| malformed(format!("row id {:?}: {e}", fields[0])))?;
    let col = fields[1]
        .parse::<i64>()
        .map_err(|e| malformed(format!("column id {:?}: {e}", fields[1])))?;
    let value = fields[2]
        .parse::<f64>()
        .map_err(|e| malformed(format!("value {:?}: {e}", fields[2])))?;
    if !value.is_finite() {
        return Err(malformed(format!("value {value} is not finite")));
    }
    if value < 0.0 {
        return Err(DataError::NegativeValue {
            line: lineno,
            value,
        });
    }
    Ok(Some(Entry { row, col, value }))
}

/// Parses a triple stream. Lines are 1-based; `#` starts a comment line.
/// Duplicate (row, col) pairs are rejected.
pub fn read_triples<R: BufRead>(source: R) -> Result<TripleSet, DataError> {
    let mut set = TripleSet::default();
    let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if let Some(entry) = parse_line(&line, lineno)? {
            if let Some(&first) = seen.get(&(entry.row, entry.col)) {
                return Err(DataError::Duplicate {
                    line: lineno,
                    first,
                    row: entry.row,
                    col: entry.col,
                });
            }
            seen.insert((entry.row, entry.col), lineno);
            set.entries.push(entry);
            set.lines.push(lineno);
        }
    }
    Ok(set)
}

/// Loads one triple stream into a dataset with its own id spaces.
pub fn load_triples<R: BufRead>(source: R) -> Result<SparseDataset, DataError> {
    let set = read_triples(source)?;
    Ok(align(&[&set]).pop().expect("one input yields one dataset"))
}

/// Builds datasets that share one row id space and one column id space,
/// e.g. separate train and validation files. Ids are interned in order of
/// first appearance across `sets`.
pub fn align(sets: &[&TripleSet]) -> Vec<SparseDataset> {
    let mut rows = IdMap::new();
    let mut cols = IdMap::new();
    let dense: Vec<Vec<Triple>> = sets
        .iter()
        .map(|s| {
            s.entries
                .iter()
                .map(|e| Triple {
                    row: rows.intern(e.row),
                    col: cols.intern(e.col),
                    value: e.value,
                })
                .collect()
        })
        .collect();
    let rows = Arc::new(rows);
    let cols = Arc::new(cols);
    dense
        .into_iter()
        .map(|entries| SparseDataset::from_dense(rows.clone(), cols.clone(), entries))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        })
    }
}

/// Assignment of every entry to one of ten folds plus the current role
/// rotation (7 train, 1 validation, 2 test).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoldPlan {
    seed: u64,
    assignment: Vec<u8>,
    repetition: usize,
}

impl FoldPlan {
    /// Shuffles entry positions under `seed` and deals them round-robin into
    /// ten folds, so fold sizes differ by at most one.
    pub fn new(ds: &SparseDataset, seed: u64) -> Result<Self, DataError> {
        Self::for_len(ds.len(), seed)
    }

    pub fn for_len(len: usize, seed: u64) -> Result<Self, DataError> {
        if len < FOLD_COUNT {
            return Err(DataError::TooFewEntries {
                needed: FOLD_COUNT,
                got: len,
            });
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0u8; len];
        for (pos, &idx) in order.iter().enumerate() {
            assignment[idx] = (pos % FOLD_COUNT) as u8;
        }
        Ok(Self {
            seed,
            assignment,
            repetition: 0,
        })
    }

    /// Shifts fold roles cyclically: validation is fold `(7 + r) mod 10`,
    /// tests are `(8 + r)` and `(9 + r) mod 10`, the rest train.
    pub fn rotate(&self, repetition: usize) -> Result<Self, DataError> {
        if repetition >= FOLD_COUNT {
            return Err(DataError::RepetitionOutOfRange(repetition));
        }
        Ok(Self {
            repetition,
            ..self.clone()
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn repetition(&self) -> usize {
        self.repetition
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    pub fn role_of(&self, fold: usize) -> Role {
        let shifted = (fold + FOLD_COUNT - self.repetition % FOLD_COUNT) % FOLD_COUNT;
        match shifted {
            s if s < TRAIN_FOLDS => Role::Train,
            s if s == TRAIN_FOLDS => Role::Validation,
            _ => Role::Test,
        }
    }

    pub fn folds_with_role(&self, role: Role) -> Vec<usize> {
        (0..FOLD_COUNT).filter(|&f| self.role_of(f) == role).collect()
    }

    pub fn fold_sizes(&self) -> [usize; FOLD_COUNT] {
        let mut sizes = [0; FOLD_COUNT];
        for &f in &self.assignment {
            sizes[f as usize] += 1;
        }
        sizes
    }

    /// Stable fingerprint of assignment and rotation (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for &f in &self.assignment {
            feed(f);
        }
        for b in (self.repetition as u64).to_le_bytes() {
            feed(b);
        }
        h
    }

    /// Text form: `folds=10 seed=<s>` then one fold label per entry.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "folds={FOLD_COUNT} seed={}", self.seed)?;
        for f in &self.assignment {
            writeln!(out, "{f}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, DataError> {
        let bad = |m: String| DataError::InvalidPlan(m);
        let mut lines = source.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let mut folds = None;
        let mut seed = None;
        for part in header.split_whitespace() {
            match part.split_once('=') {
                Some(("folds", v)) => folds = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                _ => return Err(bad(format!("unexpected header field {part:?}"))),
            }
        }
        if folds != Some(FOLD_COUNT) {
            return Err(bad(format!("header must declare folds={FOLD_COUNT}")));
        }
        let seed = seed.ok_or_else(|| bad("header lacks seed".into()))?;
        let mut assignment = Vec::new();
        for line in lines {
            let line = line?;
            let label: u8 = line
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad fold label {line:?}")))?;
            if label as usize >= FOLD_COUNT {
                return Err(bad(format!("fold label {label} out of range")));
            }
            assignment.push(label);
        }
        Ok(Self {
            seed,
            assignment,
            repetition: 0,
        })
    }
}

/// Summary numbers for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub known: usize,
    pub rows: usize,
    pub cols: usize,
    pub density: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

impl DatasetStats {
    pub fn of(ds: &SparseDataset) -> Self {
        let values = ds.entries().iter().map(|t| t.value);
        let (min, max, sum) = values.fold(
            (f64::INFINITY, f64::NEG_INFINITY, 0.0),
            |(lo, hi, s), v| (lo.min(v), hi.max(v), s + v),
        );
        let any = !ds.is_empty();
        Self {
            known: ds.len(),
            rows: ds.num_rows(),
            cols: ds.num_cols(),
            density: ds.density().ok(),
            min: any.then_some(min),
            max: any.then_some(max),
            mean: any.then(|| sum / ds.len() as f64),
        }
    }
}
