//! Dense brute-force reference implementations for testing.
//!
//! Everything here loops the full |M|×|N| grid with plain nested vectors and
//! shares no arithmetic with the sparse model or trainer: objective, the
//! analytic gradient brackets of the additive rules, central finite
//! differences, and a literal additive gradient step.

use thiserror::Error;

use crate::data::SparseDataset;
use crate::model::Model;

/// Default grid-cell cap for dense evaluation.
pub const DEFAULT_CELL_CAP: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{cells} cells exceed the dense cap of {cap}")]
    CapExceeded { cells: usize, cap: usize },
    #[error("coordinate {0:?} is out of range")]
    InvalidCoordinate(Coord),
    #[error("finite-difference step must be positive")]
    BadStep,
}

/// One of the four parameter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    X,
    Y,
    G,
    H,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::X, Family::Y, Family::G, Family::H];
}

/// A single scalar parameter: family, entity index, component index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub family: Family,
    pub index: usize,
    pub k: usize,
}

type Grid = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub x: Grid,
    pub y: Grid,
    pub g: Grid,
    pub h: Grid,
    pub i: Grid,
    pub j: Grid,
    /// `observed[m][n]` marks Λ.
    pub observed: Vec<Vec<bool>>,
    pub values: Grid,
    pub cell_cap: usize,
}

fn grid_of<T: Copy + Into<f64>>(a: &ndarray::Array2<T>) -> Grid {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v.into()).collect())
        .collect()
}

impl DenseState {
    pub fn from_model(model: &Model, ds: &SparseDataset) -> Self {
        let (rows, cols) = (ds.num_rows(), ds.num_cols());
        let mut observed = vec![vec![false; cols]; rows];
        let mut values = vec![vec![0.0; cols]; rows];
        for t in ds.entries() {
            observed[t.row as usize][t.col as usize] = true;
            values[t.row as usize][t.col as usize] = t.value;
        }
        let (g, h, i, j) = match &model.biases {
            Some(b) => (grid_of(&b.g), grid_of(&b.h), grid_of(&b.i), grid_of(&b.j)),
            None => (
                vec![vec![]; rows],
                vec![vec![]; cols],
                vec![vec![]; rows],
                vec![vec![]; cols],
            ),
        };
        Self {
            rows,
            cols,
            lambda: model.hp.lambda,
            x: grid_of(&model.factors.x),
            y: grid_of(&model.factors.y),
            g,
            h,
            i,
            j,
            observed,
            values,
            cell_cap: DEFAULT_CELL_CAP,
        }
    }

    fn check_cap(&self) -> Result<(), OracleError> {
        let cells = self.rows * self.cols;
        if cells > self.cell_cap {
            return Err(OracleError::CapExceeded {
                cells,
                cap: self.cell_cap,
            });
        }
        Ok(())
    }

    fn grid(&self, f: Family) -> &Grid {
        match f {
            Family::X => &self.x,
            Family::Y => &self.y,
            Family::G => &self.g,
            Family::H => &self.h,
        }
    }

    fn grid_mut(&mut self, f: Family) -> &mut Grid {
        match f {
            Family::X => &mut self.x,
            Family::Y => &mut self.y,
            Family::G => &mut self.g,
            Family::H => &mut self.h,
        }
    }

    pub fn get(&self, c: Coord) -> Result<f64, OracleError> {
        self.grid(c.family)
            .get(c.index)
            .and_then(|r| r.get(c.k))
            .copied()
            .ok_or(OracleError::InvalidCoordinate(c))
    }

    pub fn set(&mut self, c: Coord, v: f64) -> Result<(), OracleError> {
        let slot = self
            .grid_mut(c.family)
            .get_mut(c.index)
            .and_then(|r| r.get_mut(c.k))
            .ok_or(OracleError::InvalidCoordinate(c))?;
        *slot = v;
        Ok(())
    }

    /// Every valid coordinate, family by family, row-major.
    pub fn coords(&self) -> Vec<Coord> {
        Family::ALL
            .iter()
            .flat_map(|&family| {
                self.grid(family).iter().enumerate().flat_map(move |(index, r)| {
                    (0..r.len()).map(move |k| Coord { family, index, k })
                })
            })
            .collect()
    }

    fn estimate(&self, m: usize, n: usize) -> f64 {
        let mut latent = 0.0;
        for k in 0..self.x[m].len() {
            latent += self.x[m][k] * self.y[n][k];
        }
        let mut bias = 0.0;
        for k in 0..self.g[m].len() {
            bias += self.i[m][k] * self.g[m][k] + self.j[n][k] * self.h[n][k];
        }
        latent + bias
    }

    #[allow(clippy::needless_range_loop)]
    fn residuals(&self) -> Grid {
        let mut res = vec![vec![0.0; self.cols]; self.rows];
        for m in 0..self.rows {
            for n in 0..self.cols {
                if self.observed[m][n] {
                    res[m][n] = self.values[m][n] - self.estimate(m, n);
                }
            }
        }
        res
    }
}

/// The regularized objective, summed cell by cell over the full grid.
pub fn dense_objective(s: &DenseState) -> Result<f64, OracleError> {
    s.check_cap()?;
    let mut total = 0.0;
    for m in 0..s.rows {
        for n in 0..s.cols {
            if !s.observed[m][n] {
                continue;
            }
            let e = s.values[m][n] - s.estimate(m, n);
            let mut reg = 0.0;
            for k in 0..s.x[m].len() {
                reg += s.x[m][k].powi(2) + s.y[n][k].powi(2);
            }
            for k in 0..s.g[m].len() {
                reg += (s.i[m][k] * s.g[m][k]).powi(2) + (s.j[n][k] * s.h[n][k]).powi(2);
            }
            total += 0.5 * (e * e + s.lambda * reg);
        }
    }
    Ok(total)
}

/// The bracketed sum of the additive rule for `c`, e.g. for x[m][k]
/// `Σ_{n∈Λ(m)} (y[n][k]·(r − r̂) − λ·x[m][k])`. This is the negative
/// gradient of the objective for factor coordinates and for active biases.
pub fn descent_bracket(s: &DenseState, c: Coord) -> Result<f64, OracleError> {
    s.check_cap()?;
    let own = s.get(c)?;
    let res = s.residuals();
    let mut sum = 0.0;
    let lines: Vec<(usize, usize)> = match c.family {
        Family::X | Family::G => (0..s.cols).map(|n| (c.index, n)).collect(),
        Family::Y | Family::H => (0..s.rows).map(|m| (m, c.index)).collect(),
    };
    for (m, n) in lines {
        if !s.observed[m][n] {
            continue;
        }
        let weight = match c.family {
            Family::X => s.y[n][c.k],
            Family::Y => s.x[m][c.k],
            Family::G => s.i[m][c.k],
            Family::H => s.j[n][c.k],
        };
        sum += weight * res[m][n] - s.lambda * own;
    }
    Ok(sum)
}

/// Analytic ∂ε/∂c from the additive-rule bracket.
pub fn analytic_gradient(s: &DenseState, c: Coord) -> Result<f64, OracleError> {
    Ok(-descent_bracket(s, c)?)
}

/// Central difference `(ε(c+h) − ε(c−h)) / 2h`.
pub fn fd_gradient(s: &DenseState, c: Coord, step: f64) -> Result<f64, OracleError> {
    if step.is_nan() || step <= 0.0 {
        return Err(OracleError::BadStep);
    }
    let base = s.get(c)?;
    let mut probe = s.clone();
    probe.set(c, base + step)?;
    let up = dense_objective(&probe)?;
    probe.set(c, base - step)?;
    let down = dense_objective(&probe)?;
    Ok((up - down) / (2.0 * step))
}

/// Moves every coordinate closer than `10·step` to zero out to 0.1, so a
/// central difference never straddles the nonnegativity boundary.
pub fn lift_from_boundary(s: &mut DenseState, step: f64) {
    for c in s.coords() {
        if s.get(c).expect("coord from coords()") < 10.0 * step {
            s.set(c, 0.1).expect("coord from coords()");
        }
    }
}

/// Per-coordinate learning rates shaped like the family's grid.
pub type Rates = Grid;

/// The rates that turn the additive step into the multiplicative one:
/// `η = c / Σ (r̂·w + λ·c)` over the coordinate's observed line (0 when
/// the line is empty).
pub fn canceling_rates(s: &DenseState, family: Family) -> Rates {
    let grid = s.grid(family);
    let mut rates = grid.clone();
    for (a, row) in grid.iter().enumerate() {
        for (k, &own) in row.iter().enumerate() {
            let mut den = 0.0;
            let cells: Vec<(usize, usize)> = match family {
                Family::X | Family::G => (0..s.cols).map(|n| (a, n)).collect(),
                Family::Y | Family::H => (0..s.rows).map(|m| (m, a)).collect(),
            };
            for (m, n) in cells {
                if !s.observed[m][n] {
                    continue;
                }
                let w = match family {
                    Family::X => s.y[n][k],
                    Family::Y => s.x[m][k],
                    Family::G => s.i[m][k],
                    Family::H => s.j[n][k],
                };
                den += s.estimate(m, n) * w + s.lambda * own;
            }
            rates[a][k] = if den == 0.0 { 0.0 } else { own / den };
        }
    }
    rates
}

/// One literal additive step for a single family: every coordinate reads the
/// same pre-step snapshot. Coordinates whose line holds no observations are
/// left alone (their bracket is an empty sum).
pub fn agd_phase(s: &DenseState, family: Family, rates: &Rates) -> Result<DenseState, OracleError> {
    s.check_cap()?;
    let mut next = s.clone();
    let grid = s.grid(family);
    for (a, row) in grid.iter().enumerate() {
        for k in 0..row.len() {
            let c = Coord {
                family,
                index: a,
                k,
            };
            let step = rates[a][k] * descent_bracket(s, c)?;
            next.set(c, row[k] + step)?;
        }
    }
    Ok(next)
}

/// A full additive iteration X → Y → G → H, each family reading the state
/// left by the previous one.
pub fn agd_step(
    s: &DenseState,
    rates: impl Fn(&DenseState, Family) -> Rates,
) -> Result<DenseState, OracleError> {
    let mut state = s.clone();
    for family in Family::ALL {
        let r = rates(&state, family);
        state = agd_phase(&state, family, &r)?;
    }
    Ok(state)
}
