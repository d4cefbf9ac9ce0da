//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c^T x  s.t.  A x = b, x >= 0`. Only meant for the small
//! programs this crate builds; there is no sparsity or refactorization.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LOG_DEPTH: usize = 8;

pub(crate) struct Solution<T> {
    pub x: Vec<T>,
    pub objective: T,
}

struct Tableau<T> {
    // rows x (cols + 1); last column is the right-hand side
    cells: Vec<Vec<T>>,
    obj: Vec<T>,
    basis: Vec<usize>,
    cols: usize,
    iterations: usize,
    max_iterations: usize,
    log: VecDeque<(usize, usize)>,
    tol: T,
}

impl<T: Scalar> Tableau<T> {
    fn rhs(&self, r: usize) -> T {
        self.cells[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.cells[row][col];
        for v in self.cells[row].iter_mut() {
            *v = *v / p;
        }
        self.cells[row][col] = T::one();
        let pivot_row = self.cells[row].clone();
        for (r, cells) in self.cells.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = cells[col];
            if f != T::zero() {
                for (v, &pv) in cells.iter_mut().zip(&pivot_row) {
                    *v = *v - f * pv;
                }
                cells[col] = T::zero();
            }
        }
        let f = self.obj[col];
        if f != T::zero() {
            for (v, &pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v = *v - f * pv;
            }
            self.obj[col] = T::zero();
        }
        self.basis[row] = col;
        self.iterations += 1;
        if self.log.len() == LOG_DEPTH {
            self.log.pop_front();
        }
        self.log.push_back((col, row));
    }

    /// Runs Bland-rule pivots over columns `< allowed` until optimal.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.obj[j] < -self.tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for r in 0..self.cells.len() {
                let a = self.cells[r][enter];
                if a > self.tol {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, best)) => {
                            if ratio < best - self.tol
                                || (ratio <= best + self.tol && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::SolverFailure {
                    iterations: self.iterations,
                    log: format!("unbounded direction at column {enter}; {}", self.log_text()),
                });
            };
            if self.iterations >= self.max_iterations {
                return Err(Error::SolverFailure {
                    iterations: self.iterations,
                    log: self.log_text(),
                });
            }
            self.pivot(row, enter);
        }
    }

    fn log_text(&self) -> String {
        self.log
            .iter()
            .map(|(c, r)| format!("col {c} -> row {r}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub(crate) fn solve<T: Scalar>(a: &[Vec<T>], b: &[T], c: &[T]) -> Result<Solution<T>> {
    let rows = a.len();
    let vars = c.len();
    let cols = vars + rows;
    let tol = T::lp_tol();

    let mut cells = Vec::with_capacity(rows);
    for (r, row) in a.iter().enumerate() {
        debug_assert_eq!(row.len(), vars);
        let flip = b[r] < T::zero();
        let sign = if flip { -T::one() } else { T::one() };
        let mut cells_row = vec![T::zero(); cols + 1];
        for (j, &v) in row.iter().enumerate() {
            cells_row[j] = sign * v;
        }
        cells_row[vars + r] = T::one();
        cells_row[cols] = sign * b[r];
        cells.push(cells_row);
    }

    // phase one: minimise the sum of artificials
    let mut obj = vec![T::zero(); cols + 1];
    for row in &cells {
        for j in 0..vars {
            obj[j] = obj[j] - row[j];
        }
        obj[cols] = obj[cols] - row[cols];
    }

    let mut tab = Tableau {
        cells,
        obj,
        basis: (vars..cols).collect(),
        cols,
        iterations: 0,
        max_iterations: 10_000 + 200 * cols,
        log: VecDeque::new(),
        tol,
    };
    tab.optimize(vars)?;

    let residual = -tab.obj[cols];
    let scale = b.iter().fold(T::one(), |acc, x| acc.max(x.abs()));
    if residual > tol * scale {
        return Err(Error::SolverFailure {
            iterations: tab.iterations,
            log: format!("infeasible program, phase one residual {residual}"),
        });
    }

    // drive remaining artificials out of the basis; drop redundant rows
    let mut r = 0;
    while r < tab.cells.len() {
        if tab.basis[r] >= vars {
            match (0..vars).find(|&j| tab.cells[r][j].abs() > tol) {
                Some(j) => tab.pivot(r, j),
                None => {
                    tab.cells.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // phase two: reduced costs of the real objective
    let mut obj = vec![T::zero(); cols + 1];
    obj[..vars].copy_from_slice(c);
    for (row, &bvar) in tab.cells.iter().zip(&tab.basis) {
        let f = obj[bvar];
        if f != T::zero() {
            for (v, &rv) in obj.iter_mut().zip(row) {
                *v = *v - f * rv;
            }
        }
    }
    tab.obj = obj;
    tab.optimize(vars)?;

    let mut x = vec![T::zero(); vars];
    for (r, &bvar) in tab.basis.iter().enumerate() {
        if bvar < vars {
            x[bvar] = tab.rhs(r);
        }
    }
    let objective = x.iter().zip(c).map(|(&xi, &ci)| xi * ci).sum();
    Ok(Solution { x, objective })
}
