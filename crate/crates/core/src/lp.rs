//! LP relaxation of makespan minimisation and the mechanism built on it.
//!
//! ```text
//! minimise  mu
//!   sum_i a_ij = 1                 for every task j
//!   mu - sum_j a_ij t_ij >= 0      for every machine i
//!   a_ij >= 0
//! ```
//!
//! The optimal allocation serves as fractions (fractional mechanism) or as
//! probabilities (randomized mechanism); it is the same matrix either way.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::BidGrid;
use crate::error::{Error, Result};
use crate::model::{machine_costs, AllocationMatrix, CostMatrix};
use crate::scalar::Scalar;
use crate::simplex;

/// Largest number of deviation rows a truthfulness check will evaluate.
pub const DEVIATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution<T> {
    pub alloc: AllocationMatrix<T>,
    pub mu: T,
}

impl<T: Scalar> LpSolution<T> {
    /// `sum_j a_ij t_ij` for every machine.
    pub fn loads(&self, times: &CostMatrix<T>) -> Vec<T> {
        (0..times.n())
            .map(|i| {
                (0..times.m())
                    .map(|j| self.alloc.get(i, j) * times.get(i, j))
                    .sum()
            })
            .collect()
    }
}

/// Optimal basic solution of the relaxation; deterministic for a given input.
pub fn solve_scheduling_lp<T: Scalar>(times: &CostMatrix<T>) -> Result<LpSolution<T>> {
    times.require_positive("LP relaxation")?;
    let (n, m) = times.dims();
    let alpha = |i: usize, j: usize| i * m + j;
    let mu_var = n * m;
    let slack = |i: usize| n * m + 1 + i;
    let vars = n * m + 1 + n;

    let mut a = Vec::with_capacity(m + n);
    let mut b = Vec::with_capacity(m + n);
    for j in 0..m {
        let mut row = vec![T::zero(); vars];
        for i in 0..n {
            row[alpha(i, j)] = T::one();
        }
        a.push(row);
        b.push(T::one());
    }
    for i in 0..n {
        let mut row = vec![T::zero(); vars];
        for j in 0..m {
            row[alpha(i, j)] = times.get(i, j);
        }
        row[mu_var] = -T::one();
        row[slack(i)] = T::one();
        a.push(row);
        b.push(T::zero());
    }
    let mut c = vec![T::zero(); vars];
    c[mu_var] = T::one();

    let sol = simplex::solve(&a, &b, &c)?;

    let mut columns = Vec::with_capacity(m);
    for j in 0..m {
        let mut col: Vec<T> = (0..n).map(|i| sol.x[alpha(i, j)].max(T::zero())).collect();
        let total: T = col.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::SolverFailure {
                iterations: 0,
                log: format!("task {j} left unallocated"),
            });
        }
        col.iter_mut().for_each(|v| *v = (*v / total).min(T::one()));
        columns.push(col);
    }
    let alloc = AllocationMatrix::from_columns(columns)?;
    let mut out = LpSolution {
        alloc,
        mu: sol.objective,
    };
    let max_load = out.loads(times).into_iter().fold(T::zero(), T::max);
    out.mu = out.mu.max(max_load);
    Ok(out)
}

pub fn lp_mechanism<T: Scalar>(decl: &CostMatrix<T>) -> Result<AllocationMatrix<T>> {
    Ok(solve_scheduling_lp(decl)?.alloc)
}

fn machine_cost_under_lp<T: Scalar>(
    truth: &CostMatrix<T>,
    decl: &CostMatrix<T>,
    machine: usize,
) -> Result<T> {
    let alloc = lp_mechanism(decl)?;
    Ok(machine_costs(&alloc, decl, truth)?.get(machine))
}

/// Largest gain machine `machine` obtains by replacing the truthful row with
/// any row of `deviation_grid`, the others declaring as in `decl`.
///
/// A positive value certifies a violation of truthfulness.
pub fn lp_truthfulness_regret<T: Scalar>(
    truth: &CostMatrix<T>,
    decl: &CostMatrix<T>,
    machine: usize,
    deviation_grid: &BidGrid<T>,
) -> Result<T> {
    if truth.dims() != decl.dims() {
        return Err(Error::dims(truth.dims(), decl.dims()));
    }
    if deviation_grid.dims() != truth.dims() {
        return Err(Error::dims(truth.dims(), deviation_grid.dims()));
    }
    if machine >= truth.n() {
        return Err(Error::InvalidInput(format!(
            "machine {machine} out of range for {} machines",
            truth.n()
        )));
    }
    let rows = deviation_grid.row_count(machine);
    if rows > DEVIATION_CAP {
        return Err(Error::Capacity {
            required: rows,
            cap: DEVIATION_CAP,
            hint: "reduce the grid span or the number of tasks",
        });
    }

    let truthful = decl.with_row(machine, truth.row(machine))?;
    let truthful_cost = machine_cost_under_lp(truth, &truthful, machine)?;

    let gains = (0..rows as u64)
        .into_par_iter()
        .map(|k| {
            let row = deviation_grid.row(machine, k as u128);
            let deviated = decl.with_row(machine, &row)?;
            Ok(truthful_cost - machine_cost_under_lp(truth, &deviated, machine)?)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(gains.into_iter().fold(T::neg_infinity(), T::max))
}
