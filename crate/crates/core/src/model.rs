//! Instances, allocations and the objective values computed from them.
//!
//! Every matrix is indexed `(machine, task)` and stored row-major. A
//! machine that receives task `j` runs it for `max(declared, true)` time,
//! so every cost and makespan here is computed from the effective times.

use std::ops::Deref;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{approx_eq, definitely_less, Scalar};

/// Largest number of joint outcomes (`n^m`) the exact routines will walk.
pub const ENUMERATION_CAP: u128 = 1_000_000;

const MC_CHUNK: usize = 4096;

/// Nonnegative execution times, true or declared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix<T> {
    n: usize,
    m: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    /// Builds a matrix from one row per machine.
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let (n, m, data) = flatten(rows)?;
        if let Some(pos) = data.iter().position(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::InvalidInput(format!(
                "time at (machine {}, task {}) is {}; times must be finite and nonnegative",
                pos / m,
                pos % m,
                data[pos]
            )));
        }
        Ok(CostMatrix { n, m, data })
    }

    /// A single-task instance from one time per machine.
    pub fn from_column(column: &[T]) -> Result<Self> {
        Self::new(column.iter().map(|&x| vec![x]).collect())
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        Self::new((0..n).map(|i| (0..m).map(|j| f(i, j)).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn get(&self, machine: usize, task: usize) -> T {
        self.data[machine * self.m + task]
    }

    pub fn row(&self, machine: usize) -> &[T] {
        &self.data[machine * self.m..(machine + 1) * self.m]
    }

    pub fn column(&self, task: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, task)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }

    pub fn max_entry(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }

    pub fn min_in_column(&self, task: usize) -> T {
        (0..self.n)
            .map(|i| self.get(i, task))
            .fold(T::infinity(), T::min)
    }

    /// Copy of `self` with machine `machine`'s declarations replaced.
    pub fn with_row(&self, machine: usize, row: &[T]) -> Result<Self> {
        if row.len() != self.m || machine >= self.n {
            return Err(Error::dims((1, self.m), (1, row.len())));
        }
        let mut out = self.clone();
        out.data[machine * self.m..(machine + 1) * self.m].copy_from_slice(row);
        Ok(out)
    }

    pub(crate) fn set(&mut self, machine: usize, task: usize, value: T) {
        self.data[machine * self.m + task] = value;
    }

    /// Fails unless every entry is strictly positive.
    pub fn require_positive(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| *x <= T::zero()) {
            None => Ok(()),
            Some(pos) => Err(Error::InvalidInput(format!(
                "{what}: entry (machine {}, task {}) is {}, expected > 0",
                pos / self.m,
                pos % self.m,
                self.data[pos]
            ))),
        }
    }

    fn check_same_dims(&self, other: &CostMatrix<T>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Per-task allocation probabilities (or fractions). Columns sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationMatrix<T> {
    n: usize,
    m: usize,
    data: Vec<T>,
}

impl<T: Scalar> AllocationMatrix<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let (n, m, data) = flatten(rows)?;
        let alloc = AllocationMatrix { n, m, data };
        alloc.validate()?;
        Ok(alloc)
    }

    /// Builds the matrix from one probability vector per task.
    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self> {
        let m = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("allocation needs n >= 1 and m >= 1".into()));
        }
        let mut data = vec![T::zero(); n * m];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::dims((n, 1), (col.len(), 1)));
            }
            for (i, &p) in col.iter().enumerate() {
                data[i * m + j] = p;
            }
        }
        let alloc = AllocationMatrix { n, m, data };
        alloc.validate()?;
        Ok(alloc)
    }

    fn validate(&self) -> Result<()> {
        for (pos, &p) in self.data.iter().enumerate() {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(Error::InvalidInput(format!(
                    "allocation entry (machine {}, task {}) is {p}, expected a value in [0, 1]",
                    pos / self.m,
                    pos % self.m
                )));
            }
        }
        for j in 0..self.m {
            let sum: T = (0..self.n).map(|i| self.get(i, j)).sum();
            if (sum - T::one()).abs() > T::tol() {
                return Err(Error::InvalidInput(format!(
                    "allocation column {j} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn get(&self, machine: usize, task: usize) -> T {
        self.data[machine * self.m + task]
    }

    pub fn row(&self, machine: usize) -> &[T] {
        &self.data[machine * self.m..(machine + 1) * self.m]
    }

    pub fn column(&self, task: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, task)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// True when every entry is 0 or 1.
    pub fn is_deterministic(&self) -> bool {
        self.data.iter().all(|&p| p == T::zero() || p == T::one())
    }
}

fn flatten<T: Copy>(rows: Vec<Vec<T>>) -> Result<(usize, usize, Vec<T>)> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("matrix needs n >= 1 machines and m >= 1 tasks".into()));
    }
    let mut data = Vec::with_capacity(n * m);
    for row in &rows {
        if row.len() != m {
            return Err(Error::dims((n, m), (n, row.len())));
        }
        data.extend_from_slice(row);
    }
    Ok((n, m, data))
}

/// Entrywise `max(declared, true)`: the time a machine actually spends.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveTimes<T>(CostMatrix<T>);

impl<T> Deref for EffectiveTimes<T> {
    type Target = CostMatrix<T>;

    fn deref(&self) -> &CostMatrix<T> {
        &self.0
    }
}

impl<T> EffectiveTimes<T> {
    pub fn into_inner(self) -> CostMatrix<T> {
        self.0
    }
}

/// Expected cost of every machine under an allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MachineCosts<T>(Vec<T>);

impl<T: Scalar> MachineCosts<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn get(&self, machine: usize) -> T {
        self.0[machine]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EstimateMethod<T> {
    ExactEnumeration,
    MonteCarlo { samples: usize, stderr: T, seed: u64 },
}

/// An expected makespan together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MakespanEstimate<T> {
    pub value: T,
    #[serde(flatten)]
    pub method: EstimateMethod<T>,
}

impl<T: Scalar> MakespanEstimate<T> {
    pub fn stderr(&self) -> Option<T> {
        match self.method {
            EstimateMethod::ExactEnumeration => None,
            EstimateMethod::MonteCarlo { stderr, .. } => Some(stderr),
        }
    }
}

pub fn effective_times<T: Scalar>(
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
) -> Result<EffectiveTimes<T>> {
    decl.check_same_dims(truth)?;
    let data = decl
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&d, &t)| d.max(t))
        .collect();
    Ok(EffectiveTimes(CostMatrix {
        n: decl.n,
        m: decl.m,
        data,
    }))
}

fn check_alloc<T: Scalar>(alloc: &AllocationMatrix<T>, decl: &CostMatrix<T>) -> Result<()> {
    if alloc.dims() != decl.dims() {
        return Err(Error::dims(decl.dims(), alloc.dims()));
    }
    Ok(())
}

fn loads<T: Scalar>(alloc: &AllocationMatrix<T>, eff: &CostMatrix<T>) -> Vec<T> {
    (0..eff.n)
        .map(|i| {
            alloc
                .row(i)
                .iter()
                .zip(eff.row(i))
                .map(|(&a, &t)| a * t)
                .sum()
        })
        .collect()
}

/// `C_i = sum_j a_ij * max(decl_ij, truth_ij)` for every machine.
pub fn machine_costs<T: Scalar>(
    alloc: &AllocationMatrix<T>,
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
) -> Result<MachineCosts<T>> {
    check_alloc(alloc, decl)?;
    let eff = effective_times(decl, truth)?;
    Ok(MachineCosts(loads(alloc, &eff)))
}

pub fn social_welfare<T: Scalar>(costs: &MachineCosts<T>) -> T {
    costs.0.iter().copied().sum()
}

/// Makespan when every task is divided according to `alloc`.
pub fn fractional_makespan<T: Scalar>(
    alloc: &AllocationMatrix<T>,
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
) -> Result<T> {
    let costs = machine_costs(alloc, decl, truth)?;
    Ok(costs.0.into_iter().fold(T::zero(), T::max))
}

fn outcome_count(n: usize, m: usize) -> u128 {
    (n as u128).checked_pow(m as u32).unwrap_or(u128::MAX)
}

pub(crate) fn check_enumeration(n: usize, m: usize, cap: u128) -> Result<()> {
    let required = outcome_count(n, m);
    if required > cap {
        return Err(Error::Capacity {
            required,
            cap,
            hint: "use the Monte Carlo estimator (mc_expected_makespan / --samples) instead",
        });
    }
    Ok(())
}

pub fn exact_expected_makespan<T: Scalar>(
    alloc: &AllocationMatrix<T>,
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
) -> Result<MakespanEstimate<T>> {
    exact_expected_makespan_with_cap(alloc, decl, truth, ENUMERATION_CAP)
}

/// Exact expectation over all `n^m` joint assignments, tasks independent.
pub fn exact_expected_makespan_with_cap<T: Scalar>(
    alloc: &AllocationMatrix<T>,
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
    cap: u128,
) -> Result<MakespanEstimate<T>> {
    check_alloc(alloc, decl)?;
    let eff = effective_times(decl, truth)?;
    check_enumeration(eff.n, eff.m, cap)?;

    fn walk<T: Scalar>(
        task: usize,
        prob: T,
        loads: &mut [T],
        alloc: &AllocationMatrix<T>,
        eff: &CostMatrix<T>,
        acc: &mut T,
    ) {
        if task == eff.m {
            let makespan = loads.iter().copied().fold(T::zero(), T::max);
            *acc = *acc + prob * makespan;
            return;
        }
        for i in 0..eff.n {
            let p = alloc.get(i, task);
            if p == T::zero() {
                continue;
            }
            let t = eff.get(i, task);
            loads[i] = loads[i] + t;
            walk(task + 1, prob * p, loads, alloc, eff, acc);
            loads[i] = loads[i] - t;
        }
    }

    let mut acc = T::zero();
    let mut loads = vec![T::zero(); eff.n];
    walk(0, T::one(), &mut loads, alloc, &eff, &mut acc);
    Ok(MakespanEstimate {
        value: acc,
        method: EstimateMethod::ExactEnumeration,
    })
}

/// RNG for one sample; the stream index is the sample index, and draws
/// inside the stream are consumed in task order.
pub(crate) fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

/// Index of the machine selected by a uniform draw `u` in `[0, 1)`.
pub(crate) fn pick_machine<T: Scalar>(column: impl Iterator<Item = T>, u: T) -> usize {
    let mut cum = T::zero();
    let mut last_positive = 0;
    for (i, p) in column.enumerate() {
        if p > T::zero() {
            last_positive = i;
            cum = cum + p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Running (count, mean, M2) triple, merged in a fixed order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub(crate) fn empty() -> Self {
        Moments {
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub(crate) fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    pub(crate) fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Evaluates `f(sample)` for every sample in parallel and reduces the
/// moments in chunk order, so the result does not depend on scheduling.
pub(crate) fn sample_moments(samples: usize, f: impl Fn(u64) -> f64 + Sync) -> Moments {
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut mo = Moments::empty();
            let end = ((c + 1) * MC_CHUNK).min(samples);
            for s in c * MC_CHUNK..end {
                mo.push(f(s as u64));
            }
            mo
        })
        .collect();
    parts.into_iter().fold(Moments::empty(), Moments::merge)
}

/// Sample-mean estimate of the expected makespan with its standard error.
pub fn mc_expected_makespan<T: Scalar>(
    alloc: &AllocationMatrix<T>,
    decl: &CostMatrix<T>,
    truth: &CostMatrix<T>,
    samples: usize,
    seed: u64,
) -> Result<MakespanEstimate<T>> {
    check_alloc(alloc, decl)?;
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be >= 1".into()));
    }
    let eff = effective_times(decl, truth)?;
    let (n, m) = eff.dims();
    let moments = sample_moments(samples, |s| {
        let mut rng = sample_rng(seed, s);
        let mut loads = vec![T::zero(); n];
        for j in 0..m {
            let u = T::lit(rng.random::<f64>());
            let i = pick_machine((0..n).map(|i| alloc.get(i, j)), u);
            loads[i] = loads[i] + eff.get(i, j);
        }
        loads.into_iter().fold(T::zero(), T::max).as_f64()
    });
    Ok(MakespanEstimate {
        value: T::lit(moments.mean),
        method: EstimateMethod::MonteCarlo {
            samples,
            stderr: T::lit(moments.stderr()),
            seed,
        },
    })
}

/// Makespan of a deterministic assignment `task -> machine`.
pub fn assignment_makespan<T: Scalar>(times: &CostMatrix<T>, assignment: &[usize]) -> Result<T> {
    if assignment.len() != times.m {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} tasks, instance has {}",
            assignment.len(),
            times.m
        )));
    }
    let mut loads = vec![T::zero(); times.n];
    for (j, &i) in assignment.iter().enumerate() {
        if i >= times.n {
            return Err(Error::InvalidInput(format!(
                "task {j} assigned to machine {i}, instance has {} machines",
                times.n
            )));
        }
        loads[i] = loads[i] + times.get(i, j);
    }
    Ok(loads.into_iter().fold(T::zero(), T::max))
}

pub fn optimal_integral_makespan<T: Scalar>(truth: &CostMatrix<T>) -> Result<(T, Vec<usize>)> {
    optimal_integral_makespan_with_cap(truth, ENUMERATION_CAP)
}

/// Exhaustive minimum of the max load over integral assignments.
///
/// Assignments are visited in lexicographic order and only a strictly
/// smaller makespan replaces the incumbent, so the returned assignment is
/// the lexicographically smallest optimum.
pub fn optimal_integral_makespan_with_cap<T: Scalar>(
    truth: &CostMatrix<T>,
    cap: u128,
) -> Result<(T, Vec<usize>)> {
    let (n, m) = truth.dims();
    check_enumeration(n, m, cap)?;

    struct Search<'a, T> {
        times: &'a CostMatrix<T>,
        loads: Vec<T>,
        current: Vec<usize>,
        best: T,
        best_assignment: Vec<usize>,
    }

    impl<T: Scalar> Search<'_, T> {
        fn run(&mut self, task: usize, current_max: T) {
            if !definitely_less(current_max, self.best) && !self.best_assignment.is_empty() {
                return;
            }
            if task == self.times.m {
                self.best = current_max;
                self.best_assignment = self.current.clone();
                return;
            }
            for i in 0..self.times.n {
                let t = self.times.get(i, task);
                self.loads[i] = self.loads[i] + t;
                self.current[task] = i;
                let next_max = current_max.max(self.loads[i]);
                self.run(task + 1, next_max);
                self.loads[i] = self.loads[i] - t;
            }
        }
    }

    let mut search = Search {
        times: truth,
        loads: vec![T::zero(); n],
        current: vec![0; m],
        best: T::infinity(),
        best_assignment: Vec::new(),
    };
    search.run(0, T::zero());
    Ok((search.best, search.best_assignment))
}

/// Column-stochasticity check used by tests and debug assertions.
pub fn columns_sum_to_one<T: Scalar>(alloc: &AllocationMatrix<T>) -> bool {
    (0..alloc.m()).all(|j| approx_eq(alloc.column(j).into_iter().sum::<T>(), T::one()))
}
