//! Allocation rules: the two-machine and n-machine threshold algorithms,
//! the proportional rule, greedy, and their per-task composition.
//!
//! Single-task rules map a declaration vector (one entry per machine) to a
//! probability vector. A multi-task allocation is obtained by applying the
//! rule to every column independently, see [`per_task_product`].

use serde::Serialize;

use crate::equilibrium::BidGrid;
use crate::error::{Error, Result};
use crate::lp;
use crate::model::{AllocationMatrix, CostMatrix};
use crate::scalar::{rel_eq, rel_lt, Scalar};

/// Parameters `L` and `c` of the threshold algorithms for `n` machines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgParams<T> {
    l: T,
    c: T,
    n: usize,
}

impl<T: Scalar> AlgParams<T> {
    /// Requires `L > 2(n-1)` (and `L > 0` for a single machine) and `c > 1`.
    pub fn new(l: T, c: T, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("n must be >= 1".into()));
        }
        let bound = T::from_count(2 * (n - 1));
        if !(l.is_finite() && l > bound && l > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "L = {l} must exceed 2(n-1) = {bound} for n = {n}"
            )));
        }
        if !(c.is_finite() && c > T::one()) {
            return Err(Error::InvalidParams(format!("c = {c} must exceed 1")));
        }
        Ok(AlgParams { l, c, n })
    }

    /// `c = 1 + 1/L`, the choice used whenever `c` only needs to exceed one.
    pub fn with_default_c(l: T, n: usize) -> Result<Self> {
        Self::new(l, T::one() + T::one() / l, n)
    }

    /// `L = 4 max(n-1, 1)`, `c = 1 + 1/L`.
    pub fn default_for(n: usize) -> Result<Self> {
        Self::with_default_c(T::from_count(4 * (n.max(2) - 1)), n)
    }

    pub fn l(&self) -> T {
        self.l
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `1 + (n-1)/L`, the single-task equilibrium makespan guarantee.
    pub fn poa_bound(&self) -> T {
        T::one() + T::from_count(self.n - 1) / self.l
    }
}

/// Smallest and second smallest declared values and who declared them.
///
/// When all declarations coincide, `t_sec == t_min` and `sec` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MinSecStats<T> {
    pub t_min: T,
    pub t_sec: T,
    pub min: Vec<usize>,
    pub sec: Vec<usize>,
}

impl<T> MinSecStats<T> {
    pub fn n_min(&self) -> usize {
        self.min.len()
    }

    pub fn n_sec(&self) -> usize {
        self.sec.len()
    }
}

fn require_positive<T: Scalar>(decl: &[T]) -> Result<()> {
    if decl.is_empty() {
        return Err(Error::InvalidInput("empty declaration vector".into()));
    }
    match decl.iter().position(|&x| !(x > T::zero() && x.is_finite())) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidInput(format!(
            "declaration of machine {i} is {}, expected a positive finite time",
            decl[i]
        ))),
    }
}

pub fn min_sec_stats<T: Scalar>(decl: &[T]) -> Result<MinSecStats<T>> {
    require_positive(decl)?;
    let t_min = decl.iter().copied().fold(T::infinity(), T::min);
    let min: Vec<usize> = (0..decl.len()).filter(|&i| rel_eq(decl[i], t_min)).collect();
    let t_sec = decl
        .iter()
        .copied()
        .filter(|&x| !rel_eq(x, t_min))
        .fold(T::infinity(), T::min);
    if t_sec.is_infinite() {
        return Ok(MinSecStats {
            t_min,
            t_sec: t_min,
            min,
            sec: Vec::new(),
        });
    }
    let sec = (0..decl.len()).filter(|&i| rel_eq(decl[i], t_sec)).collect();
    Ok(MinSecStats {
        t_min,
        t_sec,
        min,
        sec,
    })
}

/// Two-machine algorithm, returned in input order.
pub fn alg2<T: Scalar>(params: &AlgParams<T>, decl: &[T]) -> Result<Vec<T>> {
    if params.n != 2 || decl.len() != 2 {
        return Err(Error::InvalidParams(format!(
            "alg2 schedules on exactly two machines (params n = {}, {} declarations)",
            params.n,
            decl.len()
        )));
    }
    require_positive(decl)?;
    let (lo_idx, hi_idx) = if decl[0] <= decl[1] { (0, 1) } else { (1, 0) };
    let (lo, hi) = (decl[lo_idx], decl[hi_idx]);
    let inv_l = T::one() / params.l;
    let (p_lo, p_hi) = if rel_eq(lo, hi) {
        let half = T::lit(0.5);
        (half, half)
    } else if rel_lt(hi, params.c * lo) {
        (inv_l, T::one() - inv_l)
    } else {
        let p = inv_l * (lo / hi);
        (T::one() - p, p)
    };
    let mut out = vec![T::zero(); 2];
    out[lo_idx] = p_lo;
    out[hi_idx] = p_hi;
    Ok(out)
}

/// The n-machine threshold algorithm `A_{L,c}`.
pub fn alg_n<T: Scalar>(params: &AlgParams<T>, decl: &[T]) -> Result<Vec<T>> {
    if decl.len() != params.n {
        return Err(Error::InvalidParams(format!(
            "parameters are for n = {} machines, got {} declarations",
            params.n,
            decl.len()
        )));
    }
    let stats = min_sec_stats(decl)?;
    let n = decl.len();
    let mut out = vec![T::zero(); n];
    if stats.sec.is_empty() {
        let share = T::one() / T::from_count(n);
        out.iter_mut().for_each(|p| *p = share);
        return Ok(out);
    }
    let inv_l = T::one() / params.l;
    if rel_lt(stats.t_sec, params.c * stats.t_min) {
        let p_min = inv_l / T::from_count(stats.n_min());
        let p_sec = (T::one() - inv_l) / T::from_count(stats.n_sec());
        for &i in &stats.min {
            out[i] = p_min;
        }
        for &i in &stats.sec {
            out[i] = p_sec;
        }
        return Ok(out);
    }
    let mut rest = T::zero();
    for i in 0..n {
        if !stats.min.contains(&i) {
            out[i] = stats.t_min / (params.l * decl[i]);
            rest = rest + out[i];
        }
    }
    let p_min = (T::one() - rest) / T::from_count(stats.n_min());
    for &i in &stats.min {
        out[i] = p_min;
    }
    Ok(out)
}

/// Allocates in proportion to inverse declarations.
pub fn proportional_single<T: Scalar>(decl: &[T]) -> Result<Vec<T>> {
    require_positive(decl)?;
    let total: T = decl.iter().map(|&x| x.recip()).sum();
    Ok(decl.iter().map(|&x| x.recip() / total).collect())
}

/// Everything to the smallest declaration; ties go to the lowest index.
pub fn greedy_single<T: Scalar>(decl: &[T]) -> Result<Vec<T>> {
    if decl.is_empty() {
        return Err(Error::InvalidInput("empty declaration vector".into()));
    }
    if let Some(i) = decl.iter().position(|x| x.is_nan() || *x < T::zero()) {
        return Err(Error::InvalidInput(format!(
            "declaration of machine {i} is {}, expected a nonnegative time",
            decl[i]
        )));
    }
    let mut winner = 0;
    for (i, &x) in decl.iter().enumerate() {
        if x < decl[winner] {
            winner = i;
        }
    }
    let mut out = vec![T::zero(); decl.len()];
    out[winner] = T::one();
    Ok(out)
}

/// A single-task rule usable as a column of a per-task product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SingleTaskRule<T> {
    Alg2(AlgParams<T>),
    AlgN(AlgParams<T>),
    Proportional,
    Greedy,
    LpColumn,
}

impl<T: Scalar> SingleTaskRule<T> {
    pub fn apply(&self, decl: &[T]) -> Result<Vec<T>> {
        match self {
            SingleTaskRule::Alg2(p) => alg2(p, decl),
            SingleTaskRule::AlgN(p) => alg_n(p, decl),
            SingleTaskRule::Proportional => proportional_single(decl),
            SingleTaskRule::Greedy => greedy_single(decl),
            SingleTaskRule::LpColumn => {
                let column = CostMatrix::from_column(decl)?;
                Ok(lp::lp_mechanism(&column)?.column(0))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SingleTaskRule::Alg2(_) => "alg2",
            SingleTaskRule::AlgN(_) => "algN",
            SingleTaskRule::Proportional => "proportional",
            SingleTaskRule::Greedy => "greedy",
            SingleTaskRule::LpColumn => "lp-column",
        }
    }

    pub fn params(&self) -> Option<&AlgParams<T>> {
        match self {
            SingleTaskRule::Alg2(p) | SingleTaskRule::AlgN(p) => Some(p),
            _ => None,
        }
    }
}

/// Applies `rule` to every column of `decl` independently.
pub fn per_task_product<T: Scalar>(
    rule: &SingleTaskRule<T>,
    decl: &CostMatrix<T>,
) -> Result<AllocationMatrix<T>> {
    let columns = (0..decl.m())
        .map(|j| {
            rule.apply(&decl.column(j)).map_err(|e| Error::Task {
                task: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AllocationMatrix::from_columns(columns)
}

/// Anything that turns a declaration matrix into an allocation.
pub trait AllocationRule<T: Scalar>: Sync {
    fn allocate(&self, decl: &CostMatrix<T>) -> Result<AllocationMatrix<T>>;

    /// The column rule when the allocation is a per-task product. Regret
    /// computations use it to search deviations task by task.
    fn single_task_rule(&self) -> Option<&SingleTaskRule<T>> {
        None
    }
}

impl<T: Scalar> AllocationRule<T> for SingleTaskRule<T> {
    fn allocate(&self, decl: &CostMatrix<T>) -> Result<AllocationMatrix<T>> {
        per_task_product(self, decl)
    }

    fn single_task_rule(&self) -> Option<&SingleTaskRule<T>> {
        Some(self)
    }
}

/// The mechanisms selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mechanism", rename_all = "kebab-case")]
pub enum Mechanism<T> {
    PerTask(SingleTaskRule<T>),
    Lp,
}

impl<T: Scalar> Mechanism<T> {
    /// Resolves `alg2 | algN | lp | proportional | greedy`.
    pub fn from_name(name: &str, params: Option<AlgParams<T>>) -> Result<Self> {
        let need = |p: Option<AlgParams<T>>| {
            p.ok_or_else(|| Error::InvalidParams(format!("{name} needs L and c")))
        };
        Ok(match name {
            "alg2" => Mechanism::PerTask(SingleTaskRule::Alg2(need(params)?)),
            "algN" | "algn" => Mechanism::PerTask(SingleTaskRule::AlgN(need(params)?)),
            "proportional" => Mechanism::PerTask(SingleTaskRule::Proportional),
            "greedy" => Mechanism::PerTask(SingleTaskRule::Greedy),
            "lp" => Mechanism::Lp,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown mechanism '{other}' (expected alg2, algN, lp, proportional or greedy)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::PerTask(rule) => rule.name(),
            Mechanism::Lp => "lp",
        }
    }
}

impl<T: Scalar> AllocationRule<T> for Mechanism<T> {
    fn allocate(&self, decl: &CostMatrix<T>) -> Result<AllocationMatrix<T>> {
        match self {
            Mechanism::PerTask(rule) => per_task_product(rule, decl),
            Mechanism::Lp => lp::lp_mechanism(decl),
        }
    }

    fn single_task_rule(&self) -> Option<&SingleTaskRule<T>> {
        match self {
            Mechanism::PerTask(rule) => Some(rule),
            Mechanism::Lp => None,
        }
    }
}

/// Pivot declarations the threshold algorithms react to, per task: for
/// every true time `t` in the column, `t`, `c t`, `t / c`, `t / sqrt(c)`
/// (strictly inside the near band below `t`) and `L c t`.
pub fn threshold_pivots<T: Scalar>(truth: &CostMatrix<T>, params: &AlgParams<T>) -> Vec<Vec<T>> {
    let (c, lc) = (params.c, params.l * params.c);
    (0..truth.m())
        .map(|j| {
            truth
                .column(j)
                .into_iter()
                .flat_map(|t| [t, c * t, t / c, t / c.sqrt(), lc * t])
                .collect()
        })
        .collect()
}

/// Geometric grid around `truth` augmented with [`threshold_pivots`].
pub fn threshold_grid<T: Scalar>(
    truth: &CostMatrix<T>,
    params: &AlgParams<T>,
    factor: T,
    span: u32,
) -> Result<BidGrid<T>> {
    let mut grid = crate::equilibrium::build_grid(truth, factor, span, &[])?;
    for (j, pivots) in threshold_pivots(truth, params).into_iter().enumerate() {
        grid.add_task_pivots(j, &pivots)?;
    }
    Ok(grid)
}
