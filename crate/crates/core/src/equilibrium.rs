//! Best responses, pure equilibria on finite bid grids, Price of Anarchy,
//! and the greedy mixed-equilibrium construction.
//!
//! Declarations live in a continuum; every search here runs over a
//! [`BidGrid`], a finite candidate set per `(machine, task)`. Grids built by
//! [`build_grid`] always contain the true time of every entry.

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{min_sec_stats, AlgParams, AllocationRule, SingleTaskRule};
use crate::model::{
    assignment_makespan, exact_expected_makespan, machine_costs, optimal_integral_makespan,
    sample_rng, CostMatrix,
};
use crate::scalar::{approx_eq, rel_eq, rel_lt, Scalar};

/// Largest number of grid profiles [`enumerate_pure_equilibria`] will visit.
pub const PROFILE_CAP: u128 = 10_000_000;

/// Largest number of opponent bids [`pos_certificate`] will draw.
pub const DRAW_CAP: u128 = 100_000_000;

const ENUM_CHUNK: u64 = 1024;

/// Candidate declarations for every `(machine, task)`, ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidGrid<T> {
    n: usize,
    m: usize,
    candidates: Vec<Vec<T>>,
    factor: Option<T>,
    span: Option<u32>,
}

fn normalize<T: Scalar>(values: &mut Vec<T>) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));
    values.dedup_by(|a, b| rel_eq(*a, *b));
}

impl<T: Scalar> BidGrid<T> {
    /// Grid from explicit candidate lists, indexed `[machine][task]`.
    pub fn from_candidates(candidates: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let n = candidates.len();
        let m = candidates.first().map_or(0, Vec::len);
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("grid needs n >= 1 and m >= 1".into()));
        }
        let mut flat = Vec::with_capacity(n * m);
        for (i, row) in candidates.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::dims((n, m), (n, row.len())));
            }
            for (j, mut cell) in row.into_iter().enumerate() {
                if cell.is_empty() || cell.iter().any(|&x| !(x > T::zero() && x.is_finite())) {
                    return Err(Error::InvalidInput(format!(
                        "grid cell (machine {i}, task {j}) must hold positive finite candidates"
                    )));
                }
                normalize(&mut cell);
                flat.push(cell);
            }
        }
        Ok(BidGrid {
            n,
            m,
            candidates: flat,
            factor: None,
            span: None,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn factor(&self) -> Option<T> {
        self.factor
    }

    pub fn span(&self) -> Option<u32> {
        self.span
    }

    pub fn candidates(&self, machine: usize, task: usize) -> &[T] {
        &self.candidates[machine * self.m + task]
    }

    /// Adds pivot values to the cells of every machine for one task.
    pub fn add_task_pivots(&mut self, task: usize, pivots: &[T]) -> Result<()> {
        if task >= self.m {
            return Err(Error::InvalidInput(format!("task {task} out of range")));
        }
        if pivots.iter().any(|&p| !(p > T::zero() && p.is_finite())) {
            return Err(Error::InvalidInput("pivots must be positive and finite".into()));
        }
        for i in 0..self.n {
            let cell = &mut self.candidates[i * self.m + task];
            cell.extend_from_slice(pivots);
            normalize(cell);
        }
        Ok(())
    }

    /// Number of distinct declaration rows for one machine.
    pub fn row_count(&self, machine: usize) -> u128 {
        (0..self.m)
            .map(|j| self.candidates(machine, j).len() as u128)
            .fold(1u128, |acc, k| acc.saturating_mul(k))
    }

    /// Row number `index` in mixed radix, task 0 most significant.
    pub fn row(&self, machine: usize, mut index: u128) -> Vec<T> {
        let mut row = vec![T::zero(); self.m];
        for j in (0..self.m).rev() {
            let cell = self.candidates(machine, j);
            let k = cell.len() as u128;
            row[j] = cell[(index % k) as usize];
            index /= k;
        }
        row
    }

    /// Number of joint profiles (product over all cells).
    pub fn profile_count(&self) -> u128 {
        self.candidates
            .iter()
            .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    fn profile(&self, mut index: u128) -> CostMatrix<T> {
        let mut rows = vec![vec![T::zero(); self.m]; self.n];
        for cell_idx in (0..self.n * self.m).rev() {
            let cell = &self.candidates[cell_idx];
            let k = cell.len() as u128;
            rows[cell_idx / self.m][cell_idx % self.m] = cell[(index % k) as usize];
            index /= k;
        }
        CostMatrix::new(rows).expect("grid candidates are valid times")
    }
}

/// `{t_ij * factor^p : p = -span..=span}` plus `pivots` in every cell.
pub fn build_grid<T: Scalar>(
    truth: &CostMatrix<T>,
    factor: T,
    span: u32,
    pivots: &[T],
) -> Result<BidGrid<T>> {
    if !(factor > T::one() && factor.is_finite()) {
        return Err(Error::InvalidParams(format!("grid factor {factor} must exceed 1")));
    }
    truth.require_positive("grid construction")?;
    if pivots.iter().any(|&p| !(p > T::zero() && p.is_finite())) {
        return Err(Error::InvalidInput("pivots must be positive and finite".into()));
    }
    let span_i = i32::try_from(span).unwrap_or(i32::MAX);
    let reach = factor.powi(span_i);
    let (lo, hi) = truth
        .entries()
        .iter()
        .fold((T::infinity(), T::zero()), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    if !(hi * reach).is_finite() || !(lo / reach > T::zero()) {
        return Err(Error::Capacity {
            required: 2 * span as u128 + 1,
            cap: PROFILE_CAP,
            hint: "grid span exceeds the floating-point range; lower --grid-span",
        });
    }
    let cells = (0..truth.n())
        .map(|i| {
            (0..truth.m())
                .map(|j| {
                    let t = truth.get(i, j);
                    let mut cell: Vec<T> = (-span_i..=span_i).map(|p| t * factor.powi(p)).collect();
                    // exact truth even if powi(0) rounding ever differs
                    cell.push(t);
                    cell.extend_from_slice(pivots);
                    cell
                })
                .collect()
        })
        .collect();
    let mut grid = BidGrid::from_candidates(cells)?;
    for i in 0..truth.n() {
        for j in 0..truth.m() {
            let cell = &mut grid.candidates[i * truth.m() + j];
            if let Some(k) = cell.iter().position(|&x| rel_eq(x, truth.get(i, j))) {
                cell[k] = truth.get(i, j);
            }
        }
    }
    grid.factor = Some(factor);
    grid.span = Some(span);
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport<T> {
    pub machine: usize,
    pub regret: T,
    pub best_deviation: Vec<T>,
}

fn check_inputs<T: Scalar>(
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    grid: &BidGrid<T>,
    machine: usize,
) -> Result<()> {
    if truth.dims() != profile.dims() {
        return Err(Error::dims(truth.dims(), profile.dims()));
    }
    if grid.dims() != truth.dims() {
        return Err(Error::dims(truth.dims(), grid.dims()));
    }
    if machine >= truth.n() {
        return Err(Error::InvalidInput(format!(
            "machine {machine} out of range for {} machines",
            truth.n()
        )));
    }
    Ok(())
}

/// Expected cost of `machine` for one task when it declares `bid`.
fn task_cost<T: Scalar>(
    rule: &SingleTaskRule<T>,
    column: &mut [T],
    machine: usize,
    bid: T,
    truth: T,
) -> Result<T> {
    let saved = column[machine];
    column[machine] = bid;
    let probs = rule.apply(column);
    column[machine] = saved;
    Ok(probs?[machine] * bid.max(truth))
}

fn regret_per_task<T: Scalar>(
    rule: &SingleTaskRule<T>,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    machine: usize,
    grid: &BidGrid<T>,
) -> Result<RegretReport<T>> {
    let mut current = T::zero();
    let mut best_total = T::zero();
    let mut best_row = Vec::with_capacity(truth.m());
    for j in 0..truth.m() {
        let mut column = profile.column(j);
        let t = truth.get(machine, j);
        current = current + task_cost(rule, &mut column, machine, profile.get(machine, j), t)?;
        let mut best: Option<(T, T)> = None;
        for &x in grid.candidates(machine, j) {
            let cost = task_cost(rule, &mut column, machine, x, t)?;
            if best.is_none_or(|(b, _)| cost < b) {
                best = Some((cost, x));
            }
        }
        let (cost, x) = best.expect("grid cells are nonempty");
        best_total = best_total + cost;
        best_row.push(x);
    }
    Ok(RegretReport {
        machine,
        regret: current - best_total,
        best_deviation: best_row,
    })
}

fn regret_full_rows<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    machine: usize,
    grid: &BidGrid<T>,
) -> Result<RegretReport<T>> {
    let rows = grid.row_count(machine);
    if rows > PROFILE_CAP {
        return Err(Error::Capacity {
            required: rows,
            cap: PROFILE_CAP,
            hint: "reduce the grid span or the number of tasks",
        });
    }
    let cost_of = |decl: &CostMatrix<T>| -> Result<T> {
        Ok(machine_costs(&rule.allocate(decl)?, decl, truth)?.get(machine))
    };
    let current = cost_of(profile)?;
    let costs = (0..rows as u64)
        .into_par_iter()
        .map(|k| cost_of(&profile.with_row(machine, &grid.row(machine, k as u128))?))
        .collect::<Result<Vec<T>>>()?;
    let (k, best) = costs
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::infinity()), |(bk, b), (k, c)| if c < b { (k, c) } else { (bk, b) });
    Ok(RegretReport {
        machine,
        regret: current - best,
        best_deviation: grid.row(machine, k as u128),
    })
}

/// Gain `machine` gets from its best grid row against the rest of `profile`.
///
/// Per-task rules are searched task by task, which is exact because the
/// expected cost is a sum of independent per-task terms.
pub fn best_response_regret<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    machine: usize,
    grid: &BidGrid<T>,
) -> Result<RegretReport<T>> {
    check_inputs(truth, profile, grid, machine)?;
    match rule.single_task_rule() {
        Some(single) => regret_per_task(single, truth, profile, machine, grid),
        None => regret_full_rows(rule, truth, profile, machine, grid),
    }
}

/// Same as [`best_response_regret`] but always enumerates whole rows.
pub fn best_response_regret_full_rows<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    machine: usize,
    grid: &BidGrid<T>,
) -> Result<RegretReport<T>> {
    check_inputs(truth, profile, grid, machine)?;
    regret_full_rows(rule, truth, profile, machine, grid)
}

/// The machine with the largest regret (lowest index among ties).
pub fn max_regret<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    grid: &BidGrid<T>,
) -> Result<RegretReport<T>> {
    let mut worst: Option<RegretReport<T>> = None;
    for i in 0..truth.n() {
        let r = best_response_regret(rule, truth, profile, i, grid)?;
        if worst.as_ref().is_none_or(|w| r.regret > w.regret) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("n >= 1"))
}

pub fn is_pure_equilibrium<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    profile: &CostMatrix<T>,
    grid: &BidGrid<T>,
    eps: T,
) -> Result<bool> {
    for i in 0..truth.n() {
        if best_response_regret(rule, truth, profile, i, grid)?.regret > eps {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `1e-9 * max truth entry`, the default equilibrium tolerance.
pub fn default_eps<T: Scalar>(truth: &CostMatrix<T>) -> T {
    T::lit(1e-9) * truth.max_entry().max(T::min_positive_value())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumEntry<T> {
    pub profile: CostMatrix<T>,
    pub makespan: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet<T> {
    pub entries: Vec<EquilibriumEntry<T>>,
    pub eps: T,
    pub profiles_checked: u128,
}

impl<T: Scalar> EquilibriumSet<T> {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn worst(&self) -> Option<&EquilibriumEntry<T>> {
        self.entries
            .iter()
            .fold(None, |acc: Option<&EquilibriumEntry<T>>, e| match acc {
                Some(w) if w.makespan >= e.makespan => Some(w),
                _ => Some(e),
            })
    }

    pub fn best(&self) -> Option<&EquilibriumEntry<T>> {
        self.entries
            .iter()
            .fold(None, |acc: Option<&EquilibriumEntry<T>>, e| match acc {
                Some(b) if b.makespan <= e.makespan => Some(b),
                _ => Some(e),
            })
    }

    pub fn contains(&self, profile: &CostMatrix<T>) -> bool {
        self.entries.iter().any(|e| {
            e.profile
                .entries()
                .iter()
                .zip(profile.entries())
                .all(|(&a, &b)| rel_eq(a, b))
        })
    }
}

/// Every grid profile at which no machine gains more than `eps`, in grid
/// order, each with its exact expected makespan.
pub fn enumerate_pure_equilibria<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    grid: &BidGrid<T>,
    eps: T,
) -> Result<EquilibriumSet<T>> {
    if grid.dims() != truth.dims() {
        return Err(Error::dims(truth.dims(), grid.dims()));
    }
    let total = grid.profile_count();
    if total > PROFILE_CAP {
        return Err(Error::Capacity {
            required: total,
            cap: PROFILE_CAP,
            hint: "reduce --grid-span or coarsen --grid-factor",
        });
    }
    let total = total as u64;
    let chunks = total.div_ceil(ENUM_CHUNK);
    let found = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            for k in c * ENUM_CHUNK..((c + 1) * ENUM_CHUNK).min(total) {
                let profile = grid.profile(k as u128);
                if is_pure_equilibrium(rule, truth, &profile, grid, eps)? {
                    let alloc = rule.allocate(&profile)?;
                    let makespan = exact_expected_makespan(&alloc, &profile, truth)?.value;
                    out.push(EquilibriumEntry { profile, makespan });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSet {
        entries: found.into_iter().flatten().collect(),
        eps,
        profiles_checked: total as u128,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoaReport<T> {
    /// Worst equilibrium makespan over the optimum.
    pub ratio: T,
    /// Best equilibrium makespan over the optimum.
    pub best_ratio: T,
    pub worst_makespan: T,
    pub optimum: T,
    pub optimal_assignment: Vec<usize>,
    pub worst_profile: CostMatrix<T>,
    pub equilibria: usize,
}

pub fn pure_poa<T: Scalar, R: AllocationRule<T> + ?Sized>(
    rule: &R,
    truth: &CostMatrix<T>,
    grid: &BidGrid<T>,
    eps: T,
) -> Result<PoaReport<T>> {
    let set = enumerate_pure_equilibria(rule, truth, grid, eps)?;
    poa_from_set(&set, truth)
}

pub fn poa_from_set<T: Scalar>(set: &EquilibriumSet<T>, truth: &CostMatrix<T>) -> Result<PoaReport<T>> {
    let (optimum, optimal_assignment) = optimal_integral_makespan(truth)?;
    let (Some(worst), Some(best)) = (set.worst(), set.best()) else {
        return Err(Error::NoEquilibrium(format!(
            "{} grid profiles checked; refine the grid (larger span or smaller factor)",
            set.profiles_checked
        )));
    };
    Ok(PoaReport {
        ratio: worst.makespan / optimum,
        best_ratio: best.makespan / optimum,
        worst_makespan: worst.makespan,
        optimum,
        optimal_assignment,
        worst_profile: worst.profile.clone(),
        equilibria: set.len(),
    })
}

/// Single-task equilibrium: the lowest-index fastest machine bids its true
/// time `t_min`, every other machine `k` bids `max(L c t_min, t_k)`.
pub fn analytic_equilibrium_single_task<T: Scalar>(
    truth: &[T],
    params: &AlgParams<T>,
) -> Result<CostMatrix<T>> {
    if truth.len() != params.n() {
        return Err(Error::InvalidParams(format!(
            "parameters are for n = {}, truth has {} machines",
            params.n(),
            truth.len()
        )));
    }
    let star = lowest_argmin(truth);
    let t_min = truth[star];
    let high = params.l() * params.c() * t_min;
    let bids: Vec<T> = truth
        .iter()
        .enumerate()
        .map(|(k, &t)| if k == star { t_min } else { high.max(t) })
        .collect();
    CostMatrix::from_column(&bids)
}

/// Per-task analytic equilibrium for a multi-task instance, the
/// lowest-index fastest machine of each column being its low bidder.
pub fn analytic_equilibrium_per_task<T: Scalar>(
    truth: &CostMatrix<T>,
    params: &AlgParams<T>,
) -> Result<CostMatrix<T>> {
    let mut out = truth.clone();
    for j in 0..truth.m() {
        let col = analytic_equilibrium_single_task(&truth.column(j), params)?;
        for i in 0..truth.n() {
            out.set(i, j, col.get(i, 0));
        }
    }
    Ok(out)
}

fn lowest_argmin<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Structural properties every single-task equilibrium of `A_{L,c}` has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClaimReport {
    /// Second smallest bid is at least `c` times the smallest.
    pub bids_separated: bool,
    /// No machine above the minimum declares below its true time.
    pub no_underbid: bool,
    /// Exactly one machine makes the smallest declaration.
    pub unique_min_bidder: bool,
    /// The smallest bid equals `min(t_i, t_sec / c)` (within a grid step).
    pub min_bid_formula: bool,
    /// The smallest bidder has the smallest true time.
    pub true_order_preserved: bool,
}

impl ClaimReport {
    pub fn entries(&self) -> [(&'static str, bool); 5] {
        [
            ("bids_separated", self.bids_separated),
            ("no_underbid", self.no_underbid),
            ("unique_min_bidder", self.unique_min_bidder),
            ("min_bid_formula", self.min_bid_formula),
            ("true_order_preserved", self.true_order_preserved),
        ]
    }

    pub fn all_hold(&self) -> bool {
        self.entries().iter().all(|(_, ok)| *ok)
    }
}

/// Evaluates the equilibrium-structure predicates on a single-task profile.
///
/// The min-bid formula is an equality; it is accepted when the bid lies
/// within one multiplicative `grid_step` of its target. The other
/// predicates are inequalities compared up to rounding.
pub fn claim_predicates<T: Scalar>(
    profile: &[T],
    truth: &[T],
    params: &AlgParams<T>,
    grid_step: T,
) -> Result<ClaimReport> {
    if profile.len() != truth.len() {
        return Err(Error::dims((truth.len(), 1), (profile.len(), 1)));
    }
    let stats = min_sec_stats(profile)?;
    let not_below = |a: T, b: T| !rel_lt(a, b);

    let bids_separated = !stats.sec.is_empty() && not_below(stats.t_sec, params.c() * stats.t_min);
    let no_underbid = (0..profile.len())
        .filter(|i| !stats.min.contains(i))
        .all(|i| not_below(profile[i], truth[i]));
    let unique_min_bidder = stats.n_min() == 1;

    let star = stats.min[0];
    let target = truth[star].min(stats.t_sec / params.c());
    let step = grid_step.max(T::one());
    let min_bid_formula = if stats.sec.is_empty() {
        false
    } else {
        let ratio = stats.t_min / target;
        not_below(ratio, step.recip()) && not_below(step, ratio)
    };
    let true_order_preserved = stats
        .min
        .iter()
        .all(|&i| truth.iter().all(|&t| not_below(t, truth[i])));

    Ok(ClaimReport {
        bids_separated,
        no_underbid,
        unique_min_bidder,
        min_bid_formula,
        true_order_preserved,
    })
}

/// Greedy equilibrium where task `j` goes to `designated[j]`, which bids its
/// true time `T_j`; every other machine draws a bid from
/// `F_j(x) = 1 - (T_j / x)^(1/(n-1))` on `[T_j, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedGreedyProfile<T> {
    pub n: usize,
    pub designated: Vec<usize>,
    pub bids: Vec<T>,
}

impl<T: Scalar> MixedGreedyProfile<T> {
    pub fn cdf(&self, task: usize, x: T) -> T {
        let t = self.bids[task];
        if self.n < 2 || x < t {
            return if self.n < 2 && x >= t { T::one() } else { T::zero() };
        }
        T::one() - (t / x).powf(T::from_count(self.n - 1).recip())
    }

    /// Inverse transform of `u` in `(0, 1)`; always strictly above `T_j`.
    pub fn opponent_bid(&self, task: usize, u: T) -> T {
        let t = self.bids[task];
        let x = t * u.powi(-((self.n - 1) as i32));
        let floor = t + t * T::epsilon() * T::lit(2.0);
        x.max(floor)
    }

    /// Realised greedy outcome: the designated assignment.
    pub fn makespan(&self, truth: &CostMatrix<T>) -> Result<T> {
        assignment_makespan(truth, &self.designated)
    }
}

pub fn greedy_mixed_profile<T: Scalar>(
    truth: &CostMatrix<T>,
    assignment: &[usize],
) -> Result<MixedGreedyProfile<T>> {
    if assignment.len() != truth.m() {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} tasks, instance has {}",
            assignment.len(),
            truth.m()
        )));
    }
    if let Some((j, &i)) = assignment.iter().enumerate().find(|(_, &i)| i >= truth.n()) {
        return Err(Error::InvalidInput(format!("task {j} assigned to unknown machine {i}")));
    }
    Ok(MixedGreedyProfile {
        n: truth.n(),
        designated: assignment.to_vec(),
        bids: assignment
            .iter()
            .enumerate()
            .map(|(j, &i)| truth.get(i, j))
            .collect(),
    })
}

/// Probability that a deterministic bid `x_star > T` is the smallest against
/// `n - 1` opponents drawing from `F`, and the resulting expected cost.
pub fn greedy_deviation_value<T: Scalar>(t: T, x_star: T, n: usize) -> Result<(T, T)> {
    if n < 2 {
        return Err(Error::Domain("needs at least two machines".into()));
    }
    if !(t > T::zero()) || !(x_star > t) || !x_star.is_finite() {
        return Err(Error::Domain(format!("requires x* > T > 0, got T = {t}, x* = {x_star}")));
    }
    let survive = (t / x_star).powf(T::from_count(n - 1).recip());
    let p = survive.powi((n - 1) as i32);
    Ok((p, x_star * p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationCheck<T> {
    pub task: usize,
    pub machine: usize,
    pub deviation: T,
    /// `T / x*` above `T_j`, `1` at or below it.
    pub analytic_probability: T,
    pub mc_probability: T,
    pub stderr: T,
    pub analytic_cost: T,
    pub mc_cost: T,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosCertificate<T> {
    pub profile: MixedGreedyProfile<T>,
    pub samples: usize,
    pub seed: u64,
    /// Samples on which greedy realised exactly the designated assignment.
    pub realized_matches: usize,
    pub deviations: Vec<DeviationCheck<T>>,
    /// Kolmogorov-Smirnov distance between one opponent's draws and `F_j`.
    pub ks_distance: Vec<T>,
    pub makespan: T,
    pub optimum: Option<T>,
    pub passed: bool,
}

/// Kolmogorov-Smirnov statistic of `draws` against `cdf`.
pub fn ks_distance<T: Scalar>(mut draws: Vec<T>, cdf: impl Fn(T) -> T) -> T {
    draws.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let n = T::from_count(draws.len());
    draws
        .iter()
        .enumerate()
        .fold(T::zero(), |d, (k, &x)| {
            let f = cdf(x);
            let above = T::from_count(k + 1) / n - f;
            let below = f - T::from_count(k) / n;
            d.max(above).max(below)
        })
}

fn greedy_wins<T: Scalar>(machine: usize, bid: T, opponents: &[(usize, T)]) -> bool {
    opponents
        .iter()
        .all(|&(k, x)| bid < x || (bid == x && machine < k))
}

/// Monte Carlo certificate that the mixed profile for `assignment` is an
/// equilibrium of greedy.
///
/// Checks that sampled opponents never undercut the designated bids, that
/// for every grid deviation `x* > T_j` the empirical winning probability of
/// the designated machine is within four standard errors of `T_j / x*`, and
/// that deviations at or below `T_j` still cost `T_j`.
pub fn pos_certificate<T: Scalar>(
    truth: &CostMatrix<T>,
    assignment: &[usize],
    samples: usize,
    seed: u64,
    deviation_grid: &BidGrid<T>,
    eps: T,
) -> Result<PosCertificate<T>> {
    let (n, m) = truth.dims();
    if n < 2 {
        return Err(Error::Domain("the mixed construction needs n >= 2".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be >= 1".into()));
    }
    if deviation_grid.dims() != truth.dims() {
        return Err(Error::dims(truth.dims(), deviation_grid.dims()));
    }
    let draws = (samples as u128) * (m as u128) * (n as u128 - 1);
    if draws > DRAW_CAP {
        return Err(Error::Capacity {
            required: draws,
            cap: DRAW_CAP,
            hint: "lower --samples",
        });
    }
    let profile = greedy_mixed_profile(truth, assignment)?;
    if let Some(j) = profile.bids.iter().position(|&t| !(t > T::zero())) {
        return Err(Error::Domain(format!("designated time for task {j} must be positive")));
    }

    let deviations: Vec<(usize, T)> = (0..m)
        .flat_map(|j| {
            deviation_grid
                .candidates(assignment[j], j)
                .iter()
                .map(move |&x| (j, x))
        })
        .collect();

    struct Tally<T> {
        realized: usize,
        wins: Vec<usize>,
        first_opponent: Vec<Vec<T>>,
    }

    let sample_one = |s: u64, tally: &mut Tally<T>| {
        let mut rng = sample_rng(seed, s);
        let mut all_match = true;
        let mut opponents: Vec<Vec<(usize, T)>> = Vec::with_capacity(m);
        for (j, &star) in assignment.iter().enumerate() {
            let mut col = Vec::with_capacity(n - 1);
            for k in (0..n).filter(|&k| k != star) {
                let u = T::lit(rng.sample::<f64, _>(Open01));
                col.push((k, profile.opponent_bid(j, u)));
            }
            tally.first_opponent[j].push(col[0].1);
            let mut decl: Vec<T> = vec![T::zero(); n];
            decl[star] = profile.bids[j];
            for &(k, x) in &col {
                decl[k] = x;
            }
            if crate::mechanisms::greedy_single(&decl).map(|p| p[star] != T::one()).unwrap_or(true) {
                all_match = false;
            }
            opponents.push(col);
        }
        if all_match {
            tally.realized += 1;
        }
        for (d, &(j, x)) in deviations.iter().enumerate() {
            if greedy_wins(assignment[j], x, &opponents[j]) {
                tally.wins[d] += 1;
            }
        }
    };

    let chunk = 4096usize;
    let chunks = samples.div_ceil(chunk);
    let parts: Vec<Tally<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = Tally {
                realized: 0,
                wins: vec![0; deviations.len()],
                first_opponent: vec![Vec::new(); m],
            };
            for s in c * chunk..((c + 1) * chunk).min(samples) {
                sample_one(s as u64, &mut tally);
            }
            tally
        })
        .collect();

    let mut realized = 0;
    let mut wins = vec![0usize; deviations.len()];
    let mut first_opponent: Vec<Vec<T>> = vec![Vec::with_capacity(samples); m];
    for part in parts {
        realized += part.realized;
        for (w, p) in wins.iter_mut().zip(&part.wins) {
            *w += p;
        }
        for (dst, src) in first_opponent.iter_mut().zip(part.first_opponent) {
            dst.extend(src);
        }
    }

    let ns = T::from_count(samples);
    let mut checks = Vec::with_capacity(deviations.len());
    for (d, &(j, x)) in deviations.iter().enumerate() {
        let star = assignment[j];
        let t = profile.bids[j];
        let mc_p = T::from_count(wins[d]) / ns;
        let realized_cost = x.max(truth.get(star, j));
        let check = if x > t && !approx_eq(x, t) {
            let (p, cost) = greedy_deviation_value(t, x, n)?;
            let se = (p * (T::one() - p) / ns).sqrt();
            DeviationCheck {
                task: j,
                machine: star,
                deviation: x,
                analytic_probability: p,
                mc_probability: mc_p,
                stderr: se,
                analytic_cost: cost,
                mc_cost: mc_p * realized_cost,
                passed: (mc_p - p).abs() <= T::lit(4.0) * se && cost >= t - eps,
            }
        } else {
            DeviationCheck {
                task: j,
                machine: star,
                deviation: x,
                analytic_probability: T::one(),
                mc_probability: mc_p,
                stderr: T::zero(),
                analytic_cost: realized_cost,
                mc_cost: mc_p * realized_cost,
                passed: realized_cost >= t - eps && wins[d] == samples,
            }
        };
        checks.push(check);
    }

    let ks: Vec<T> = first_opponent
        .into_iter()
        .enumerate()
        .map(|(j, draws)| ks_distance(draws, |x| profile.cdf(j, x)))
        .collect();

    let makespan = profile.makespan(truth)?;
    let optimum = optimal_integral_makespan(truth).ok().map(|(v, _)| v);
    let passed = realized == samples && checks.iter().all(|c| c.passed);
    Ok(PosCertificate {
        profile,
        samples,
        seed,
        realized_matches: realized,
        deviations: checks,
        ks_distance: ks,
        makespan,
        optimum,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{threshold_grid, Mechanism};

    fn col(v: &[f64]) -> CostMatrix<f64> {
        CostMatrix::from_column(v).unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = build_grid(&col(&[1.0]), 2.0, 1, &[]).unwrap();
        assert_eq!(g.candidates(0, 0), &[0.5, 1.0, 2.0]);

        let g = build_grid(&col(&[1.0, 2.0]), 2.0, 1, &[5.0]).unwrap();
        assert_eq!(g.candidates(0, 0), &[0.5, 1.0, 2.0, 5.0]);
        assert_eq!(g.candidates(1, 0), &[1.0, 2.0, 4.0, 5.0]);

        assert!(build_grid(&col(&[1.0]), 1.0, 1, &[]).is_err());
        assert!(build_grid(&col(&[0.0]), 2.0, 1, &[]).is_err());
    }

    #[test]
    fn oversized_span_is_a_capacity_error() {
        let err = build_grid(&col(&[1.0]), 1.25, 5000, &[]).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn grid_rows_in_mixed_radix() {
        let truth = CostMatrix::new(vec![vec![1.0, 10.0]]).unwrap();
        let g = build_grid(&truth, 2.0, 1, &[]).unwrap();
        assert_eq!(g.row_count(0), 9);
        assert_eq!(g.row(0, 0), vec![0.5, 5.0]);
        assert_eq!(g.row(0, 1), vec![0.5, 10.0]);
        assert_eq!(g.row(0, 3), vec![1.0, 5.0]);
        assert_eq!(g.profile_count(), 9);
    }

    fn a4() -> Mechanism<f64> {
        Mechanism::PerTask(SingleTaskRule::Alg2(AlgParams::new(4.0, 1.25, 2).unwrap()))
    }

    #[test]
    fn analytic_profile_has_no_regret() {
        let truth = col(&[1.0, 2.0]);
        let grid = build_grid(&truth, 1.25, 12, &[1.25, 5.0]).unwrap();
        let profile = col(&[1.0, 5.0]);
        for i in 0..2 {
            let r = best_response_regret(&a4(), &truth, &profile, i, &grid).unwrap();
            assert!(r.regret <= 1e-9, "machine {i}: {r:?}");
        }
        assert!(is_pure_equilibrium(&a4(), &truth, &profile, &grid, 1e-9).unwrap());
    }

    #[test]
    fn close_bids_are_not_an_equilibrium() {
        let truth = col(&[1.0, 2.0]);
        let grid = build_grid(&truth, 1.25, 12, &[1.25, 5.0]).unwrap();
        let profile = col(&[1.0, 1.5]);
        let r = best_response_regret(&a4(), &truth, &profile, 1, &grid).unwrap();
        assert!(r.regret > 0.0);
        assert!(r.best_deviation[0] >= 1.25);
        assert!(!is_pure_equilibrium(&a4(), &truth, &profile, &grid, 1e-9).unwrap());
    }

    #[test]
    fn single_machine_regret_is_overbid_amount() {
        let truth = col(&[2.0]);
        let grid = build_grid(&truth, 2.0, 2, &[]).unwrap();
        let greedy = SingleTaskRule::Greedy;
        let at_truth = best_response_regret(&greedy, &truth, &col(&[2.0]), 0, &grid).unwrap();
        assert_eq!(at_truth.regret, 0.0);
        let under = best_response_regret(&greedy, &truth, &col(&[0.5]), 0, &grid).unwrap();
        assert_eq!(under.regret, 0.0);
        let over = best_response_regret(&greedy, &truth, &col(&[8.0]), 0, &grid).unwrap();
        assert_eq!(over.regret, 6.0);

        let set = enumerate_pure_equilibria(&greedy, &truth, &grid, 1e-9).unwrap();
        let bids: Vec<f64> = set.entries.iter().map(|e| e.profile.get(0, 0)).collect();
        assert_eq!(bids, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn per_task_and_full_row_regret_agree() {
        let truth = CostMatrix::<f64>::new(vec![vec![1.0, 2.0], vec![1.5, 1.0]]).unwrap();
        let params = AlgParams::new(4.0, 1.25, 2).unwrap();
        let rule = Mechanism::PerTask(SingleTaskRule::Alg2(params));
        let grid = threshold_grid(&truth, &params, 1.5, 3).unwrap();
        let profile = CostMatrix::new(vec![vec![1.0, 2.5], vec![2.0, 1.0]]).unwrap();
        for i in 0..2 {
            let fast = best_response_regret(&rule, &truth, &profile, i, &grid).unwrap();
            let slow = best_response_regret_full_rows(&rule, &truth, &profile, i, &grid).unwrap();
            assert!((fast.regret - slow.regret).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_finds_the_analytic_equilibrium() {
        let truth = col(&[1.0, 2.0]);
        let params = AlgParams::new(4.0, 1.25, 2).unwrap();
        let grid = threshold_grid(&truth, &params, 1.25, 12).unwrap();
        let set = enumerate_pure_equilibria(&a4(), &truth, &grid, 1e-9).unwrap();
        assert!(!set.is_empty());
        assert!(set.contains(&col(&[1.0, 5.0])));
        for e in &set.entries {
            let claims = claim_predicates(&e.profile.column(0), &truth.column(0), &params, 1.25).unwrap();
            assert!(claims.all_hold(), "{:?} {claims:?}", e.profile);
        }
        let poa = poa_from_set(&set, &truth).unwrap();
        assert!(poa.ratio <= 1.25 + 1e-12);
        assert!(poa.ratio >= 1.0 - 1e-12);
    }

    #[test]
    fn greedy_equilibria_on_small_grid() {
        let truth = col(&[1.0, 2.0]);
        let grid = BidGrid::from_candidates(vec![vec![vec![1.0, 2.0, 4.0]], vec![vec![1.0, 2.0, 4.0]]])
            .unwrap();
        let set = enumerate_pure_equilibria(&SingleTaskRule::Greedy, &truth, &grid, 1e-9).unwrap();
        assert!(!set.is_empty());
        // machine 1 at the top of the grid leaves machine 0 no escape
        assert!(set.contains(&col(&[1.0, 4.0])));
        let poa = poa_from_set(&set, &truth).unwrap();
        assert!(poa.best_ratio >= 1.0);

        let ones = col(&[1.0, 1.0]);
        let g = BidGrid::from_candidates(vec![vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0]]]).unwrap();
        let poa = pure_poa(&SingleTaskRule::Greedy, &ones, &g, 1e-9).unwrap();
        assert!(poa.ratio >= 1.0);
    }

    #[test]
    fn empty_set_is_an_analysis_error() {
        let set = EquilibriumSet::<f64> {
            entries: vec![],
            eps: 1e-9,
            profiles_checked: 4,
        };
        let err = poa_from_set(&set, &col(&[1.0, 2.0])).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Analysis);
    }

    #[test]
    fn enumeration_respects_cap() {
        let truth = CostMatrix::from_fn(3, 3, |_, _| 1.0).unwrap();
        let grid = build_grid(&truth, 1.25, 12, &[]).unwrap();
        let err = enumerate_pure_equilibria(&SingleTaskRule::Greedy, &truth, &grid, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn analytic_profiles() {
        let p = AlgParams::new(4.0, 1.25, 2).unwrap();
        assert_eq!(analytic_equilibrium_single_task(&[1.0, 2.0], &p).unwrap(), col(&[1.0, 5.0]));
        assert_eq!(analytic_equilibrium_single_task(&[1.0, 100.0], &p).unwrap(), col(&[1.0, 100.0]));
        let p3 = AlgParams::new(10.0, 2.0, 3).unwrap();
        assert_eq!(
            analytic_equilibrium_single_task(&[3.0, 3.0, 3.0], &p3).unwrap(),
            col(&[3.0, 60.0, 60.0])
        );
        assert!(analytic_equilibrium_single_task(&[1.0], &p).is_err());
    }

    #[test]
    fn claim_examples() {
        let p = AlgParams::new(4.0, 1.25, 2).unwrap();
        let c = claim_predicates(&[1.0, 5.0], &[1.0, 2.0], &p, 1.25).unwrap();
        assert!(c.all_hold());
        let c = claim_predicates(&[1.0, 1.1], &[1.0, 2.0], &p, 1.25).unwrap();
        assert!(!c.bids_separated);
        let c = claim_predicates(&[1.0, 1.0], &[1.0, 2.0], &p, 1.25).unwrap();
        assert!(!c.unique_min_bidder);
        // slow machine bidding low: order predicate fails
        let c = claim_predicates(&[5.0, 1.0], &[1.0, 2.0], &p, 1.25).unwrap();
        assert!(!c.true_order_preserved);
        // bid far below min(t_i, t_sec/c)
        let c = claim_predicates(&[0.3, 5.0], &[1.0, 2.0], &p, 1.25).unwrap();
        assert!(!c.min_bid_formula);
    }

    #[test]
    fn mixed_profile_construction() {
        let truth = col(&[5.0, 2.0, 9.0]);
        let prof = greedy_mixed_profile(&truth, &[1]).unwrap();
        assert_eq!(prof.designated, vec![1]);
        assert_eq!(prof.bids, vec![2.0]);
        assert_eq!(prof.cdf(0, 2.0), 0.0);
        assert!((prof.cdf(0, 8.0) - 0.5).abs() < 1e-12);
        assert!(prof.cdf(0, 1e12) > 0.999);

        let single = greedy_mixed_profile(&col(&[3.0]), &[0]).unwrap();
        assert_eq!(single.bids, vec![3.0]);
        assert_eq!(single.cdf(0, 3.0), 1.0);

        assert!(greedy_mixed_profile(&truth, &[3]).is_err());
        assert!(greedy_mixed_profile(&truth, &[0, 1]).is_err());
    }

    #[test]
    fn sampler_stays_above_designated_bid() {
        let prof = greedy_mixed_profile(&col(&[1.0, 3.0]), &[0]).unwrap();
        let u_max = 1.0 - f64::EPSILON / 2.0;
        assert!(prof.opponent_bid(0, u_max) > 1.0);
        assert_eq!(prof.opponent_bid(0, 0.5), 2.0);
    }

    #[test]
    fn deviation_value_examples() {
        let (p, c) = greedy_deviation_value::<f64>(2.0, 4.0, 3).unwrap();
        assert!((p - 0.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
        let (p, c) = greedy_deviation_value::<f64>(3.0, 6.0, 2).unwrap();
        assert!((p - 0.5).abs() < 1e-12 && (c - 3.0).abs() < 1e-12);
        let (p, c) = greedy_deviation_value::<f64>(1.0, 1.0 + 1e-9, 4).unwrap();
        assert!((p - 1.0).abs() < 1e-8 && (c - 1.0).abs() < 1e-12);
        assert!(greedy_deviation_value::<f64>(2.0, 2.0, 3).is_err());
        assert!(greedy_deviation_value::<f64>(2.0, 3.0, 1).is_err());
    }

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        let draws: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(draws, |x| x) <= 0.0005 + 1e-12);
    }
}
