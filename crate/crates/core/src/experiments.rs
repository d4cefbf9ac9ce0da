//! Lower-bound instance families and runners that measure the quantities
//! the bounds talk about.
//!
//! Every runner returns an [`ExperimentReport`]: measured values (each with
//! the way it was obtained), the claimed values they are compared against,
//! and one verdict per comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::equilibrium::{
    analytic_equilibrium_per_task, analytic_equilibrium_single_task, best_response_regret,
    build_grid, claim_predicates, default_eps, enumerate_pure_equilibria, max_regret,
    pos_certificate, BidGrid,
};
use crate::error::{Error, Result};
use crate::lp::lp_truthfulness_regret;
use crate::mechanisms::{
    per_task_product, threshold_grid, AlgParams, AllocationRule, Mechanism, SingleTaskRule,
};
use crate::model::{
    fractional_makespan, mc_expected_makespan, optimal_integral_makespan, sample_rng, CostMatrix,
};
use crate::scalar::Scalar;

/// One-sided 95% normal quantile used for confidence bounds.
pub const Z_95: f64 = 1.645;

/// Largest admissible equilibrium regret in the reproductions.
pub const REGRET_TOL: f64 = 1e-9;

/// Agreement required between closed forms and their numerical cross-checks.
pub const CLOSED_FORM_TOL: f64 = 1e-12;

/// Agreement required between the k14 closed form and quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// `n x n`; column `k` has time 1 on machines 0 and `k`, `M` elsewhere.
pub fn thm3_instance<T: Scalar>(n: usize, big_m: T) -> Result<CostMatrix<T>> {
    if n < 2 {
        return Err(Error::InvalidParams("needs n >= 2".into()));
    }
    if !(big_m > T::from_count(n * n)) || !big_m.is_finite() {
        return Err(Error::InvalidParams(format!("M = {big_m} must exceed n^2 = {}", n * n)));
    }
    CostMatrix::from_fn(n, n, |i, k| if i == 0 || i == k { T::one() } else { big_m })
}

/// `n x n`; machine 0 has time 1 everywhere, all others `sqrt(n)`.
pub fn appendix_b_instance<T: Scalar>(n: usize) -> Result<CostMatrix<T>> {
    if n < 2 {
        return Err(Error::InvalidParams("needs n >= 2".into()));
    }
    let slow = T::from_count(n).sqrt();
    CostMatrix::from_fn(n, n, |i, _| if i == 0 { T::one() } else { slow })
}

/// `m x m`; `1/M` on the diagonal, 1 elsewhere.
pub fn thm5_instance<T: Scalar>(m: usize, big_m: T) -> Result<CostMatrix<T>> {
    if m < 1 {
        return Err(Error::InvalidParams("needs m >= 1".into()));
    }
    if !(big_m > T::one()) || !big_m.is_finite() {
        return Err(Error::InvalidParams(format!("M = {big_m} must exceed 1")));
    }
    let fast = big_m.recip();
    CostMatrix::from_fn(m, m, |i, j| if i == j { fast } else { T::one() })
}

/// `n x n`; 1 on the diagonal, `M` elsewhere.
pub fn k14_tight_instance<T: Scalar>(n: usize, big_m: T) -> Result<CostMatrix<T>> {
    if n < 1 {
        return Err(Error::InvalidParams("needs n >= 1".into()));
    }
    if !(big_m > T::one()) || !big_m.is_finite() {
        return Err(Error::InvalidParams(format!("M = {big_m} must exceed 1")));
    }
    CostMatrix::from_fn(n, n, |i, j| if i == j { T::one() } else { big_m })
}

/// `M m / (M + m - 1)`.
pub fn proportional_ratio(m: usize, big_m: f64) -> Result<f64> {
    if m < 1 || !(big_m > 1.0) {
        return Err(Error::InvalidParams(format!("needs m >= 1 and M > 1, got m = {m}, M = {big_m}")));
    }
    let m = m as f64;
    Ok(big_m * m / (big_m + m - 1.0))
}

/// Fractional makespan of per-task proportional on [`thm5_instance`],
/// divided by the optimum `1/M`.
pub fn measured_proportional_ratio(m: usize, big_m: f64) -> Result<f64> {
    let inst = thm5_instance(m, big_m)?;
    let alloc = per_task_product(&SingleTaskRule::Proportional, &inst)?;
    Ok(fractional_makespan(&alloc, &inst, &inst)? * big_m)
}

/// `(M/n) [1 - (1 - 1/M)^n]`.
pub fn k14_fast_prob(n: usize, big_m: f64) -> Result<f64> {
    if n < 1 || !(big_m >= 1.0) || !big_m.is_finite() {
        return Err(Error::InvalidParams(format!("needs n >= 1 and M >= 1, got n = {n}, M = {big_m}")));
    }
    if big_m == 1.0 {
        return Ok(1.0 / n as f64);
    }
    let tail = -(n as f64 * (-1.0 / big_m).ln_1p()).exp_m1();
    Ok(big_m / n as f64 * tail)
}

/// `int_0^1 (1 - y/M)^(n-1) dy` by adaptive Simpson quadrature.
pub fn k14_fast_prob_quadrature(n: usize, big_m: f64) -> Result<f64> {
    if n < 1 || !(big_m >= 1.0) || !big_m.is_finite() {
        return Err(Error::InvalidParams(format!("needs n >= 1 and M >= 1, got n = {n}, M = {big_m}")));
    }
    let f = |y: f64| (1.0 - y / big_m).powi(n as i32 - 1);
    Ok(adaptive_simpson(&f, 0.0, 1.0, 1e-14, 48))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

/// How a measured value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    Enumeration,
    MonteCarlo { samples: usize, seed: u64, stderr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measured {
    pub name: String,
    pub value: f64,
    #[serde(flatten)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claimed {
    pub name: String,
    pub value: f64,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Flagged,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub comparison: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    pub measured: Vec<Measured>,
    pub claimed: Vec<Claimed>,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>) -> Self {
        ExperimentReport {
            name: name.into(),
            inputs: BTreeMap::new(),
            measured: Vec::new(),
            claimed: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: f64) -> &mut Self {
        self.inputs.insert(key.to_string(), value);
        self
    }

    pub fn measure(&mut self, name: impl Into<String>, value: f64, method: Method) -> &mut Self {
        self.measured.push(Measured {
            name: name.into(),
            value,
            method,
        });
        self
    }

    pub fn claim(&mut self, name: impl Into<String>, value: f64, reference: &str) -> &mut Self {
        self.claimed.push(Claimed {
            name: name.into(),
            value,
            reference: reference.to_string(),
        });
        self
    }

    pub fn verdict(&mut self, comparison: impl Into<String>, status: Status, detail: String) -> &mut Self {
        self.verdicts.push(Verdict {
            comparison: comparison.into(),
            status,
            detail,
        });
        self
    }

    fn check(&mut self, comparison: impl Into<String>, ok: bool, detail: String) -> &mut Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.verdict(comparison, status, detail)
    }

    /// Worst verdict; `Pass` for a report without comparisons.
    pub fn overall(&self) -> Status {
        self.verdicts.iter().map(|v| v.status).max().unwrap_or(Status::Pass)
    }

    pub fn measured_value(&self, name: &str) -> Option<f64> {
        self.measured.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn claimed_value(&self, name: &str) -> Option<f64> {
        self.claimed.iter().find(|c| c.name == name).map(|c| c.value)
    }

    pub fn verdict_for(&self, comparison: &str) -> Option<Status> {
        self.verdicts
            .iter()
            .find(|v| v.comparison == comparison)
            .map(|v| v.status)
    }

    /// Plain-text rendering for terminals.
    pub fn summary(&self) -> String {
        let mut out = format!("{}: {:?}\n", self.name, self.overall());
        for m in &self.measured {
            let _ = writeln!(out, "  measured {} = {}", m.name, m.value);
        }
        for c in &self.claimed {
            let _ = writeln!(out, "  claimed  {} = {} ({})", c.name, c.value, c.reference);
        }
        for v in &self.verdicts {
            let _ = writeln!(out, "  [{:?}] {}: {}", v.status, v.comparison, v.detail);
        }
        out
    }
}

/// Measured makespan lower bound on the tight k14 instance with `M = n^3`.
pub fn k14_makespan_lower(n: usize) -> Result<ExperimentReport> {
    if n < 2 {
        return Err(Error::InvalidParams("needs n >= 2".into()));
    }
    let mut report = ExperimentReport::new("k14");
    k14_rows(&mut report, n)?;
    Ok(report)
}

fn k14_rows(report: &mut ExperimentReport, n: usize) -> Result<()> {
    let nf = n as f64;
    let big_m = nf.powi(3);
    let p = k14_fast_prob(n, big_m)?;
    let quad = k14_fast_prob_quadrature(n, big_m)?;
    let measured = -(nf * p.ln()).exp_m1() * big_m;
    let claimed = nf * (nf + 1.0) / (2.0 + 3.0 / nf);
    let asymptote = nf * (nf - 1.0) / 2.0;
    let ratio = measured / asymptote;
    let key = |s: &str| format!("n={n}/{s}");

    report.input(&key("M"), big_m);
    report
        .measure(key("fast_prob"), p, Method::ClosedForm)
        .measure(key("fast_prob_quadrature"), quad, Method::Quadrature)
        .measure(key("makespan_lower"), measured, Method::ClosedForm)
        .measure(key("ratio_to_n(n-1)/2"), ratio, Method::ClosedForm)
        .claim(key("makespan_lower"), claimed, "stated lower bound n(n+1)/(2+3/n)")
        .claim(key("ratio_to_n(n-1)/2"), 1.0, "asymptotic order n(n-1)/2");
    report.check(
        key("closed_form_vs_quadrature"),
        (p - quad).abs() <= QUADRATURE_TOL,
        format!("|{p} - {quad}| <= {QUADRATURE_TOL:e}"),
    );
    let status = if measured >= claimed { Status::Pass } else { Status::Flagged };
    report.verdict(
        key("makespan_lower_vs_stated_bound"),
        status,
        format!("measured {measured} vs stated {claimed}"),
    );
    let in_band = (0.95..=1.05).contains(&ratio);
    let status = match (in_band, n >= 50) {
        (true, _) => Status::Pass,
        (false, true) => Status::Fail,
        (false, false) => Status::Flagged,
    };
    report.verdict(
        key("ratio_to_asymptote"),
        status,
        format!("{ratio} within [0.95, 1.05] (enforced for n >= 50)"),
    );
    Ok(())
}

fn threshold_rule<T: Scalar>(params: AlgParams<T>) -> Mechanism<T> {
    if params.n() == 2 {
        Mechanism::PerTask(SingleTaskRule::Alg2(params))
    } else {
        Mechanism::PerTask(SingleTaskRule::AlgN(params))
    }
}

/// Checks that `profile` is a grid equilibrium of the per-task threshold
/// rule on `instance`, then estimates its expected makespan.
pub fn run_multi_task_poa_experiment(
    params: &AlgParams<f64>,
    instance: &CostMatrix<f64>,
    profile: &CostMatrix<f64>,
    grid: &BidGrid<f64>,
    samples: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if profile.dims() != instance.dims() {
        return Err(Error::dims(instance.dims(), profile.dims()));
    }
    if params.n() != instance.n() {
        return Err(Error::InvalidParams(format!(
            "parameters are for n = {}, instance has {} machines",
            params.n(),
            instance.n()
        )));
    }
    let rule = threshold_rule(*params);
    let worst = max_regret(&rule, instance, profile, grid)?;
    let eps = default_eps(instance).max(REGRET_TOL);
    if worst.regret > eps {
        return Err(Error::NotAnEquilibrium {
            machine: worst.machine,
            gain: worst.regret,
            deviation: worst.best_deviation,
        });
    }
    let alloc = rule.allocate(profile)?;
    let est = mc_expected_makespan(&alloc, profile, instance, samples, seed)?;
    let se = est.stderr().unwrap_or(0.0);
    let (opt, _) = optimal_integral_makespan(instance)?;
    let favoured: f64 = alloc.row(0).iter().sum();

    let mut report = ExperimentReport::new("multi_task_poa");
    report
        .input("n", instance.n() as f64)
        .input("m", instance.m() as f64)
        .input("L", params.l())
        .input("c", params.c())
        .input("samples", samples as f64)
        .input("seed", seed as f64);
    let mc = Method::MonteCarlo {
        samples,
        seed,
        stderr: se,
    };
    report
        .measure("max_regret", worst.regret, Method::Enumeration)
        .measure("machine0_expected_tasks", favoured, Method::ClosedForm)
        .measure("expected_makespan", est.value, mc)
        .measure("expected_makespan_lower95", est.value - Z_95 * se, mc)
        .measure("optimal_makespan", opt, Method::Enumeration)
        .measure("ratio", est.value / opt, Method::MonteCarlo { samples, seed, stderr: se / opt })
        .measure("ratio_lower95", (est.value - Z_95 * se) / opt, mc);
    report.check(
        "profile_is_equilibrium",
        true,
        format!("max regret {:.3e} <= {eps:.3e}", worst.regret),
    );
    Ok(report)
}

/// Knobs shared by the named reproductions; `None` picks the default.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOptions {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub big_m: Option<f64>,
    pub l: Option<f64>,
    pub c: Option<f64>,
    pub trials: usize,
    pub samples: usize,
    pub seed: u64,
    pub grid_factor: f64,
    pub grid_span: u32,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            n: None,
            m: None,
            big_m: None,
            l: None,
            c: None,
            trials: 200,
            samples: 100_000,
            seed: 0,
            grid_factor: 1.25,
            grid_span: 12,
        }
    }
}

pub const REPRODUCTIONS: [&str; 8] = ["thm1", "thm2", "thm3", "thm4", "thm5", "thm6", "appendixB", "k14"];

pub fn reproduce(name: &str, opts: &ReproduceOptions) -> Result<ExperimentReport> {
    match name {
        "thm1" => single_task_poa("thm1", 2, opts),
        "thm2" => single_task_poa("thm2", 3, opts),
        "thm3" => thm3(opts),
        "thm4" => lp_truthfulness(opts),
        "thm5" => thm5(opts),
        "thm6" => greedy_stability(opts),
        "appendixB" => appendix_b(opts),
        "k14" => {
            let mut report = ExperimentReport::new("k14");
            match opts.n {
                Some(n) => k14_rows(&mut report, n)?,
                None => {
                    k14_rows(&mut report, 2)?;
                    k14_rows(&mut report, 50)?;
                }
            }
            Ok(report)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown reproduction '{other}'; expected one of {}",
            REPRODUCTIONS.join(", ")
        ))),
    }
}

fn params_from(opts: &ReproduceOptions, n: usize, default_l: f64) -> Result<AlgParams<f64>> {
    let l = opts.l.unwrap_or(default_l);
    match opts.c {
        Some(c) => AlgParams::new(l, c, n),
        None => AlgParams::with_default_c(l, n),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Extra ratio allowed on a grid: one multiplicative grid step on `t_min`,
/// scaled by `1 + 1/L`.
pub fn grid_slack(params: &AlgParams<f64>, factor: f64) -> f64 {
    (factor - 1.0) * (1.0 + 1.0 / params.l())
}

fn single_task_poa(name: &str, n: usize, opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let (truths, param_sets): (Vec<Vec<f64>>, Vec<AlgParams<f64>>) = if n == 2 {
        let params = match (opts.l, opts.c) {
            (None, None) => vec![AlgParams::new(4.0, 1.25, 2)?, AlgParams::new(10.0, 1.1, 2)?],
            _ => vec![params_from(opts, 2, 4.0)?],
        };
        (vec![vec![1.0, 2.0], vec![1.0, 10.0], vec![3.0, 3.0]], params)
    } else {
        (
            vec![vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 5.0]],
            vec![params_from(opts, 3, 10.0)?],
        )
    };

    let mut report = ExperimentReport::new(name);
    report
        .input("n", n as f64)
        .input("grid_factor", opts.grid_factor)
        .input("grid_span", opts.grid_span as f64);
    for params in &param_sets {
        for truth in &truths {
            single_task_case(&mut report, truth, params, opts)?;
        }
    }
    Ok(report)
}

fn single_task_case(
    report: &mut ExperimentReport,
    truth: &[f64],
    params: &AlgParams<f64>,
    opts: &ReproduceOptions,
) -> Result<()> {
    let key = |s: &str| format!("t={};L={};c={}/{s}", fmt_vec(truth), params.l(), params.c());
    let instance = CostMatrix::from_column(truth)?;
    let rule = threshold_rule(*params);
    let grid = threshold_grid(&instance, params, opts.grid_factor, opts.grid_span)?;
    let eps = default_eps(&instance);
    let set = enumerate_pure_equilibria(&rule, &instance, &grid, eps)?;
    let t_min = truth.iter().copied().fold(f64::INFINITY, f64::min);

    let claims_ok = set.entries.iter().try_fold(0usize, |bad, e| {
        let c = claim_predicates(&e.profile.column(0), truth, params, opts.grid_factor)?;
        Ok::<_, Error>(bad + usize::from(!c.all_hold()))
    })?;
    let bound = params.poa_bound();
    let slack = grid_slack(params, opts.grid_factor);
    let worst = set.worst().map_or(f64::NAN, |w| w.makespan / t_min);

    let analytic = analytic_equilibrium_single_task(truth, params)?;
    let analytic_regret = (0..truth.len())
        .map(|i| best_response_regret(&rule, &instance, &analytic, i, &grid).map(|r| r.regret))
        .try_fold(f64::NEG_INFINITY, |acc, r| r.map(|r| acc.max(r)))?;

    report
        .measure(key("equilibria"), set.len() as f64, Method::Enumeration)
        .measure(key("claim_violations"), claims_ok as f64, Method::Enumeration)
        .measure(key("worst_ratio"), worst, Method::Enumeration)
        .measure(key("analytic_profile_regret"), analytic_regret, Method::Enumeration)
        .claim(key("worst_ratio"), bound, "upper bound 1 + (n-1)/L on the equilibrium ratio");
    report.check(
        key("equilibria_exist"),
        !set.is_empty(),
        format!("{} of {} grid profiles", set.len(), set.profiles_checked),
    );
    report.check(
        key("claims_hold"),
        claims_ok == 0,
        format!("{claims_ok} equilibria violate a structural predicate"),
    );
    report.check(
        key("worst_ratio_within_bound"),
        worst <= bound + slack,
        format!("{worst} <= {bound} + grid slack {slack}"),
    );
    report.check(
        key("analytic_profile_is_equilibrium"),
        analytic_regret <= REGRET_TOL,
        format!("regret {analytic_regret:.3e} at {}", fmt_vec(&analytic.column(0))),
    );
    Ok(())
}

fn poa_lower_bound_case(
    name: &str,
    instance: CostMatrix<f64>,
    params: AlgParams<f64>,
    threshold: f64,
    threshold_ref: &str,
    opts: &ReproduceOptions,
) -> Result<ExperimentReport> {
    let profile = analytic_equilibrium_per_task(&instance, &params)?;
    let grid = threshold_grid(&instance, &params, opts.grid_factor, opts.grid_span)?;
    let mut report = match run_multi_task_poa_experiment(&params, &instance, &profile, &grid, opts.samples, opts.seed) {
        Ok(r) => r,
        Err(Error::NotAnEquilibrium { machine, gain, .. }) => {
            let mut r = ExperimentReport::new(name);
            r.check(
                "profile_is_equilibrium",
                false,
                format!("machine {machine} gains {gain}"),
            );
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    report.name = name.to_string();
    let lower = report.measured_value("ratio_lower95").unwrap_or(f64::NAN);
    report.claim("ratio", threshold, threshold_ref);
    report.check(
        "ratio_lower95_above_threshold",
        lower >= threshold,
        format!("95% lower confidence bound {lower} >= {threshold}"),
    );
    Ok(report)
}

fn thm3(opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let n = opts.n.unwrap_or(4);
    let big_m = opts.big_m.unwrap_or(20.0);
    let params = params_from(opts, n, 100.0)?;
    let instance = thm3_instance(n, big_m)?;
    let mut report = poa_lower_bound_case(
        "thm3",
        instance,
        params,
        n as f64 / 2.0,
        "lower bound n/2 on the ratio",
        opts,
    )?;
    report.input("M", big_m);
    Ok(report)
}

fn appendix_b(opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let n = opts.n.unwrap_or(4);
    let params = params_from(opts, n, 100.0)?;
    let instance = appendix_b_instance(n)?;
    let threshold = 0.9 * (n as f64).sqrt() / 2.0;
    poa_lower_bound_case(
        "appendixB",
        instance,
        params,
        threshold,
        "0.9 of the sqrt(n)/2 lower bound on the ratio",
        opts,
    )
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// One seeded random instance for the LP truthfulness sweep: returns the
/// truth and the other machines' declarations.
pub fn random_lp_trial(seed: u64, trial: u64) -> Result<(CostMatrix<f64>, CostMatrix<f64>)> {
    let mut rng = sample_rng(seed, trial);
    let n = rng.random_range(1..=4usize);
    let m = rng.random_range(1..=4usize);
    let truth = CostMatrix::from_fn(n, m, |_, _| log_uniform(&mut rng, 0.1, 10.0))?;
    let decl = CostMatrix::from_fn(n, m, |_, _| log_uniform(&mut rng, 0.1, 10.0))?;
    Ok((truth, decl))
}

fn lp_truthfulness(opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let (factor, span) = (1.5, 4);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_trial = 0;
    for trial in 0..opts.trials as u64 {
        let (truth, decl) = random_lp_trial(opts.seed, trial)?;
        let grid = build_grid(&truth, factor, span, &[])?;
        for i in 0..truth.n() {
            let r = lp_truthfulness_regret(&truth, &decl, i, &grid)?;
            if r > worst {
                worst = r;
                worst_trial = trial;
            }
        }
    }
    let mut report = ExperimentReport::new("thm4");
    report
        .input("trials", opts.trials as f64)
        .input("seed", opts.seed as f64)
        .input("grid_factor", factor)
        .input("grid_span", span as f64)
        .measure("max_regret", worst, Method::Enumeration)
        .claim("max_regret", 0.0, "truthful reporting is a dominant strategy");
    report.check(
        "max_regret_nonpositive",
        worst <= REGRET_TOL,
        format!("max regret {worst:.3e} (trial {worst_trial}) <= {REGRET_TOL:e}"),
    );
    Ok(report)
}

fn thm5(opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let m = opts.m.unwrap_or(3);
    let big_m = opts.big_m.unwrap_or(10.0);
    let closed = proportional_ratio(m, big_m)?;
    let measured = measured_proportional_ratio(m, big_m)?;
    let mut report = ExperimentReport::new("thm5");
    report
        .input("m", m as f64)
        .input("M", big_m)
        .measure("ratio", measured, Method::Enumeration)
        .measure("ratio_closed_form", closed, Method::ClosedForm)
        .claim("ratio", closed, "Mm/(M+m-1) for proportional on the diagonal instance");
    report.check(
        "measured_matches_closed_form",
        (measured - closed).abs() <= CLOSED_FORM_TOL * closed.max(1.0),
        format!("|{measured} - {closed}|"),
    );
    Ok(report)
}

fn greedy_stability(opts: &ReproduceOptions) -> Result<ExperimentReport> {
    let cases = [
        ("single", CostMatrix::from_column(&[1.0, 3.0])?, vec![0]),
        ("diagonal", thm5_instance(3, 10.0)?, vec![0, 1, 2]),
    ];
    let mut report = ExperimentReport::new("thm6");
    report
        .input("samples", opts.samples as f64)
        .input("seed", opts.seed as f64);
    for (label, truth, assignment) in cases {
        let grid = deviation_grid(&truth, &assignment, &[1.5, 2.0, 4.0])?;
        let cert = pos_certificate(&truth, &assignment, opts.samples, opts.seed, &grid, default_eps(&truth))?;
        let key = |s: &str| format!("{label}/{s}");
        let max_z = cert
            .deviations
            .iter()
            .filter(|d| d.stderr > 0.0)
            .map(|d| (d.mc_probability - d.analytic_probability).abs() / d.stderr)
            .fold(0.0, f64::max);
        let max_cost_gap = cert
            .deviations
            .iter()
            .map(|d| (d.analytic_cost - cert.profile.bids[d.task]).abs())
            .fold(0.0, f64::max);
        let ks = cert.ks_distance.iter().copied().fold(0.0, f64::max);
        let mc = Method::MonteCarlo {
            samples: opts.samples,
            seed: opts.seed,
            stderr: 0.0,
        };
        report
            .measure(key("realized_matches"), cert.realized_matches as f64, mc)
            .measure(key("max_deviation_z"), max_z, mc)
            .measure(key("max_deviation_cost_gap"), max_cost_gap, Method::ClosedForm)
            .measure(key("max_ks_distance"), ks, mc)
            .measure(key("makespan"), cert.makespan, Method::ClosedForm);
        if let Some(opt) = cert.optimum {
            report
                .measure(key("optimal_makespan"), opt, Method::Enumeration)
                .measure(key("ratio"), cert.makespan / opt, Method::ClosedForm);
        }
        report.check(
            key("certificate"),
            cert.passed,
            format!(
                "{} of {} samples realise the assignment; max |z| {max_z:.3}",
                cert.realized_matches, cert.samples
            ),
        );
        report.check(
            key("deviation_cost_equals_T"),
            max_cost_gap <= CLOSED_FORM_TOL,
            format!("max |cost - T| = {max_cost_gap:.3e}"),
        );
        if label == "diagonal" {
            let ratio = cert.optimum.map_or(f64::NAN, |o| cert.makespan / o);
            report.claim(key("ratio"), 1.0, "the mixed equilibrium realises the optimum");
            report.check(
                key("ratio_is_one"),
                (ratio - 1.0).abs() <= CLOSED_FORM_TOL,
                format!("ratio {ratio}"),
            );
        }
    }
    Ok(report)
}

/// Grid whose cells hold `T_j * f` for every factor (the designated time of
/// each task, the same for every machine).
pub fn deviation_grid(truth: &CostMatrix<f64>, assignment: &[usize], factors: &[f64]) -> Result<BidGrid<f64>> {
    if assignment.len() != truth.m() {
        return Err(Error::InvalidInput("assignment must cover every task".into()));
    }
    if let Some(&i) = assignment.iter().find(|&&i| i >= truth.n()) {
        return Err(Error::InvalidInput(format!("unknown machine {i} in assignment")));
    }
    let cells = (0..truth.n())
        .map(|_| {
            (0..truth.m())
                .map(|j| {
                    let t = truth.get(assignment[j], j);
                    factors.iter().map(|f| t * f).collect()
                })
                .collect()
        })
        .collect();
    BidGrid::from_candidates(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators() {
        let t = thm3_instance(3, 10.0).unwrap();
        assert_eq!(
            t.to_rows(),
            vec![vec![1.0, 1.0, 1.0], vec![10.0, 1.0, 10.0], vec![10.0, 10.0, 1.0]]
        );
        assert_eq!(thm3_instance(2, 5.0).unwrap().to_rows(), vec![vec![1.0, 1.0], vec![5.0, 1.0]]);
        assert!(thm3_instance(3, 9.0).is_err());

        let b = appendix_b_instance::<f64>(4).unwrap();
        assert_eq!(b.row(0), &[1.0; 4]);
        assert_eq!(b.row(3), &[2.0; 4]);

        let d = thm5_instance(3, 10.0).unwrap();
        assert_eq!(d.get(1, 1), 0.1);
        assert_eq!(d.get(0, 2), 1.0);
        assert!(thm5_instance(3, 1.0).is_err());

        assert_eq!(k14_tight_instance(2, 8.0).unwrap().to_rows(), vec![vec![1.0, 8.0], vec![8.0, 1.0]]);
    }

    #[test]
    fn optimal_makespans_of_generators() {
        assert_eq!(optimal_integral_makespan(&thm3_instance(3, 10.0).unwrap()).unwrap().0, 1.0);
        assert_eq!(optimal_integral_makespan(&appendix_b_instance::<f64>(4).unwrap()).unwrap().0, 2.0);
        assert_eq!(optimal_integral_makespan(&k14_tight_instance(3, 27.0).unwrap()).unwrap().0, 1.0);
    }

    #[test]
    fn proportional_ratios() {
        assert!((proportional_ratio(3, 10.0).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(proportional_ratio(1, 7.0).unwrap(), 1.0);
        let r = proportional_ratio(4, 1e6).unwrap();
        assert!((r - 4e6 / (1e6 + 3.0)).abs() < 1e-15);
        assert!((r - 4.0).abs() / 4.0 < 1e-5);
        for m in [1, 2, 3, 5] {
            let a = proportional_ratio(m, 10.0).unwrap();
            let b = measured_proportional_ratio(m, 10.0).unwrap();
            assert!((a - b).abs() <= 1e-12, "m = {m}: {a} vs {b}");
        }
    }

    #[test]
    fn fast_probabilities() {
        assert_eq!(k14_fast_prob(1, 5.0).unwrap(), 1.0);
        assert!((k14_fast_prob(2, 8.0).unwrap() - 15.0 / 16.0).abs() < 1e-15);
        let expected = 9.0 * (1.0 - (26.0f64 / 27.0).powi(3));
        assert!((k14_fast_prob(3, 27.0).unwrap() - expected).abs() < 1e-14);
        for n in [1, 2, 7, 50, 100] {
            let m = (n as f64).powi(3).max(2.0);
            let a = k14_fast_prob(n, m).unwrap();
            let b = k14_fast_prob_quadrature(n, m).unwrap();
            assert!((a - b).abs() <= 1e-10, "n = {n}");
        }
    }

    #[test]
    fn k14_small_case_is_flagged() {
        let r = k14_makespan_lower(2).unwrap();
        assert!((r.measured_value("n=2/makespan_lower").unwrap() - 31.0 / 32.0).abs() < 1e-14);
        assert!((r.claimed_value("n=2/makespan_lower").unwrap() - 12.0 / 7.0).abs() < 1e-14);
        assert_eq!(r.verdict_for("n=2/makespan_lower_vs_stated_bound"), Some(Status::Flagged));
        assert_eq!(r.overall(), Status::Flagged);
    }

    #[test]
    fn unknown_reproduction() {
        let err = reproduce("thm9", &ReproduceOptions::default()).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Input);
    }

    #[test]
    fn thm5_reproduction_matches() {
        let opts = ReproduceOptions {
            m: Some(3),
            big_m: Some(10.0),
            ..Default::default()
        };
        let r = reproduce("thm5", &opts).unwrap();
        assert!((r.measured_value("ratio").unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(r.overall(), Status::Pass);
    }

    #[test]
    fn non_equilibrium_profile_is_rejected() {
        let params = AlgParams::new(8.0, 2.0, 2).unwrap();
        let instance = CostMatrix::from_column(&[1.0, 2.0]).unwrap();
        let grid = threshold_grid(&instance, &params, 1.25, 6).unwrap();
        let profile = CostMatrix::from_column(&[1.0, 1.1]).unwrap();
        let err = run_multi_task_poa_experiment(&params, &instance, &profile, &grid, 100, 0).unwrap_err();
        assert!(matches!(err, Error::NotAnEquilibrium { .. }));
    }
}
