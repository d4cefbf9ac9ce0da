use anarchy_sched::equilibrium::{poa_from_set, ClaimReport};
use anarchy_sched::experiments::deviation_grid;
use anarchy_sched::mechanisms::threshold_grid;
use anarchy_sched::{
    build_grid, claim_predicates, default_eps, enumerate_pure_equilibria, exact_expected_makespan,
    fractional_makespan, machine_costs, mc_expected_makespan, optimal_integral_makespan,
    pos_certificate, reproduce as run_reproduction, social_welfare, solve_scheduling_lp, AlgParams,
    AllocationMatrix, AllocationRule, BidGrid, CostMatrix, Error, MakespanEstimate, Mechanism,
    ReproduceOptions, Status,
};
use serde::Serialize;

use crate::instance::Instance;
use crate::output::{emit, render};
use crate::{Failure, GridArgs, OutputArgs, PosArgs, ReproduceArgs, RunArgs};

#[derive(Debug, Serialize)]
struct ParamsOut {
    #[serde(rename = "L")]
    l: f64,
    c: f64,
}

impl From<&AlgParams<f64>> for ParamsOut {
    fn from(p: &AlgParams<f64>) -> Self {
        ParamsOut { l: p.l(), c: p.c() }
    }
}

fn alg_params(l: Option<f64>, c: Option<f64>, n: usize) -> Result<AlgParams<f64>, Error> {
    let l = match l {
        Some(l) => l,
        None => AlgParams::<f64>::default_for(n)?.l(),
    };
    match c {
        Some(c) => AlgParams::new(l, c, n),
        None => AlgParams::with_default_c(l, n),
    }
}

fn mechanism(args: &RunArgs, n: usize) -> Result<Mechanism<f64>, Error> {
    let params = match args.mechanism.as_str() {
        "alg2" | "algN" | "algn" => Some(alg_params(args.l, args.c, n)?),
        _ => None,
    };
    Mechanism::from_name(&args.mechanism, params)
}

fn params_of(mech: &Mechanism<f64>) -> Option<AlgParams<f64>> {
    mech.single_task_rule().and_then(|r| r.params()).copied()
}

fn write(report: &impl Serialize, out: &OutputArgs) -> Result<(), Failure> {
    emit(&render(report, out.output)?, out.out.as_deref())
}

fn eps_for(grid: &GridArgs, truth: &CostMatrix<f64>) -> Result<f64, Failure> {
    match grid.eps {
        Some(e) if !(e >= 0.0 && e.is_finite()) => Err(Failure::input(format!("--eps {e} must be >= 0"))),
        Some(e) => Ok(e),
        None => Ok(default_eps(truth)),
    }
}

/// Exact expectation when the outcome space is small enough, else sampling.
fn expected_makespan(
    alloc: &AllocationMatrix<f64>,
    decl: &CostMatrix<f64>,
    truth: &CostMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<MakespanEstimate<f64>, Error> {
    match exact_expected_makespan(alloc, decl, truth) {
        Err(Error::Capacity { .. }) => mc_expected_makespan(alloc, decl, truth, samples, seed),
        other => other,
    }
}

#[derive(Debug, Serialize)]
struct AllocateReport {
    command: &'static str,
    mechanism: &'static str,
    params: Option<ParamsOut>,
    declared_times: Vec<Vec<f64>>,
    allocation: Vec<Vec<f64>>,
    machine_costs: Vec<f64>,
    social_welfare: f64,
    fractional_makespan: f64,
    expected_makespan: MakespanEstimate<f64>,
    lp_mu: Option<f64>,
}

pub fn allocate(args: &RunArgs) -> Result<(), Failure> {
    let inst = Instance::load(&args.instance)?;
    let mech = mechanism(args, inst.truth.n())?;
    let alloc = mech.allocate(&inst.declared)?;
    let costs = machine_costs(&alloc, &inst.declared, &inst.truth)?;
    let lp_mu = match mech {
        Mechanism::Lp => Some(solve_scheduling_lp(&inst.declared)?.mu),
        Mechanism::PerTask(_) => None,
    };
    let report = AllocateReport {
        command: "allocate",
        mechanism: mech.name(),
        params: params_of(&mech).as_ref().map(ParamsOut::from),
        declared_times: inst.declared.to_rows(),
        allocation: alloc.to_rows(),
        social_welfare: social_welfare(&costs),
        machine_costs: costs.values().to_vec(),
        fractional_makespan: fractional_makespan(&alloc, &inst.declared, &inst.truth)?,
        expected_makespan: expected_makespan(
            &alloc,
            &inst.declared,
            &inst.truth,
            args.sampling.samples,
            args.sampling.seed,
        )?,
        lp_mu,
    };
    write(&report, &args.output)
}

fn grid_for(mech: &Mechanism<f64>, truth: &CostMatrix<f64>, grid: &GridArgs) -> Result<BidGrid<f64>, Error> {
    match params_of(mech) {
        Some(p) => threshold_grid(truth, &p, grid.grid_factor, grid.grid_span),
        None => build_grid(truth, grid.grid_factor, grid.grid_span, &[]),
    }
}

#[derive(Debug, Serialize)]
struct GridOut {
    factor: f64,
    span: u32,
    profiles: u128,
}

#[derive(Debug, Serialize)]
struct EquilibriumOut {
    profile: Vec<Vec<f64>>,
    makespan: f64,
    claims: Option<ClaimReport>,
    claims_hold: Option<bool>,
}

#[derive(Debug, Serialize)]
struct EquilibriaReport {
    command: &'static str,
    mechanism: &'static str,
    params: Option<ParamsOut>,
    grid: GridOut,
    eps: f64,
    count: usize,
    equilibria: Vec<EquilibriumOut>,
}

pub fn equilibria(args: &RunArgs) -> Result<(), Failure> {
    let inst = Instance::load(&args.instance)?;
    let truth = &inst.truth;
    let mech = mechanism(args, truth.n())?;
    let grid = grid_for(&mech, truth, &args.grid)?;
    let eps = eps_for(&args.grid, truth)?;
    let set = enumerate_pure_equilibria(&mech, truth, &grid, eps)?;
    if set.is_empty() {
        return Err(Error::NoEquilibrium(format!(
            "{} profiles checked; refine the grid (larger --grid-span or smaller --grid-factor)",
            set.profiles_checked
        ))
        .into());
    }
    let params = params_of(&mech);
    let with_claims = params.filter(|_| truth.m() == 1 && truth.n() >= 2);
    let equilibria = set
        .entries
        .iter()
        .map(|e| {
            let claims = match &with_claims {
                Some(p) => Some(claim_predicates(&e.profile.column(0), &truth.column(0), p, args.grid.grid_factor)?),
                None => None,
            };
            Ok(EquilibriumOut {
                profile: e.profile.to_rows(),
                makespan: e.makespan,
                claims_hold: claims.as_ref().map(ClaimReport::all_hold),
                claims,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = EquilibriaReport {
        command: "equilibria",
        mechanism: mech.name(),
        params: params.as_ref().map(ParamsOut::from),
        grid: GridOut {
            factor: args.grid.grid_factor,
            span: args.grid.grid_span,
            profiles: set.profiles_checked,
        },
        eps,
        count: equilibria.len(),
        equilibria,
    };
    write(&report, &args.output)
}

#[derive(Debug, Serialize)]
struct PoaOut {
    command: &'static str,
    mechanism: &'static str,
    params: Option<ParamsOut>,
    grid: GridOut,
    eps: f64,
    equilibria: usize,
    poa: f64,
    best_ratio: f64,
    worst_makespan: f64,
    optimum: f64,
    optimal_assignment: Vec<usize>,
    worst_profile: Vec<Vec<f64>>,
    bound: Option<f64>,
}

pub fn poa(args: &RunArgs) -> Result<(), Failure> {
    let inst = Instance::load(&args.instance)?;
    let truth = &inst.truth;
    let mech = mechanism(args, truth.n())?;
    let grid = grid_for(&mech, truth, &args.grid)?;
    let eps = eps_for(&args.grid, truth)?;
    let set = enumerate_pure_equilibria(&mech, truth, &grid, eps)?;
    let r = poa_from_set(&set, truth)?;
    let params = params_of(&mech);
    let report = PoaOut {
        command: "poa",
        mechanism: mech.name(),
        params: params.as_ref().map(ParamsOut::from),
        grid: GridOut {
            factor: args.grid.grid_factor,
            span: args.grid.grid_span,
            profiles: set.profiles_checked,
        },
        eps,
        equilibria: r.equilibria,
        poa: r.ratio,
        best_ratio: r.best_ratio,
        worst_makespan: r.worst_makespan,
        optimum: r.optimum,
        optimal_assignment: r.optimal_assignment,
        worst_profile: r.worst_profile.to_rows(),
        bound: params.filter(|_| truth.m() == 1).map(|p| p.poa_bound()),
    };
    write(&report, &args.output)
}

pub fn pos_certify(args: &PosArgs) -> Result<(), Failure> {
    let inst = Instance::load(&args.instance)?;
    let truth = &inst.truth;
    let assignment = match &args.assignment {
        Some(a) => a.clone(),
        None => optimal_integral_makespan(truth)?.1,
    };
    let g = args.grid.grid_factor;
    if !(g > 1.0 && g.is_finite()) {
        return Err(Error::InvalidParams(format!("grid factor {g} must exceed 1")).into());
    }
    let span = args.grid.grid_span as i32;
    let mut factors: Vec<f64> = (-span..=span).map(|p| g.powi(p)).collect();
    factors.extend([1.5, 2.0, 4.0]);
    let grid = deviation_grid(truth, &assignment, &factors)?;
    let eps = eps_for(&args.grid, truth)?;
    let cert = pos_certificate(truth, &assignment, args.sampling.samples, args.sampling.seed, &grid, eps)?;
    write(&cert, &args.output)?;
    if cert.passed {
        Ok(())
    } else {
        Err(Failure::Analysis("certificate failed; see the deviation checks in the report".into()))
    }
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    command: &'static str,
    mechanism: &'static str,
    params: Option<ParamsOut>,
    monte_carlo: MakespanEstimate<f64>,
    exact: Option<f64>,
    z_score: Option<f64>,
}

pub fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let inst = Instance::load(&args.instance)?;
    let mech = mechanism(args, inst.truth.n())?;
    let alloc = mech.allocate(&inst.declared)?;
    let (samples, seed) = (args.sampling.samples, args.sampling.seed);
    let mc = mc_expected_makespan(&alloc, &inst.declared, &inst.truth, samples, seed)?;
    let exact = match exact_expected_makespan(&alloc, &inst.declared, &inst.truth) {
        Ok(e) => Some(e.value),
        Err(Error::Capacity { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let z_score = exact.and_then(|x| {
        let se = mc.stderr()?;
        Some(if se > 0.0 { (mc.value - x) / se } else { 0.0 })
    });
    let report = SimulateReport {
        command: "simulate",
        mechanism: mech.name(),
        params: params_of(&mech).as_ref().map(ParamsOut::from),
        monte_carlo: mc,
        exact,
        z_score,
    };
    write(&report, &args.output)
}

pub fn reproduce(args: &ReproduceArgs) -> Result<(), Failure> {
    let opts = ReproduceOptions {
        n: args.n,
        m: args.m,
        big_m: args.big_m,
        l: args.l,
        c: args.c,
        trials: args.trials,
        samples: args.sampling.samples,
        seed: args.sampling.seed,
        grid_factor: args.grid.grid_factor,
        grid_span: args.grid.grid_span,
    };
    let report = run_reproduction(&args.name, &opts)?;
    write(&report, &args.output)?;
    eprint!("{}", report.summary());
    match report.overall() {
        Status::Pass => Ok(()),
        Status::Flagged => Err(Failure::Flagged),
        Status::Fail => Err(Failure::Analysis(format!("{}: a comparison failed", report.name))),
    }
}
