//! Scheduling without payments on unrelated machines whose owners may
//! misreport their processing times.
//!
//! A machine that declares `d_ij` for a task with true time `t_ij` needs
//! `max(d_ij, t_ij)` to run it. Mechanisms map declared times to an
//! allocation matrix; everything downstream (costs, makespans, equilibria)
//! is computed from declared and true times together.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); aliases for
//! the `f64` instantiation are provided at the crate root.

// validation rejects NaN through negated comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod lp;
pub mod mechanisms;
pub mod model;
pub mod scalar;
mod simplex;

pub use error::{Error, ErrorKind, Result};
pub use scalar::{approx_eq, definitely_less, Scalar};

pub use equilibrium::{
    analytic_equilibrium_per_task, analytic_equilibrium_single_task, best_response_regret,
    build_grid, claim_predicates, default_eps, enumerate_pure_equilibria, greedy_deviation_value,
    greedy_mixed_profile, is_pure_equilibrium, pos_certificate, pure_poa, BidGrid, ClaimReport,
    EquilibriumSet, MixedGreedyProfile, PoaReport, PosCertificate, RegretReport,
};
pub use experiments::{
    appendix_b_instance, k14_fast_prob, k14_makespan_lower, k14_tight_instance, proportional_ratio,
    reproduce, run_multi_task_poa_experiment, thm3_instance, thm5_instance, ExperimentReport,
    ReproduceOptions, Status,
};
pub use lp::{lp_mechanism, lp_truthfulness_regret, solve_scheduling_lp, LpSolution};
pub use mechanisms::{
    alg2, alg_n, greedy_single, min_sec_stats, per_task_product, proportional_single, AlgParams,
    AllocationRule, Mechanism, MinSecStats, SingleTaskRule,
};
pub use model::{
    assignment_makespan, effective_times, exact_expected_makespan, fractional_makespan,
    machine_costs, mc_expected_makespan, optimal_integral_makespan, social_welfare,
    AllocationMatrix, CostMatrix, EffectiveTimes, EstimateMethod, MachineCosts, MakespanEstimate,
};

pub type CostMatrixF64 = CostMatrix<f64>;
pub type CostMatrixF32 = CostMatrix<f32>;
pub type AllocationMatrixF64 = AllocationMatrix<f64>;
pub type AllocationMatrixF32 = AllocationMatrix<f32>;
pub type AlgParamsF64 = AlgParams<f64>;
pub type MechanismF64 = Mechanism<f64>;
pub type LpSolutionF64 = LpSolution<f64>;
pub type BidGridF64 = BidGrid<f64>;
