//! Simulation of hybrid systems H = (C, F, D, G) and sampling-based checking of
//! Lyapunov-barrier certificates for stability-with-safety and
//! reach-avoid-stay specifications.

// `!(a <= b)` style comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod control;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hybrid;
pub mod monitor;
pub mod report;
pub mod sim;
pub mod studies;

pub use error::{Error, Result};
pub use geometry::{
    contains, dist_to_set, inflate, make_proper_indicator, vector, AxisBox, ImplicitSet,
    ProperIndicator, SetRegion, Vector, DEFAULT_TOL,
};
pub use hybrid::{
    arc_eval, make_system, perturb, total_time, Disturbance, HybridArc, HybridSystem, HybridTime,
    HybridTimeDomain, Phase, Termination,
};
pub use report::{CheckReport, ConditionResult, Counterexample, Stats, Verdict, Witness};
pub use sim::{
    closeness, construct_perturbed, reachable_sample, solve, solve_batch, verify_solution,
    Priority, SimConfig, SolveReport,
};
pub use certificates::{
    check_pair_vb, check_single_v, decrement_along_arc, falsify, CertificatePair, GridSpec,
    ScalarField,
};
pub use monitor::{
    check_forward_invariance, check_ras, check_stability_safety, estimate_invariant_core,
    InitialSet, RASSpec, StabSafeSpec,
};
pub use control::{
    admissible_constraints, augment_sample_hold, kkt_residual, qp_policy, run_closed_loop,
    solve_qp, ControlledPlant, Decision, QPProblem, QpPolicy, SampleHoldConfig,
};
pub use studies::{
    bouncing_ball, mg_equilibrium, moore_greitzer, psi_c, BouncingBallParams, MooreGreitzerParams,
};
