//! Identification of the field-free Hamiltonian `H0` and the dipole coupling
//! `H1` of a driven quantum system from its final evolution operator.
//!
//! The dynamics `i dU/dt = (H0 + E(t) H1) U` are discretised with
//! Crank-Nicolson. Differentiating the discrete recursion gives an exact
//! Jacobian of the final operator with respect to `(H0, H1)`, which drives a
//! Newton iteration ([`newton`]). A homotopy over targets
//! `exp(iS + (m/N_c) A)` widens its basin of attraction ([`continuation`]).

pub mod continuation;
pub mod error;
pub mod hermitian;
pub mod models;
pub mod newton;
pub mod propagator;
pub mod report;

pub use continuation::{
    continuation_identify, continuation_identify_with_truth, intermediate_target, m0_seed,
    singularity_probe, ContinuationConfig, ContinuationOutcome, ContinuationReport,
    SingularityDiagnostic, StageRecord, DEFAULT_RANK_TOLERANCE,
};
pub use error::{Error, Result};
pub use hermitian::{
    spec_norm, split_log, unitary_exp, unitary_log, CMatrix, RealAntiSymMatrix, RealSymMatrix,
    RealSymZeroDiagMatrix, TargetDecomposition, UnitaryMatrix,
};
pub use models::{
    build_double_well, perturb_pair, pi_pulse_field, two_level_model, DoubleWellModel,
    DoubleWellParams, PerturbationSpec, TwoLevelParams,
};
pub use newton::{
    assemble_jacobian, hermitian_residual, newton_identify, newton_identify_with_truth,
    reduce_system, solve_update, Convergence, HamiltonianPair, LinearSolve, NewtonConfig,
    NewtonRecord, NewtonReport, NewtonUpdate, ReducedSystem,
};
pub use propagator::{
    cn_error_order, cn_step, propagate, propagate_final, sample_field, ControlField, SampledField,
    TimeGrid, Trajectory,
};
