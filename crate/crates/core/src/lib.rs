//! Discretized periodic semiflows for a drifted selection-mutation model and
//! a growth-fragmentation model with affine periodic rates, Floquet
//! eigenelements, and numerical Harris-type certificates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod floquet;
pub mod growth_fragmentation;
pub mod harris;
pub mod measure_space;
pub mod propagator;
pub mod selection_mutation;

pub use error::{Error, Result};
pub use floquet::{
    convergence_rate, extend_family, power_iterate, ConvergenceRecord, FloquetFamily,
    PeriodMapEigen,
};
pub use growth_fragmentation::{GFModel, GFParams};
pub use harris::{
    check_a_suite, check_b_suite, CheckRecord, HarrisReport, MinorizationMeasure, SmallSet,
};
pub use measure_space::{
    pairing, weighted_sup_norm, weighted_tv_norm, DiscreteFunction, DiscreteMeasure, SpaceGrid,
    WeightPair,
};
pub use propagator::{
    assemble, assemble_steps, assemble_steps_visit, compose, evolve_dual, step_dual, DualGenerator,
    LatticeProvider, Method, Propagator, PropagatorProvider, SparseOperator, StepScheme,
};
