//! Link-capacity allocation game for network utility maximization.
//!
//! Every link of a network is a player that splits its capacity among the
//! flows routed through it. A flow transmits at the minimum allocation it
//! receives along its path, and each player is paid the (weighted) utility of
//! the flows it carries. This crate provides:
//!
//! * [`model`]: instances, strategy profiles, rates, payoffs and welfare;
//! * [`alloc`]: the local one-step allocator and the iterated allocation
//!   algorithm that reaches a Pareto-optimal pure Nash equilibrium;
//! * [`oracle`]: reference solvers for the underlying NUM problem;
//! * [`equilibrium`]: best responses, Nash-gap reports, Pareto sampling and
//!   price-of-anarchy tools;
//! * [`simnet`]: a lockstep message-passing simulation of the decentralized
//!   algorithm;
//! * [`io`]: instance generators and the text file format;
//! * [`cli`]: the experiment driver behind the `capgame` binary.

pub mod alloc;
pub mod cli;
pub mod equilibrium;
pub mod io;
pub mod model;
pub mod oracle;
pub mod simnet;

pub use alloc::{
    capped_water_fill, iterated_allocation, iterated_allocation_with, one_step_allocation,
    one_step_profile, renumber_links, AllocError, AllocationTrace, BudgetEntry,
    CappedBudgetProblem, IterOptions, IterationRecord, WaterFill,
};
pub use equilibrium::{
    best_response, equal_allocation_equilibria, nash_check, pareto_dominance_sample,
    poa_pos_empirical, serial_candidate_equilibria, serial_poa, EquilibriumError,
    EquilibriumReport, LinkGap, ParetoSample, Ratio, SerialPoA, SerialPoAInputs,
};
pub use io::{random_instance, serial_instance, FormatError, GenError, RandomInstanceSpec};
pub use model::{
    payoff, rates_of, utility, welfare, ModelError, NetworkInstance, PayoffMode, RateVector,
    StrategyProfile, Welfare,
};
pub use oracle::{brute_force_solve, dual_solve, dual_solve_with, OracleError, OracleResult};
pub use simnet::{
    message_audit, run_simulation, Endpoint, Message, MessageAudit, MessageKind, SimError,
    SimOutcome,
};
