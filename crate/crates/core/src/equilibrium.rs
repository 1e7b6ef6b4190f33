//! Game-theoretic verification: best responses, Nash gaps, Pareto dominance
//! sampling and price-of-anarchy tools.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::alloc::{capped_water_fill, one_step_allocation, BudgetEntry, CappedBudgetProblem};
use crate::model::{
    path_minima, payoff_from_rates, welfare_of_rates, ModelError, NetworkInstance,
    StrategyProfile, Welfare, FEASIBILITY_TOL,
};
use crate::oracle::{dual_solve, OracleError};

/// Default relative tolerance of [`nash_check`].
pub const NASH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    Gamma(f64),
    #[error("flow {0} is local (traverses a single link)")]
    LocalFlow(usize),
    #[error("rates are infeasible: link {link} carries {load} > {capacity}")]
    Infeasible {
        link: usize,
        load: f64,
        capacity: f64,
    },
    #[error("supplied profile {index} is not a Nash equilibrium (gap {gap:.3e})")]
    NotEquilibrium { index: usize, gap: f64 },
    #[error("no equilibria supplied")]
    Empty,
    #[error("not a serial instance: {0}")]
    NotSerial(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Ratio that may be unbounded (zero or negative denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Ratio {
    Finite(f64),
    Unbounded,
}

impl Ratio {
    pub fn of(numerator: f64, denominator: Welfare) -> Ratio {
        match denominator {
            Welfare::Finite(d) if d > 0.0 => Ratio::Finite(numerator / d),
            _ => Ratio::Unbounded,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Ratio::Finite(v) => Some(v),
            Ratio::Unbounded => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v}"),
            Ratio::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Payoff bookkeeping for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGap {
    pub payoff: Welfare,
    pub best_response_payoff: Welfare,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub per_link: Vec<LinkGap>,
    pub max_gap: f64,
    pub is_nash: bool,
    pub welfare: Welfare,
    pub oracle_welfare: Option<f64>,
    pub welfare_ratio: Option<f64>,
}

impl EquilibriumReport {
    /// Records the NUM optimum and, when both values are positive, the
    /// ratio `welfare / optimum`.
    pub fn attach_oracle(&mut self, optimum: f64) {
        self.oracle_welfare = Some(optimum);
        self.welfare_ratio = match self.welfare {
            Welfare::Finite(w) if w > 0.0 && optimum > 0.0 => Some(w / optimum),
            _ => None,
        };
    }

    /// Index of the player with the largest gap.
    pub fn worst_link(&self) -> Option<usize> {
        self.per_link
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.relative_gap.total_cmp(&b.1.relative_gap))
            .map(|(l, _)| l)
    }
}

fn relative_gap(current: Welfare, best: Welfare) -> f64 {
    match (current, best) {
        (Welfare::Finite(p), Welfare::Finite(b)) => (b - p) / p.abs().max(1.0),
        (Welfare::NegInfinity, Welfare::Finite(_)) => f64::INFINITY,
        _ => 0.0,
    }
}

/// Smallest allocation of `flow` on links other than `link`.
fn external_cap(inst: &NetworkInstance, s: &StrategyProfile, link: usize, flow: usize) -> Option<f64> {
    inst.links_of(flow)
        .iter()
        .filter(|&&k| k != link)
        .map(|&k| s.get(k, flow))
        .reduce(f64::min)
}

fn best_response_unchecked(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    link: usize,
) -> (Vec<f64>, Welfare) {
    let mut row = vec![0.0; inst.num_flows()];
    let caps: Vec<(usize, Option<f64>)> = inst
        .flows_on(link)
        .iter()
        .map(|&r| (r, external_cap(inst, s, link, r)))
        .collect();
    let entries: Vec<BudgetEntry> = caps
        .iter()
        .filter(|(_, cap)| cap.map_or(true, |c| c > 0.0))
        .map(|&(flow, cap)| BudgetEntry {
            flow,
            weight: inst.share_weight(flow),
            cap,
        })
        .collect();
    let problem = CappedBudgetProblem::new(inst.capacity(link), entries)
        .expect("capacities and share weights are positive");
    let fill = capped_water_fill(&problem);
    for (e, amount) in problem.entries().iter().zip(&fill.amounts) {
        row[e.flow] = *amount;
    }

    let value = caps
        .iter()
        .map(|&(r, cap)| {
            let x = cap.map_or(row[r], |c| row[r].min(c));
            inst.flow_utility(r, x).scale(inst.payoff_weight(r))
        })
        .sum();
    (row, value)
}

/// Payoff-maximizing row of player `link` with every other row fixed.
///
/// Allocating a flow more than its smallest allocation elsewhere changes
/// nothing, so the problem is a water fill with those minima as caps.
pub fn best_response(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    link: usize,
) -> Result<(Vec<f64>, Welfare), ModelError> {
    s.validate(inst)?;
    Ok(best_response_unchecked(inst, s, link))
}

/// Runs [`best_response`] for every player and reports the gaps.
pub fn nash_check(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    rel_tol: f64,
) -> Result<EquilibriumReport, ModelError> {
    s.validate(inst)?;
    let rates = path_minima(inst, s);
    let per_link: Vec<LinkGap> = (0..inst.num_links())
        .map(|l| {
            let payoff = payoff_from_rates(inst, &rates, l);
            let (_, best) = best_response_unchecked(inst, s, l);
            LinkGap {
                payoff,
                best_response_payoff: best,
                relative_gap: relative_gap(payoff, best),
            }
        })
        .collect();
    let max_gap = per_link
        .iter()
        .map(|g| g.relative_gap)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EquilibriumReport {
        is_nash: max_gap <= rel_tol,
        max_gap,
        per_link,
        welfare: welfare_of_rates(inst, &rates),
        oracle_welfare: None,
        welfare_ratio: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    /// All payoffs weakly better, one strictly: refutes strong Pareto optimality.
    Strong,
    /// All payoffs strictly better: refutes Pareto optimality.
    Weak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoOptions {
    pub trials: usize,
    pub seed: u64,
    pub dominance: Dominance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSample {
    pub dominating_found: bool,
    pub witness: Option<StrategyProfile>,
    pub trials_run: usize,
}

/// Random search for a profile that strongly Pareto-dominates `s`.
/// Finding none is evidence, not proof.
pub fn pareto_dominance_sample(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    trials: usize,
    seed: u64,
) -> Result<ParetoSample, ModelError> {
    pareto_sample_with(
        inst,
        s,
        &ParetoOptions {
            trials,
            seed,
            dominance: Dominance::Strong,
        },
    )
}

pub fn pareto_sample_with(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    opts: &ParetoOptions,
) -> Result<ParetoSample, ModelError> {
    s.validate(inst)?;
    let links = inst.num_links();
    let base_rates = path_minima(inst, s);
    let base: Vec<Welfare> = (0..links)
        .map(|l| payoff_from_rates(inst, &base_rates, l))
        .collect();
    let scale = |q: Welfare| q.finite().map_or(1.0, |v| v.abs().max(1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut candidate = s.clone();
    for trial in 0..opts.trials {
        candidate.clone_from(s);
        let mut moved: Vec<bool> = (0..links).map(|_| rng.gen_bool(0.5)).collect();
        if !moved.iter().any(|m| *m) {
            moved[rng.gen_range(0..links)] = true;
        }
        for l in (0..links).filter(|&l| moved[l]) {
            let fs = inst.flows_on(l);
            if fs.is_empty() {
                continue;
            }
            // Dirichlet(1, ..., 1) target using the whole capacity
            let draws: Vec<f64> = fs
                .iter()
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = draws.iter().sum();
            let eta = (rng.gen_range(1e-4f64.ln()..=0.0)).exp();
            for (&r, d) in fs.iter().zip(&draws) {
                let target = inst.capacity(l) * d / total;
                let current = s.get(l, r);
                candidate.set(l, r, (current + eta * (target - current)).max(0.0));
            }
        }

        let rates = path_minima(inst, &candidate);
        let mut all_weak = true;
        let mut all_strict = true;
        let mut any_strict = false;
        for (l, &q0) in base.iter().enumerate() {
            let q = payoff_from_rates(inst, &rates, l);
            let sc = scale(q0);
            let strict = match (q, q0) {
                (Welfare::Finite(a), Welfare::Finite(b)) => a > b + 1e-9 * sc,
                (Welfare::Finite(_), Welfare::NegInfinity) => true,
                _ => false,
            };
            let weak = match (q, q0) {
                (Welfare::Finite(a), Welfare::Finite(b)) => a >= b - 1e-12 * sc,
                (_, Welfare::NegInfinity) => true,
                (Welfare::NegInfinity, Welfare::Finite(_)) => false,
            };
            all_weak &= weak;
            all_strict &= strict;
            any_strict |= strict;
        }
        let dominates = match opts.dominance {
            Dominance::Strong => all_weak && any_strict,
            Dominance::Weak => all_strict,
        };
        if dominates {
            return Ok(ParetoSample {
                dominating_found: true,
                witness: Some(candidate),
                trials_run: trial + 1,
            });
        }
    }
    Ok(ParetoSample {
        dominating_found: false,
        witness: None,
        trials_run: opts.trials,
    })
}

/// Parameters of the serial topology: `L` equal links in a row, one local
/// flow per link and one long flow through all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialPoAInputs {
    pub links: usize,
    pub gamma: f64,
    pub local_weights: Vec<f64>,
    pub long_weight: f64,
    /// Payoff weight of the long flow: 1 (uniform) or 1/L (path length).
    pub long_b: f64,
}

impl SerialPoAInputs {
    /// `W`, the sum of local weights.
    pub fn total_local(&self) -> f64 {
        self.local_weights.iter().sum()
    }

    /// `chi = w_long / W`.
    pub fn chi(&self) -> f64 {
        self.long_weight / self.total_local()
    }

    fn validate(&self) -> Result<(), EquilibriumError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EquilibriumError::Gamma(self.gamma));
        }
        if self.links < 2 {
            return Err(EquilibriumError::Input(format!(
                "serial network needs at least 2 links, got {}",
                self.links
            )));
        }
        if self.local_weights.len() != self.links {
            return Err(EquilibriumError::Input(format!(
                "{} local weights for {} links",
                self.local_weights.len(),
                self.links
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.local_weights.iter().copied().all(positive)
            || !positive(self.long_weight)
            || !positive(self.long_b)
        {
            return Err(EquilibriumError::Input(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SerialPoA {
    pub chi: f64,
    pub poa1: f64,
    pub poa2: f64,
    pub poa: f64,
}

/// Closed-form price of anarchy of the serial topology.
///
/// `poa1` is the ratio for the equilibrium starving the long flow, `poa2`
/// for the one giving every local flow the largest one-step local share.
pub fn serial_poa(p: &SerialPoAInputs) -> Result<SerialPoA, EquilibriumError> {
    p.validate()?;
    let g = p.gamma;
    let inv = 1.0 / g;
    let w_total = p.total_local();
    let omega = p.local_weights.iter().copied().fold(0.0, f64::max);
    let long = p.long_weight.powf(inv);

    let poa1 = (long / w_total.powf(inv) + 1.0).powf(g);
    let poa2 = (long + w_total.powf(inv)).powf(g)
        * (p.long_b * long + omega.powf(inv)).powf(1.0 - g)
        / (p.long_b * long + w_total * omega.powf(inv - 1.0));
    Ok(SerialPoA {
        chi: p.chi(),
        poa1,
        poa2,
        poa: poa1.max(poa2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPoA {
    pub oracle_welfare: f64,
    pub min_welfare: Welfare,
    pub max_welfare: Welfare,
    /// Optimum over the worst supplied equilibrium.
    pub poa_lower_bound: Ratio,
    /// Optimum over the best supplied equilibrium.
    pub pos_upper_bound: Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoaOptions {
    pub nash_tol: f64,
    pub oracle_tol: f64,
    pub oracle_max_iter: usize,
}

impl Default for PoaOptions {
    fn default() -> Self {
        Self {
            nash_tol: NASH_TOL,
            oracle_tol: 1e-11,
            oracle_max_iter: 200_000,
        }
    }
}

/// Bounds on PoA and PoS from a supplied set of equilibria.
pub fn poa_pos_empirical(
    inst: &NetworkInstance,
    equilibria: &[StrategyProfile],
) -> Result<EmpiricalPoA, EquilibriumError> {
    poa_pos_empirical_with(inst, equilibria, &PoaOptions::default())
}

pub fn poa_pos_empirical_with(
    inst: &NetworkInstance,
    equilibria: &[StrategyProfile],
    opts: &PoaOptions,
) -> Result<EmpiricalPoA, EquilibriumError> {
    let g = inst.gamma();
    if !(g > 0.0 && g < 1.0) {
        return Err(EquilibriumError::Gamma(g));
    }
    if equilibria.is_empty() {
        return Err(EquilibriumError::Empty);
    }
    let mut welfares = Vec::with_capacity(equilibria.len());
    for (index, s) in equilibria.iter().enumerate() {
        let report = nash_check(inst, s, opts.nash_tol)?;
        if !report.is_nash {
            return Err(EquilibriumError::NotEquilibrium {
                index,
                gap: report.max_gap,
            });
        }
        welfares.push(report.welfare);
    }
    let oracle = dual_solve(inst, opts.oracle_tol, opts.oracle_max_iter)?.require_converged()?;
    let min = welfares
        .iter()
        .copied()
        .reduce(|a, b| if b < a { b } else { a })
        .expect("non-empty");
    let max = welfares
        .iter()
        .copied()
        .reduce(|a, b| if b > a { b } else { a })
        .expect("non-empty");
    Ok(EmpiricalPoA {
        oracle_welfare: oracle.objective,
        min_welfare: min,
        max_welfare: max,
        poa_lower_bound: Ratio::of(oracle.objective, min),
        pos_upper_bound: Ratio::of(oracle.objective, max),
    })
}

/// Profile giving every flow the same allocation `x_r` on all its links.
/// Without local flows any such profile is a pure Nash equilibrium.
pub fn equal_allocation_equilibria(
    inst: &NetworkInstance,
    x: &[f64],
) -> Result<StrategyProfile, EquilibriumError> {
    if x.len() != inst.num_flows() {
        return Err(EquilibriumError::Input(format!(
            "{} rates for {} flows",
            x.len(),
            inst.num_flows()
        )));
    }
    if let Some(r) = (0..inst.num_flows()).find(|&r| inst.is_local(r)) {
        return Err(EquilibriumError::LocalFlow(r));
    }
    if let Some(&bad) = x.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(EquilibriumError::Input(format!("invalid rate {bad}")));
    }
    for (link, load) in inst.loads(x).into_iter().enumerate() {
        let capacity = inst.capacity(link);
        if load > capacity * (1.0 + FEASIBILITY_TOL) {
            return Err(EquilibriumError::Infeasible {
                link,
                load,
                capacity,
            });
        }
    }
    Ok(StrategyProfile::pinned_to_rates(inst, x))
}

/// The two candidate worst equilibria of a serial instance (flows `0..L`
/// local to links `0..L`, flow `L` through every link, equal capacities):
/// the long flow starved, and every link giving its local flow the largest
/// one-step local share `k` and the long flow `C - k`.
pub fn serial_candidate_equilibria(
    inst: &NetworkInstance,
) -> Result<Vec<StrategyProfile>, EquilibriumError> {
    let links = inst.num_links();
    if links < 2 || inst.num_flows() != links + 1 {
        return Err(EquilibriumError::NotSerial("expected L >= 2 links and L + 1 flows"));
    }
    let long = links;
    for l in 0..links {
        if inst.flows_on(l) != [l, long] {
            return Err(EquilibriumError::NotSerial(
                "link l must carry exactly local flow l and the long flow",
            ));
        }
    }
    let cap = inst.capacity(0);
    if inst.capacities().iter().any(|&c| c != cap) {
        return Err(EquilibriumError::NotSerial("capacities differ"));
    }

    let mut starved = StrategyProfile::zeros_for(inst);
    for l in 0..links {
        starved.set(l, l, cap);
    }
    let k = (0..links)
        .map(|l| one_step_allocation(inst, l)[l])
        .fold(0.0, f64::max);
    let mut shared = StrategyProfile::zeros_for(inst);
    for l in 0..links {
        shared.set(l, l, k);
        shared.set(l, long, cap - k);
    }
    Ok(vec![starved, shared])
}
