//! Problem data and the evaluation primitives shared by every other module.
//!
//! Indices are zero-based throughout: link `l` is row `l` of the routing
//! matrix, flow `r` is column `r`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack accepted on `sum_r a_lr s_lr <= c_l`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance must have at least one link and one flow (got {links}x{flows})")]
    EmptyInstance { links: usize, flows: usize },
    #[error("routing matrix has {got} entries, expected {expected}")]
    RoutingShape { expected: usize, got: usize },
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("flow {0} is not routed through any link")]
    UnroutedFlow(usize),
    #[error("capacity of link {link} must be positive and finite, got {value}")]
    Capacity { link: usize, value: f64 },
    #[error("weight of flow {flow} must be positive and finite, got {value}")]
    Weight { flow: usize, value: f64 },
    #[error("gamma must be positive and finite, got {0}")]
    Gamma(f64),
    #[error("profile is {got_links}x{got_flows}, instance is {links}x{flows}")]
    DimensionMismatch {
        links: usize,
        flows: usize,
        got_links: usize,
        got_flows: usize,
    },
    #[error("allocation s[{link}][{flow}] = {value} is negative or not finite")]
    NegativeAllocation { link: usize, flow: usize, value: f64 },
    #[error("allocation s[{link}][{flow}] = {value} on a link the flow does not traverse")]
    OffPathAllocation { link: usize, flow: usize, value: f64 },
    #[error("link {link} allocates {load} above its capacity {capacity}")]
    OverCapacity {
        link: usize,
        load: f64,
        capacity: f64,
    },
}

/// Which per-flow weight `b_r` enters the players' payoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffMode {
    /// `b_r = 1` for every flow.
    Uniform,
    /// `b_r = 1 / (path length of r)`; payoffs then sum to the social welfare.
    PathLength,
}

impl PayoffMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PayoffMode::Uniform => "uniform",
            PayoffMode::PathLength => "path-length",
        }
    }
}

impl fmt::Display for PayoffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PayoffMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(PayoffMode::Uniform),
            "path-length" | "path_length" | "pathlength" => Ok(PayoffMode::PathLength),
            other => Err(format!("unknown payoff mode `{other}`")),
        }
    }
}

/// Extended real used for utilities, payoffs and welfare.
///
/// Log utilities are unbounded below at zero rate; that case is carried as
/// an explicit tag instead of a float infinity so that sums and comparisons
/// stay total. `NegInfinity` compares below every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Welfare {
    Finite(f64),
    NegInfinity,
}

impl Welfare {
    pub const ZERO: Welfare = Welfare::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, Welfare::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Welfare::Finite(v) => Some(v),
            Welfare::NegInfinity => None,
        }
    }

    /// Lossy conversion; `NegInfinity` maps to `f64::NEG_INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            Welfare::Finite(v) => v,
            Welfare::NegInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn scale(self, factor: f64) -> Welfare {
        debug_assert!(factor >= 0.0);
        match self {
            Welfare::Finite(v) => Welfare::Finite(v * factor),
            Welfare::NegInfinity if factor == 0.0 => Welfare::ZERO,
            Welfare::NegInfinity => Welfare::NegInfinity,
        }
    }
}

impl Add for Welfare {
    type Output = Welfare;

    fn add(self, rhs: Welfare) -> Welfare {
        match (self, rhs) {
            (Welfare::Finite(a), Welfare::Finite(b)) => Welfare::Finite(a + b),
            _ => Welfare::NegInfinity,
        }
    }
}

impl AddAssign for Welfare {
    fn add_assign(&mut self, rhs: Welfare) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Welfare {
    fn sum<I: Iterator<Item = Welfare>>(iter: I) -> Welfare {
        iter.fold(Welfare::ZERO, Add::add)
    }
}

impl PartialOrd for Welfare {
    fn partial_cmp(&self, other: &Welfare) -> Option<Ordering> {
        match (self, other) {
            (Welfare::Finite(a), Welfare::Finite(b)) => a.partial_cmp(b),
            (Welfare::NegInfinity, Welfare::NegInfinity) => Some(Ordering::Equal),
            (Welfare::NegInfinity, Welfare::Finite(_)) => Some(Ordering::Less),
            (Welfare::Finite(_), Welfare::NegInfinity) => Some(Ordering::Greater),
        }
    }
}

impl fmt::Display for Welfare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Welfare::Finite(v) => write!(f, "{v}"),
            Welfare::NegInfinity => f.write_str("-inf"),
        }
    }
}

/// Isoelastic utility `w x^(1-gamma) / (1-gamma)`, or `w ln x` at `gamma = 1`.
pub fn utility(x: f64, w: f64, gamma: f64) -> Welfare {
    debug_assert!(x >= 0.0, "utility of negative rate {x}");
    if gamma == 1.0 {
        if x > 0.0 {
            Welfare::Finite(w * x.ln())
        } else {
            Welfare::NegInfinity
        }
    } else if x == 0.0 && gamma > 1.0 {
        Welfare::NegInfinity
    } else {
        let e = 1.0 - gamma;
        Welfare::Finite(w * x.powf(e) / e)
    }
}

/// Derivative of [`utility`] in `x`; infinite at `x = 0`.
pub fn marginal_utility(x: f64, w: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    w * x.powf(-gamma)
}

/// The full problem datum: topology, capacities and utility parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    links: usize,
    flows: usize,
    routing: Vec<bool>,
    capacities: Vec<f64>,
    gamma: f64,
    weights: Vec<f64>,
    payoff_mode: PayoffMode,
    // derived
    flows_on: Vec<Vec<usize>>,
    links_of: Vec<Vec<usize>>,
    payoff_weights: Vec<f64>,
    share_weights: Vec<f64>,
}

impl NetworkInstance {
    /// Builds and validates an instance from a row-major `links x flows`
    /// routing matrix.
    pub fn new(
        links: usize,
        flows: usize,
        routing: Vec<bool>,
        capacities: Vec<f64>,
        gamma: f64,
        weights: Vec<f64>,
        payoff_mode: PayoffMode,
    ) -> Result<Self, ModelError> {
        if links == 0 || flows == 0 {
            return Err(ModelError::EmptyInstance { links, flows });
        }
        if routing.len() != links * flows {
            return Err(ModelError::RoutingShape {
                expected: links * flows,
                got: routing.len(),
            });
        }
        if capacities.len() != links {
            return Err(ModelError::Length {
                what: "capacities",
                expected: links,
                got: capacities.len(),
            });
        }
        if weights.len() != flows {
            return Err(ModelError::Length {
                what: "weights",
                expected: flows,
                got: weights.len(),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(ModelError::Gamma(gamma));
        }
        for (link, &value) in capacities.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::Capacity { link, value });
            }
        }
        for (flow, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::Weight { flow, value });
            }
        }

        let mut flows_on = vec![Vec::new(); links];
        let mut links_of = vec![Vec::new(); flows];
        for l in 0..links {
            for r in 0..flows {
                if routing[l * flows + r] {
                    flows_on[l].push(r);
                    links_of[r].push(l);
                }
            }
        }
        if let Some(r) = links_of.iter().position(Vec::is_empty) {
            return Err(ModelError::UnroutedFlow(r));
        }

        let payoff_weights: Vec<f64> = links_of
            .iter()
            .map(|path| match payoff_mode {
                PayoffMode::Uniform => 1.0,
                PayoffMode::PathLength => 1.0 / path.len() as f64,
            })
            .collect();
        let share_weights = payoff_weights
            .iter()
            .zip(&weights)
            .map(|(b, w)| (b * w).powf(1.0 / gamma))
            .collect();

        Ok(Self {
            links,
            flows,
            routing,
            capacities,
            gamma,
            weights,
            payoff_mode,
            flows_on,
            links_of,
            payoff_weights,
            share_weights,
        })
    }

    /// Convenience constructor from routing rows such as `"110"`.
    pub fn from_rows(
        rows: &[&str],
        capacities: Vec<f64>,
        gamma: f64,
        weights: Vec<f64>,
        payoff_mode: PayoffMode,
    ) -> Result<Self, ModelError> {
        let links = rows.len();
        let flows = rows.first().map_or(0, |r| r.len());
        let mut routing = Vec::with_capacity(links * flows);
        for row in rows {
            if row.len() != flows {
                return Err(ModelError::RoutingShape {
                    expected: links * flows,
                    got: links * row.len(),
                });
            }
            routing.extend(row.bytes().map(|b| b == b'1'));
        }
        Self::new(links, flows, routing, capacities, gamma, weights, payoff_mode)
    }

    pub fn num_links(&self) -> usize {
        self.links
    }

    pub fn num_flows(&self) -> usize {
        self.flows
    }

    pub fn routes(&self, link: usize, flow: usize) -> bool {
        self.routing[link * self.flows + flow]
    }

    pub fn routing(&self) -> &[bool] {
        &self.routing
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn capacity(&self, link: usize) -> f64 {
        self.capacities[link]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn payoff_mode(&self) -> PayoffMode {
        self.payoff_mode
    }

    /// Flows traversing `link`, ascending.
    pub fn flows_on(&self, link: usize) -> &[usize] {
        &self.flows_on[link]
    }

    /// Links on the path of `flow`, ascending.
    pub fn links_of(&self, flow: usize) -> &[usize] {
        &self.links_of[flow]
    }

    /// The payoff weight `b_r`.
    pub fn payoff_weight(&self, flow: usize) -> f64 {
        self.payoff_weights[flow]
    }

    /// `(b_r w_r)^(1/gamma)`: optimal local shares are proportional to it.
    pub fn share_weight(&self, flow: usize) -> f64 {
        self.share_weights[flow]
    }

    /// A flow is local when it traverses exactly one link.
    pub fn is_local(&self, flow: usize) -> bool {
        self.links_of[flow].len() == 1
    }

    /// Number of ones in the routing matrix.
    pub fn nnz(&self) -> usize {
        self.links_of.iter().map(Vec::len).sum()
    }

    /// Utility of `flow` at rate `x`.
    pub fn flow_utility(&self, flow: usize, x: f64) -> Welfare {
        utility(x, self.weights[flow], self.gamma)
    }

    /// Same topology and parameters under another payoff weighting.
    pub fn with_payoff_mode(&self, mode: PayoffMode) -> NetworkInstance {
        Self::new(
            self.links,
            self.flows,
            self.routing.clone(),
            self.capacities.clone(),
            self.gamma,
            self.weights.clone(),
            mode,
        )
        .expect("validated instance stays valid")
    }

    /// Same topology with a different curvature.
    pub fn with_gamma(&self, gamma: f64) -> Result<NetworkInstance, ModelError> {
        Self::new(
            self.links,
            self.flows,
            self.routing.clone(),
            self.capacities.clone(),
            gamma,
            self.weights.clone(),
            self.payoff_mode,
        )
    }

    /// Link loads `A x`.
    pub fn loads(&self, rates: &[f64]) -> Vec<f64> {
        self.flows_on
            .iter()
            .map(|fs| fs.iter().map(|&r| rates[r]).sum())
            .collect()
    }

    /// True when `A x <= c` holds within `rel_tol`.
    pub fn rates_feasible(&self, rates: &[f64], rel_tol: f64) -> bool {
        rates.len() == self.flows
            && rates.iter().all(|x| *x >= 0.0 && x.is_finite())
            && self
                .loads(rates)
                .iter()
                .zip(&self.capacities)
                .all(|(load, c)| *load <= c * (1.0 + rel_tol))
    }
}

/// An `L x R` allocation matrix, one row per player.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    links: usize,
    flows: usize,
    alloc: Vec<f64>,
}

impl StrategyProfile {
    pub fn zeros(links: usize, flows: usize) -> Self {
        Self {
            links,
            flows,
            alloc: vec![0.0; links * flows],
        }
    }

    pub fn zeros_for(inst: &NetworkInstance) -> Self {
        Self::zeros(inst.num_links(), inst.num_flows())
    }

    /// Builds a profile from rows; all rows must have the same length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let links = rows.len();
        let flows = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != flows) {
            return Err(ModelError::Length {
                what: "profile row",
                expected: flows,
                got: bad.len(),
            });
        }
        Ok(Self {
            links,
            flows,
            alloc: rows.into_iter().flatten().collect(),
        })
    }

    /// Profile with `s_lr = x_r` on every link of r's path.
    pub fn pinned_to_rates(inst: &NetworkInstance, rates: &[f64]) -> Self {
        let mut s = Self::zeros_for(inst);
        for (r, &x) in rates.iter().enumerate() {
            for &l in inst.links_of(r) {
                s.set(l, r, x);
            }
        }
        s
    }

    pub fn num_links(&self) -> usize {
        self.links
    }

    pub fn num_flows(&self) -> usize {
        self.flows
    }

    pub fn get(&self, link: usize, flow: usize) -> f64 {
        self.alloc[link * self.flows + flow]
    }

    pub fn set(&mut self, link: usize, flow: usize, value: f64) {
        self.alloc[link * self.flows + flow] = value;
    }

    pub fn row(&self, link: usize) -> &[f64] {
        &self.alloc[link * self.flows..(link + 1) * self.flows]
    }

    pub fn row_mut(&mut self, link: usize) -> &mut [f64] {
        &mut self.alloc[link * self.flows..(link + 1) * self.flows]
    }

    pub fn set_row(&mut self, link: usize, row: &[f64]) {
        self.row_mut(link).copy_from_slice(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.alloc.chunks(self.flows.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alloc
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &StrategyProfile) -> f64 {
        assert_eq!(
            (self.links, self.flows),
            (other.links, other.flows),
            "profile dimensions differ"
        );
        self.alloc
            .iter()
            .zip(&other.alloc)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_dims(&self, inst: &NetworkInstance) -> Result<(), ModelError> {
        if self.links != inst.num_links() || self.flows != inst.num_flows() {
            return Err(ModelError::DimensionMismatch {
                links: inst.num_links(),
                flows: inst.num_flows(),
                got_links: self.links,
                got_flows: self.flows,
            });
        }
        Ok(())
    }

    /// Checks dimensions, sign, routing support and per-link capacity.
    pub fn validate(&self, inst: &NetworkInstance) -> Result<(), ModelError> {
        self.check_dims(inst)?;
        for l in 0..self.links {
            let mut load = 0.0;
            for r in 0..self.flows {
                let value = self.get(l, r);
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(ModelError::NegativeAllocation {
                        link: l,
                        flow: r,
                        value,
                    });
                }
                if value != 0.0 && !inst.routes(l, r) {
                    return Err(ModelError::OffPathAllocation {
                        link: l,
                        flow: r,
                        value,
                    });
                }
                load += value;
            }
            let capacity = inst.capacity(l);
            if load > capacity * (1.0 + FEASIBILITY_TOL) {
                return Err(ModelError::OverCapacity {
                    link: l,
                    load,
                    capacity,
                });
            }
        }
        Ok(())
    }
}

/// Per-flow transmission rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for RateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `x_r = min_{l on r} s_lr`.
pub fn rates_of(inst: &NetworkInstance, s: &StrategyProfile) -> Result<RateVector, ModelError> {
    s.check_dims(inst)?;
    Ok(RateVector(path_minima(inst, s)))
}

pub(crate) fn path_minima(inst: &NetworkInstance, s: &StrategyProfile) -> Vec<f64> {
    (0..inst.num_flows())
        .map(|r| {
            inst.links_of(r)
                .iter()
                .map(|&l| s.get(l, r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Payoff of player `link` given precomputed rates.
pub fn payoff_from_rates(inst: &NetworkInstance, rates: &[f64], link: usize) -> Welfare {
    inst.flows_on(link)
        .iter()
        .map(|&r| inst.flow_utility(r, rates[r]).scale(inst.payoff_weight(r)))
        .sum()
}

/// `Q_l = sum_r a_lr b_r u_r(x_r)`. A link carrying no flows earns 0.
pub fn payoff(
    inst: &NetworkInstance,
    s: &StrategyProfile,
    link: usize,
) -> Result<Welfare, ModelError> {
    let rates = rates_of(inst, s)?;
    Ok(payoff_from_rates(inst, &rates, link))
}

/// Payoffs of all players.
pub fn payoffs(inst: &NetworkInstance, s: &StrategyProfile) -> Result<Vec<Welfare>, ModelError> {
    let rates = rates_of(inst, s)?;
    Ok((0..inst.num_links())
        .map(|l| payoff_from_rates(inst, &rates, l))
        .collect())
}

/// Social welfare of a rate vector, `sum_r u_r(x_r)`.
pub fn welfare_of_rates(inst: &NetworkInstance, rates: &[f64]) -> Welfare {
    rates
        .iter()
        .enumerate()
        .map(|(r, &x)| inst.flow_utility(r, x))
        .sum()
}

/// Social welfare of a profile.
pub fn welfare(inst: &NetworkInstance, s: &StrategyProfile) -> Result<Welfare, ModelError> {
    let rates = rates_of(inst, s)?;
    Ok(welfare_of_rates(inst, &rates))
}
