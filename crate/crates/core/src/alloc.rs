//! Strategy computation: the local one-step allocator and the iterated
//! allocation algorithm.
//!
//! Both rely on one fact about isoelastic utilities: maximizing
//! `sum_r b_r u_r(s_r)` over a budget splits it proportionally to
//! `v_r = (b_r w_r)^(1/gamma)`. With per-entry caps this becomes a
//! water-filling problem, solved by [`capped_water_fill`].

use thiserror::Error;

use crate::model::{path_minima, NetworkInstance, StrategyProfile};

/// Relative slack used to decide that a link is filled.
pub const SATURATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("budget must be non-negative and finite, got {0}")]
    Budget(f64),
    #[error("entry {index}: weight must be positive and finite, got {value}")]
    Weight { index: usize, value: f64 },
    #[error("entry {index}: cap must be positive, got {value}")]
    Cap { index: usize, value: f64 },
    #[error(
        "iteration {iteration}: {unsaturated} unsaturated flows remain but no filled link carries one"
    )]
    EmptyFilledSet {
        iteration: usize,
        unsaturated: usize,
    },
    #[error("iteration bound exceeded: {iterations} iterations on {links} links")]
    IterationBound { iterations: usize, links: usize },
    #[error("link index {link} out of range for {links} links")]
    LinkOutOfRange { link: usize, links: usize },
}

/// One entry of a [`CappedBudgetProblem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetEntry {
    pub flow: usize,
    /// `v = (b w)^(1/gamma)`; the uncapped optimum is proportional to it.
    pub weight: f64,
    /// `None` means unbounded.
    pub cap: Option<f64>,
}

/// Maximize `sum_m f_m(alpha_m)` subject to `sum alpha <= budget` and
/// `alpha_m <= cap_m`, where each `f_m` is isoelastic with share weight
/// `weight_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CappedBudgetProblem {
    budget: f64,
    entries: Vec<BudgetEntry>,
}

impl CappedBudgetProblem {
    pub fn new(budget: f64, entries: Vec<BudgetEntry>) -> Result<Self, AllocError> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(AllocError::Budget(budget));
        }
        for (index, e) in entries.iter().enumerate() {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(AllocError::Weight {
                    index,
                    value: e.weight,
                });
            }
            if let Some(cap) = e.cap {
                if cap.is_nan() || cap <= 0.0 {
                    return Err(AllocError::Cap { index, value: cap });
                }
            }
        }
        Ok(Self { budget, entries })
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn entries(&self) -> &[BudgetEntry] {
        &self.entries
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self, AllocError> {
        Self::new(budget, self.entries.clone())
    }
}

/// Solution of a [`CappedBudgetProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill {
    /// One amount per entry, in entry order.
    pub amounts: Vec<f64>,
    /// Budget left over because every entry hit its cap.
    pub slack: f64,
    pub rounds: usize,
}

/// Repeated proportional split among uncapped entries, clamping violators
/// to their caps. The water level only rises between rounds, so an entry
/// clamped once stays clamped; at most `entries.len()` rounds run.
pub fn capped_water_fill(p: &CappedBudgetProblem) -> WaterFill {
    let n = p.entries.len();
    let mut amounts = vec![0.0; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut remaining = p.budget;
    let mut rounds = 0;

    while !active.is_empty() {
        rounds += 1;
        let total: f64 = active.iter().map(|&i| p.entries[i].weight).sum();
        let mut clamped = false;
        active.retain(|&i| {
            let e = &p.entries[i];
            match e.cap {
                Some(cap) if remaining * e.weight / total > cap => {
                    amounts[i] = cap;
                    clamped = true;
                    false
                }
                _ => true,
            }
        });
        if clamped {
            let capped: f64 = (0..n)
                .filter(|i| !active.contains(i))
                .map(|i| amounts[i])
                .sum();
            remaining = (p.budget - capped).max(0.0);
            continue;
        }
        for &i in &active {
            amounts[i] = remaining * p.entries[i].weight / total;
        }
        remaining = 0.0;
        break;
    }

    WaterFill {
        amounts,
        slack: remaining,
        rounds,
    }
}

/// Splits `budget` among `flows` proportionally to their share weights.
/// This is [`capped_water_fill`] without caps, inlined so that the
/// centralized algorithm and the simulation use identical arithmetic.
pub(crate) fn proportional_split(
    inst: &NetworkInstance,
    flows: impl Iterator<Item = usize> + Clone,
    budget: f64,
    row: &mut [f64],
) {
    let total: f64 = flows.clone().map(|r| inst.share_weight(r)).sum();
    if total <= 0.0 {
        return;
    }
    for r in flows {
        row[r] = budget * inst.share_weight(r) / total;
    }
}

/// Local one-step allocation of a single link:
/// `s_lr = c_l v_r / sum_{j on l} v_j`.
pub fn one_step_allocation(inst: &NetworkInstance, link: usize) -> Vec<f64> {
    let mut row = vec![0.0; inst.num_flows()];
    proportional_split(
        inst,
        inst.flows_on(link).iter().copied(),
        inst.capacity(link),
        &mut row,
    );
    row
}

/// The one-step profile: every link runs [`one_step_allocation`].
pub fn one_step_profile(inst: &NetworkInstance) -> StrategyProfile {
    let mut s = StrategyProfile::zeros_for(inst);
    for l in 0..inst.num_links() {
        let row = one_step_allocation(inst, l);
        s.set_row(l, &row);
    }
    s
}

/// Re-solves one link's row with saturated flows pinned at `pins[r]` and the
/// residual capacity split among the unsaturated ones.
pub(crate) fn resolve_row(
    inst: &NetworkInstance,
    link: usize,
    unsaturated: &[bool],
    pins: &[f64],
    row: &mut [f64],
) {
    row.iter_mut().for_each(|v| *v = 0.0);
    let mut pinned = 0.0;
    for &r in inst.flows_on(link) {
        if !unsaturated[r] {
            row[r] = pins[r];
            pinned += pins[r];
        }
    }
    let residual = (inst.capacity(link) - pinned).max(0.0);
    let free = inst.flows_on(link).iter().copied().filter(|&r| unsaturated[r]);
    proportional_split(inst, free, residual, row);
}

/// True when the rates on `link` use its whole capacity.
pub(crate) fn is_filled(inst: &NetworkInstance, link: usize, load: f64) -> bool {
    load >= inst.capacity(link) * (1.0 - SATURATION_TOL)
}

/// One iteration of the algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// The profile `S^(n)` computed for this iteration.
    pub profile: StrategyProfile,
    /// Flows not yet saturated when `S^(n)` was computed.
    pub unsaturated: Vec<usize>,
    /// Links whose rates fill their capacity under `S^(n)`.
    pub filled: Vec<usize>,
    /// Smallest-index filled link removed in this iteration.
    pub phi: usize,
    /// Flows that became saturated in this iteration.
    pub newly_saturated: Vec<usize>,
}

/// Per-iteration record of [`iterated_allocation`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationTrace {
    pub iterations: Vec<IterationRecord>,
}

impl AllocationTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// The `phi` of each iteration, in order.
    pub fn removal_order(&self) -> Vec<usize> {
        self.iterations.iter().map(|it| it.phi).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterOptions {
    /// Remove the flows of every filled link in one iteration instead of only
    /// the smallest-index one. The final profile is unchanged.
    pub batch_removal: bool,
}

/// Runs the iterated allocation algorithm and returns the final profile
/// together with its trace.
pub fn iterated_allocation(
    inst: &NetworkInstance,
) -> Result<(StrategyProfile, AllocationTrace), AllocError> {
    iterated_allocation_with(inst, IterOptions::default())
}

pub fn iterated_allocation_with(
    inst: &NetworkInstance,
    opts: IterOptions,
) -> Result<(StrategyProfile, AllocationTrace), AllocError> {
    let links = inst.num_links();
    let flows = inst.num_flows();

    let mut profile = one_step_profile(inst);
    let mut unsaturated = vec![true; flows];
    let mut pins = vec![0.0; flows];
    let mut removed = vec![false; links];
    let mut trace = AllocationTrace::default();

    loop {
        let iteration = trace.len() + 1;
        let rates = path_minima(inst, &profile);
        let loads = inst.loads(&rates);
        let filled: Vec<usize> = (0..links)
            .filter(|&l| is_filled(inst, l, loads[l]))
            .collect();

        // Links already removed, or whose flows are all saturated, remove
        // nothing; skipping them keeps every iteration productive.
        let candidates: Vec<usize> = filled
            .iter()
            .copied()
            .filter(|&l| !removed[l] && inst.flows_on(l).iter().any(|&r| unsaturated[r]))
            .collect();
        let Some(&phi) = candidates.first() else {
            return Err(AllocError::EmptyFilledSet {
                iteration,
                unsaturated: unsaturated.iter().filter(|u| **u).count(),
            });
        };
        let to_remove = if opts.batch_removal {
            candidates
        } else {
            vec![phi]
        };

        let unsat_list: Vec<usize> = (0..flows).filter(|&r| unsaturated[r]).collect();
        let mut newly_saturated = Vec::new();
        for &l in &to_remove {
            removed[l] = true;
            for &r in inst.flows_on(l) {
                if unsaturated[r] {
                    unsaturated[r] = false;
                    pins[r] = rates[r];
                    newly_saturated.push(r);
                }
            }
        }
        newly_saturated.sort_unstable();
        log::debug!(
            "iteration {iteration}: filled {filled:?}, phi {phi}, saturated {newly_saturated:?}"
        );

        trace.iterations.push(IterationRecord {
            profile: profile.clone(),
            unsaturated: unsat_list,
            filled,
            phi,
            newly_saturated,
        });

        if !unsaturated.iter().any(|u| *u) {
            break;
        }
        if trace.len() >= links {
            return Err(AllocError::IterationBound {
                iterations: trace.len() + 1,
                links,
            });
        }

        let mut next = StrategyProfile::zeros_for(inst);
        for l in 0..links {
            resolve_row(inst, l, &unsaturated, &pins, next.row_mut(l));
        }
        profile = next;
    }

    let rates = path_minima(inst, &profile);
    Ok((StrategyProfile::pinned_to_rates(inst, &rates), trace))
}

/// Link order `phi(1), phi(2), ...` followed by the links never removed, in
/// original order. Entry `k` is the original index of the link ranked `k`.
pub fn renumber_links(inst: &NetworkInstance, trace: &AllocationTrace) -> Vec<usize> {
    let mut order = Vec::with_capacity(inst.num_links());
    let mut seen = vec![false; inst.num_links()];
    for it in &trace.iterations {
        if !seen[it.phi] {
            seen[it.phi] = true;
            order.push(it.phi);
        }
    }
    order.extend((0..inst.num_links()).filter(|&l| !seen[l]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PayoffMode;
    use approx::assert_abs_diff_eq;

    fn two_link() -> NetworkInstance {
        NetworkInstance::from_rows(
            &["110", "101"],
            vec![10.0, 100.0],
            1.0,
            vec![1.0; 3],
            PayoffMode::Uniform,
        )
        .unwrap()
    }

    fn entry(flow: usize, weight: f64, cap: Option<f64>) -> BudgetEntry {
        BudgetEntry { flow, weight, cap }
    }

    /// Grid maximizer of `sum_m v_m^gamma a_m^(1-gamma)/(1-gamma)` for two
    /// entries sharing a budget, as an independent check of the closed form.
    fn grid_two(budget: f64, v: [f64; 2], caps: [f64; 2], gamma: f64, step: f64) -> [f64; 2] {
        let f = |a: f64, v: f64| v.powf(gamma) * a.powf(1.0 - gamma) / (1.0 - gamma);
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        let n = (budget / step).round() as usize;
        for i in 0..=n {
            let a0 = (i as f64 * step).min(caps[0]);
            let a1 = (budget - i as f64 * step).max(0.0).min(caps[1]);
            let val = f(a0, v[0]) + f(a1, v[1]);
            if val > best.0 {
                best = (val, [a0, a1]);
            }
        }
        best.1
    }

    #[test]
    fn one_step_two_link() {
        let inst = two_link();
        assert_eq!(one_step_allocation(&inst, 0), vec![5.0, 5.0, 0.0]);
        assert_eq!(one_step_allocation(&inst, 1), vec![50.0, 0.0, 50.0]);
    }

    #[test]
    fn one_step_single_flow_takes_everything() {
        let inst =
            NetworkInstance::from_rows(&["1"], vec![7.0], 0.5, vec![3.0], PayoffMode::Uniform)
                .unwrap();
        assert_eq!(one_step_allocation(&inst, 0), vec![7.0]);
    }

    #[test]
    fn one_step_gamma_half_matches_grid() {
        let inst = NetworkInstance::from_rows(
            &["11"],
            vec![10.0],
            0.5,
            vec![1.0, 4.0],
            PayoffMode::Uniform,
        )
        .unwrap();
        let row = one_step_allocation(&inst, 0);
        assert_abs_diff_eq!(row[0], 10.0 / 17.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 160.0 / 17.0, epsilon = 1e-12);
        let grid = grid_two(10.0, [1.0, 16.0], [f64::INFINITY; 2], 0.5, 1e-4);
        assert_abs_diff_eq!(row[0], grid[0], epsilon = 2e-4);
        assert_abs_diff_eq!(row[1], grid[1], epsilon = 2e-4);
    }

    #[test]
    fn water_fill_uncapped_is_proportional() {
        let p = CappedBudgetProblem::new(
            10.0,
            vec![entry(0, 1.0, None), entry(1, 1.0, None)],
        )
        .unwrap();
        let wf = capped_water_fill(&p);
        assert_eq!(wf.amounts, vec![5.0, 5.0]);
        assert_eq!(wf.slack, 0.0);
    }

    #[test]
    fn water_fill_clamps_and_redistributes() {
        let p = CappedBudgetProblem::new(
            100.0,
            vec![entry(0, 1.0, Some(5.0)), entry(2, 1.0, None)],
        )
        .unwrap();
        let wf = capped_water_fill(&p);
        assert_eq!(wf.amounts, vec![5.0, 95.0]);
        assert_eq!(wf.rounds, 2);
    }

    #[test]
    fn water_fill_inactive_cap() {
        let p = CappedBudgetProblem::new(
            10.0,
            vec![entry(0, 1.0, Some(2.0)), entry(1, 16.0, None)],
        )
        .unwrap();
        let wf = capped_water_fill(&p);
        assert_abs_diff_eq!(wf.amounts[0], 10.0 / 17.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wf.amounts[1], 160.0 / 17.0, epsilon = 1e-12);
        let grid = grid_two(10.0, [1.0, 16.0], [2.0, f64::INFINITY], 0.5, 1e-4);
        assert_abs_diff_eq!(wf.amounts[0], grid[0], epsilon = 2e-4);
    }

    #[test]
    fn water_fill_reports_slack_when_all_capped() {
        let p = CappedBudgetProblem::new(
            10.0,
            vec![entry(0, 1.0, Some(2.0)), entry(1, 3.0, Some(3.0))],
        )
        .unwrap();
        let wf = capped_water_fill(&p);
        assert_eq!(wf.amounts, vec![2.0, 3.0]);
        assert_abs_diff_eq!(wf.slack, 5.0);
    }

    #[test]
    fn water_fill_rejects_bad_problems() {
        assert!(CappedBudgetProblem::new(-1.0, vec![]).is_err());
        assert!(CappedBudgetProblem::new(1.0, vec![entry(0, 0.0, None)]).is_err());
        assert!(CappedBudgetProblem::new(1.0, vec![entry(0, 1.0, Some(0.0))]).is_err());
    }

    #[test]
    fn iterated_two_link() {
        let inst = two_link();
        let (s, trace) = iterated_allocation(&inst).unwrap();
        assert_eq!(s.row(0), &[5.0, 5.0, 0.0]);
        assert_eq!(s.row(1), &[5.0, 0.0, 95.0]);
        assert_eq!(trace.len(), 2);
        let first = &trace.iterations[0];
        assert_eq!(first.filled, vec![0]);
        assert_eq!(first.phi, 0);
        assert_eq!(first.newly_saturated, vec![0, 1]);
        assert_eq!(first.unsaturated, vec![0, 1, 2]);
        let second = &trace.iterations[1];
        assert_eq!(second.unsaturated, vec![2]);
        assert_eq!(second.newly_saturated, vec![2]);
        assert_eq!(second.profile.row(1), &[5.0, 0.0, 95.0]);
        assert_eq!(renumber_links(&inst, &trace), vec![0, 1]);
    }

    #[test]
    fn iterated_single_link_is_one_step() {
        let inst = NetworkInstance::from_rows(
            &["111"],
            vec![9.0],
            0.5,
            vec![1.0, 2.0, 3.0],
            PayoffMode::Uniform,
        )
        .unwrap();
        let (s, trace) = iterated_allocation(&inst).unwrap();
        assert_eq!(trace.len(), 1);
        let row = one_step_allocation(&inst, 0);
        for (r, &v) in row.iter().enumerate() {
            assert_abs_diff_eq!(s.get(0, r), v, epsilon = 1e-12);
        }
    }

    #[test]
    fn iterated_serial_two_links() {
        // locals 0 and 1, long flow 2
        let inst = NetworkInstance::from_rows(
            &["101", "011"],
            vec![6.0, 6.0],
            1.0,
            vec![1.0; 3],
            PayoffMode::Uniform,
        )
        .unwrap();
        let (s, trace) = iterated_allocation(&inst).unwrap();
        let first = &trace.iterations[0];
        assert_eq!(first.profile.row(0), &[3.0, 0.0, 3.0]);
        assert_eq!(first.profile.row(1), &[0.0, 3.0, 3.0]);
        assert_eq!(first.filled, vec![0, 1]);
        assert_eq!(first.phi, 0);
        assert_eq!(trace.len(), 2);
        assert_eq!(crate::model::rates_of(&inst, &s).unwrap().0, vec![3.0, 3.0, 3.0]);

        let (batch, bt) =
            iterated_allocation_with(&inst, IterOptions { batch_removal: true }).unwrap();
        assert_eq!(bt.len(), 1);
        assert_eq!(batch, s);
    }

    #[test]
    fn renumber_when_second_link_fills_first() {
        let inst = NetworkInstance::from_rows(
            &["110", "101"],
            vec![100.0, 10.0],
            1.0,
            vec![1.0; 3],
            PayoffMode::Uniform,
        )
        .unwrap();
        let (s, trace) = iterated_allocation(&inst).unwrap();
        assert_eq!(trace.iterations[0].filled, vec![1]);
        assert_eq!(renumber_links(&inst, &trace), vec![1, 0]);
        assert_eq!(s.row(0), &[5.0, 95.0, 0.0]);
    }
}
