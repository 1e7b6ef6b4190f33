mod common;

use capgame::equilibrium::{pareto_sample_with, Dominance, ParetoOptions, NASH_TOL};
use capgame::io::{two_link, long_path};
use capgame::{
    dual_solve, equal_allocation_equilibria, iterated_allocation, nash_check,
    pareto_dominance_sample, poa_pos_empirical, serial_candidate_equilibria, serial_instance,
    serial_poa, EquilibriumError, NetworkInstance, PayoffMode, Ratio, SerialPoAInputs,
    StrategyProfile,
};

fn inputs(links: usize, gamma: f64, chi: f64, long_b: f64) -> SerialPoAInputs {
    SerialPoAInputs {
        links,
        gamma,
        local_weights: vec![1.0; links],
        long_weight: chi * links as f64,
        long_b,
    }
}

#[test]
fn iterated_profiles_resist_pareto_sampling() {
    for (seed, inst) in common::corpus_sized(40, 6, 8) {
        let (s, _) = iterated_allocation(&inst).unwrap();
        let res = pareto_dominance_sample(&inst, &s, 500, seed).unwrap();
        assert!(
            !res.dominating_found,
            "seed {seed}: witness {:?}",
            res.witness.map(|w| w.to_rows())
        );
    }
}

#[test]
fn one_step_profile_is_weakly_but_not_strictly_dominated() {
    let inst = two_link(PayoffMode::Uniform);
    let s = capgame::alloc::one_step_profile(&inst);
    let strong = pareto_dominance_sample(&inst, &s, 5000, 3).unwrap();
    assert!(strong.dominating_found);
    let weak = pareto_sample_with(
        &inst,
        &s,
        &ParetoOptions {
            trials: 5000,
            seed: 3,
            dominance: Dominance::Weak,
        },
    )
    .unwrap();
    assert!(!weak.dominating_found);
}

#[test]
fn oracle_pinned_profile_fails_under_path_length_payoffs() {
    let inst = long_path();
    let opt = dual_solve(&inst, 1e-12, 100_000).unwrap();
    let s = StrategyProfile::pinned_to_rates(&inst, &opt.rates);
    let report = nash_check(&inst, &s, NASH_TOL).unwrap();
    assert!(!report.is_nash);
    assert_eq!(report.worst_link(), Some(0));
    // Under uniform payoffs the same profile is an equilibrium.
    let uniform = inst.with_payoff_mode(PayoffMode::Uniform);
    assert!(nash_check(&uniform, &s, 1e-5).unwrap().is_nash);
}

#[test]
fn poa_limits_in_chi() {
    let grid = [1e-6, 1e-3, 0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0, 1e4];
    for links in [2, 5, 10] {
        for gamma in [0.25, 0.5, 0.75] {
            for long_b in [1.0, 1.0 / links as f64] {
                let rows: Vec<_> = grid
                    .iter()
                    .map(|&chi| serial_poa(&inputs(links, gamma, chi, long_b)).unwrap())
                    .collect();
                // The first candidate's ratio grows monotonically with chi.
                for w in rows.windows(2) {
                    assert!(w[1].poa1 >= w[0].poa1, "{links} {gamma} {long_b}");
                }
                assert!(rows.iter().all(|p| p.poa >= 1.0 - 1e-12));
                assert!(rows[0].poa <= 1.001);
                assert!(rows[rows.len() - 1].poa > 10.0);
            }
        }
    }
}

#[test]
fn poa_is_not_monotone_in_chi() {
    // The second candidate peaks at intermediate chi; enumeration confirms.
    let at = |chi: f64| {
        let p = serial_poa(&inputs(5, 0.25, chi, 1.0)).unwrap();
        let inst = serial_instance(5, 6.0, &[1.0; 5], chi * 5.0, 0.25, PayoffMode::Uniform).unwrap();
        let eqs = serial_candidate_equilibria(&inst).unwrap();
        let enumerated = poa_pos_empirical(&inst, &eqs).unwrap().poa_lower_bound.finite().unwrap();
        assert!((enumerated - p.poa).abs() <= 1e-6 * p.poa);
        p.poa
    };
    let (low, mid, high) = (at(0.1), at(0.3), at(1.0));
    assert!(mid > low && mid > high, "{low} {mid} {high}");
}

#[test]
fn poa_bound_at_chi_one() {
    for links in 2..=10 {
        for gamma in [0.25, 0.5, 0.75] {
            let b = 1.0 / links as f64;
            let p = serial_poa(&inputs(links, gamma, 1.0, b)).unwrap();
            let bb = b.powf(1.0 / gamma);
            let bound = (1.0 + bb).powf(1.0 - gamma) / bb;
            assert!(p.poa <= bound * (1.0 + 1e-12), "{links} {gamma}: {} > {bound}", p.poa);
        }
    }
}

#[test]
fn closed_form_matches_enumeration_under_uniform_payoffs() {
    for (links, gamma, chi) in [(2, 0.5, 1.0), (3, 0.25, 0.3), (4, 0.75, 2.0), (2, 0.5, 20.0)] {
        let p = serial_poa(&inputs(links, gamma, chi, 1.0)).unwrap();
        let inst = serial_instance(
            links,
            6.0,
            &vec![1.0; links],
            chi * links as f64,
            gamma,
            PayoffMode::Uniform,
        )
        .unwrap();
        let eqs = serial_candidate_equilibria(&inst).unwrap();
        let emp = poa_pos_empirical(&inst, &eqs).unwrap();
        let enumerated = emp.poa_lower_bound.finite().unwrap();
        assert!(
            (enumerated - p.poa).abs() <= 1e-6 * p.poa,
            "{links} {gamma} {chi}: {enumerated} vs {}",
            p.poa
        );
    }
}

#[test]
fn two_link_serial_values() {
    let p = serial_poa(&SerialPoAInputs {
        links: 2,
        gamma: 0.5,
        local_weights: vec![1.0, 1.0],
        long_weight: 2.0,
        long_b: 1.0,
    })
    .unwrap();
    assert!((p.poa1 - 2f64.sqrt()).abs() < 1e-12);
    assert!((p.poa2 - 8f64.sqrt() * 5f64.sqrt() / 6.0).abs() < 1e-12);
    assert_eq!(p.poa, p.poa1);
}

#[test]
fn serial_candidates_are_equilibria() {
    for mode in [PayoffMode::Uniform, PayoffMode::PathLength] {
        let inst = serial_instance(3, 6.0, &[1.0, 2.0, 3.0], 4.0, 0.5, mode).unwrap();
        for s in serial_candidate_equilibria(&inst).unwrap() {
            assert!(nash_check(&inst, &s, NASH_TOL).unwrap().is_nash);
        }
    }
    assert!(matches!(
        serial_candidate_equilibria(&two_link(PayoffMode::Uniform)),
        Err(EquilibriumError::NotSerial(_))
    ));
}

#[test]
fn empirical_bounds_reject_non_equilibria_and_empty_sets() {
    let inst = serial_instance(2, 6.0, &[1.0, 1.0], 2.0, 0.5, PayoffMode::Uniform).unwrap();
    assert_eq!(poa_pos_empirical(&inst, &[]), Err(EquilibriumError::Empty));
    let one_step = capgame::alloc::one_step_profile(&inst);
    let mut lopsided = one_step.clone();
    lopsided.set(0, 0, 1.0);
    lopsided.set(0, 2, 1.0);
    assert!(matches!(
        poa_pos_empirical(&inst, &[lopsided]),
        Err(EquilibriumError::NotEquilibrium { index: 0, .. })
    ));
}

#[test]
fn zero_profile_makes_poa_unbounded() {
    let inst = NetworkInstance::from_rows(
        &["11", "11"],
        vec![5.0, 7.0],
        0.5,
        vec![1.0, 1.0],
        PayoffMode::PathLength,
    )
    .unwrap();
    let zero = equal_allocation_equilibria(&inst, &[0.0, 0.0]).unwrap();
    let positive = equal_allocation_equilibria(&inst, &[2.5, 2.5]).unwrap();
    let emp = poa_pos_empirical(&inst, &[zero, positive]).unwrap();
    assert_eq!(emp.poa_lower_bound, Ratio::Unbounded);
    // Equal split of the bottleneck is the optimum here.
    let pos = emp.pos_upper_bound.finite().unwrap();
    assert!((pos - 1.0).abs() < 1e-6, "pos {pos}");
}

/// Welfare ratio of the second serial candidate derived directly from its
/// allocations: `k / C = omega^(1/g) / (omega^(1/g) + B)` with
/// `B = (b w)^(1/g)`.
fn derived_poa2(p: &SerialPoAInputs) -> f64 {
    let g = p.gamma;
    let w_total: f64 = p.local_weights.iter().sum();
    let omega = p.local_weights.iter().copied().fold(0.0, f64::max);
    let big_b = (p.long_b * p.long_weight).powf(1.0 / g);
    let om = omega.powf(1.0 / g);
    (w_total.powf(1.0 / g) + p.long_weight.powf(1.0 / g)).powf(g) * (om + big_b).powf(1.0 - g)
        / (w_total * omega.powf(1.0 / g - 1.0) + p.long_weight * big_b.powf(1.0 - g))
}

#[test]
fn path_length_second_candidate_matches_derived_ratio() {
    let mut max_discrepancy: f64 = 0.0;
    for (links, gamma, chi) in [(2, 0.5, 1.0), (3, 0.5, 0.3), (4, 0.75, 2.0), (3, 0.25, 0.5)] {
        let p = inputs(links, gamma, chi, 1.0 / links as f64);
        let closed = serial_poa(&p).unwrap();
        let inst = serial_instance(
            links,
            6.0,
            &vec![1.0; links],
            p.long_weight,
            gamma,
            PayoffMode::PathLength,
        )
        .unwrap();
        let eqs = serial_candidate_equilibria(&inst).unwrap();
        let enumerated = poa_pos_empirical(&inst, &eqs).unwrap().poa_lower_bound.finite().unwrap();
        let derived = closed.poa1.max(derived_poa2(&p));
        assert!((enumerated - derived).abs() <= 1e-6 * derived, "{enumerated} vs {derived}");
        max_discrepancy = max_discrepancy.max((closed.poa - enumerated).abs());
    }
    // The closed form for b < 1 departs from the enumerated value.
    assert!(max_discrepancy > 1e-3, "{max_discrepancy}");
    // At b = 1 the two expressions coincide.
    let p = inputs(3, 0.5, 0.3, 1.0);
    assert!((serial_poa(&p).unwrap().poa2 - derived_poa2(&p)).abs() < 1e-12);
}
