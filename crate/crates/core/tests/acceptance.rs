//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use capgame::alloc::one_step_profile;
use capgame::equilibrium::{poa_pos_empirical_with, PoaOptions, NASH_TOL};
use capgame::io::{two_link, long_path};
use capgame::oracle::{SolverOptions, StepRule};
use capgame::{
    best_response, brute_force_solve, capped_water_fill, dual_solve, dual_solve_with,
    equal_allocation_equilibria, iterated_allocation, message_audit, nash_check,
    poa_pos_empirical, random_instance, rates_of, run_simulation, serial_candidate_equilibria,
    serial_instance, serial_poa, welfare, AllocError, BudgetEntry, CappedBudgetProblem,
    NetworkInstance, PayoffMode, RandomInstanceSpec, Ratio, SerialPoAInputs, StrategyProfile,
    Welfare,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_budget(elapsed: Duration, budget: Duration) -> Outcome {
    ensure!(
        elapsed < budget,
        "took {:.3} ms, budget {:.3} ms",
        elapsed.as_secs_f64() * 1e3,
        budget.as_secs_f64() * 1e3
    );
    Ok(String::new())
}

fn rows_close(s: &StrategyProfile, expected: &[[f64; 3]], tol: f64) -> bool {
    expected
        .iter()
        .enumerate()
        .all(|(l, row)| row.iter().enumerate().all(|(r, v)| (s.get(l, r) - v).abs() <= tol))
}

fn c1_example_fidelity() -> Outcome {
    let inst = two_link(PayoffMode::Uniform);
    let start = Instant::now();
    let one = one_step_profile(&inst);
    let (two, trace) = iterated_allocation(&inst).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(
        rows_close(&one, &[[5.0, 5.0, 0.0], [50.0, 0.0, 50.0]], 1e-12),
        "one-step rows {:?}",
        one.to_rows()
    );
    ensure!(
        rows_close(&two, &[[5.0, 5.0, 0.0], [5.0, 0.0, 95.0]], 1e-12),
        "iterated rows {:?}",
        two.to_rows()
    );
    ensure!(trace.len() == 2, "{} iterations", trace.len());
    ensure!(
        trace.iterations[0].filled == vec![0] && trace.iterations[0].phi == 0,
        "iteration 1 filled {:?}",
        trace.iterations[0].filled
    );
    within_budget(elapsed, Duration::from_millis(1))?;
    Ok(format!("2 iterations, {:.1} us", elapsed.as_secs_f64() * 1e6))
}

fn c2_long_path_deviation() -> Outcome {
    let inst = long_path();
    let start = Instant::now();
    // Optimum of max 10 ln x0 + 2 ln x1 s.t. x0 + x1 <= 6 is (5, 1).
    let s = StrategyProfile::pinned_to_rates(&inst, &[5.0, 1.0]);
    let (row, q) = best_response(&inst, &s, 0).map_err(|e| e.to_string())?;
    let report = nash_check(&inst, &s, NASH_TOL).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let expected = 2f64.ln() + 2.0 * 4f64.ln();
    ensure!(
        (row[0] - 2.0).abs() <= 1e-9 && (row[1] - 4.0).abs() <= 1e-9,
        "deviation {row:?}"
    );
    ensure!((q.to_f64() - expected).abs() <= 1e-9, "payoff {q}");
    ensure!(expected > 5f64.ln(), "no improvement");
    ensure!(!report.is_nash, "nash_check passed");

    // The same verdict at the rates produced by the optimum oracle.
    let opt = dual_solve(&inst, 1e-12, 100_000).map_err(|e| e.to_string())?;
    ensure!(
        (opt.rates[0] - 5.0).abs() <= 1e-6 && (opt.rates[1] - 1.0).abs() <= 1e-6,
        "oracle rates {:?}",
        opt.rates
    );
    let s_opt = StrategyProfile::pinned_to_rates(&inst, &opt.rates);
    ensure!(
        !nash_check(&inst, &s_opt, NASH_TOL).map_err(|e| e.to_string())?.is_nash,
        "oracle-pinned profile passed"
    );
    within_budget(elapsed, Duration::from_millis(10))?;
    Ok(format!(
        "deviation (2, 4) gains {:.4}, {:.2} ms",
        expected - 5f64.ln(),
        elapsed.as_secs_f64() * 1e3
    ))
}

fn c3_equilibrium_suite() -> Outcome {
    let corpus = common::corpus();
    let start = Instant::now();
    let mut worst_gap: f64 = 0.0;
    for (seed, inst) in &corpus {
        let (s, trace) = match iterated_allocation(inst) {
            Ok(v) => v,
            Err(e @ AllocError::EmptyFilledSet { .. }) => {
                return Err(format!("seed {seed}: filled-set assertion fired: {e}"))
            }
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        ensure!(
            trace.len() <= inst.num_links(),
            "seed {seed}: {} iterations > {} links",
            trace.len(),
            inst.num_links()
        );
        let report = nash_check(inst, &s, 1e-6).map_err(|e| e.to_string())?;
        ensure!(report.is_nash, "seed {seed}: nash gap {:.3e}", report.max_gap);
        worst_gap = worst_gap.max(report.max_gap);
        let x = rates_of(inst, &s).map_err(|e| e.to_string())?;
        for l in 0..inst.num_links() {
            for &r in inst.flows_on(l) {
                ensure!(s.get(l, r) == x[r], "seed {seed}: s[{l}][{r}] != x[{r}]");
            }
        }
        let w1 = welfare(inst, &one_step_profile(inst)).map_err(|e| e.to_string())?;
        ensure!(report.welfare >= w1, "seed {seed}: welfare {} < one-step {w1}", report.welfare);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {:.1} s", elapsed.as_secs_f64());
    Ok(format!(
        "{} instances, worst gap {worst_gap:.2e}, {:.2} s",
        corpus.len(),
        elapsed.as_secs_f64()
    ))
}

fn c4_large_experiment() -> Outcome {
    let inst = random_instance(&RandomInstanceSpec {
        links: 100,
        flows: 200,
        p_route: 0.5,
        cap_range: (10.0, 100.0),
        gamma: 0.5,
        payoff_mode: PayoffMode::PathLength,
        seed: 2024,
        randomize_weights: false,
    })
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (s, trace) = iterated_allocation(&inst).map_err(|e| e.to_string())?;
    let w = welfare(&inst, &s).map_err(|e| e.to_string())?.to_f64();
    let opt = dual_solve(&inst, 1e-9, 100_000)
        .and_then(|o| o.require_converged())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(trace.len() <= 10, "{} iterations", trace.len());
    let ratio = w / opt.objective;
    ensure!(ratio >= 0.90, "welfare ratio {ratio:.4}");
    ensure!(elapsed < Duration::from_secs(30), "took {:.1} s", elapsed.as_secs_f64());
    Ok(format!(
        "{} iterations, welfare/optimum {ratio:.4}, {:.2} s",
        trace.len(),
        elapsed.as_secs_f64()
    ))
}

/// `2 h sum_r u_r'(max(x_r, h))`: value lost by rounding each rate down to
/// the grid.
fn grid_bound(inst: &NetworkInstance, rates: &[f64], h: f64) -> f64 {
    2.0 * h
        * rates
            .iter()
            .zip(inst.weights())
            .map(|(x, w)| w * x.max(h).powf(-inst.gamma()))
            .sum::<f64>()
}

fn c5_oracle_cross_check() -> Outcome {
    let start = Instant::now();
    let tiny = common::tiny_corpus(24, 5);
    let mut worst: f64 = 0.0;
    for (i, inst) in tiny.iter().enumerate() {
        let dual = dual_solve(inst, 1e-10, 100_000)
            .and_then(|o| o.require_converged())
            .map_err(|e| format!("instance {i}: {e}"))?;
        let step = if inst.num_flows() >= 4 { 0.1 } else { 0.05 };
        let grid = brute_force_solve(inst, step).map_err(|e| format!("instance {i}: {e}"))?;
        let tol = grid_bound(inst, &dual.rates, step).max(1e-3);
        let diff = dual.objective - grid.objective;
        ensure!(
            diff >= -1e-9 && diff <= tol,
            "instance {i}: dual {} vs grid {} (tol {tol:.3e})",
            dual.objective,
            grid.objective
        );
        worst = worst.max(diff / tol);
    }

    // Example network: 3 x^2 - 220 x + 1000 = 0 at the optimum.
    let inst = two_link(PayoffMode::Uniform);
    let x1 = (220.0 - (220.0f64 * 220.0 - 12_000.0).sqrt()) / 6.0;
    let analytic = x1.ln() + (10.0 - x1).ln() + (100.0 - x1).ln();
    let dual = dual_solve(&inst, 1e-12, 100_000).map_err(|e| e.to_string())?;
    ensure!(
        (dual.objective - analytic).abs() <= 1e-3 && (analytic - 7.7736).abs() <= 1e-3,
        "example optimum {} vs {analytic}",
        dual.objective
    );
    Ok(format!(
        "{} tiny instances, worst diff/tol {worst:.3}, optimum {:.6}, {:.2} s",
        tiny.len(),
        dual.objective,
        start.elapsed().as_secs_f64()
    ))
}

fn c6_optimum_is_equilibrium() -> Outcome {
    let start = Instant::now();
    let solver_tol: f64 = 1e-10;
    let tol = (10.0 * solver_tol).max(1e-5);
    let tiny = common::tiny_corpus(60, 6);
    let mut worst: f64 = 0.0;
    for (i, inst) in tiny.iter().enumerate() {
        let opt = dual_solve(inst, solver_tol, 200_000)
            .and_then(|o| o.require_converged())
            .map_err(|e| format!("instance {i}: {e}"))?;
        let s = StrategyProfile::pinned_to_rates(inst, &opt.rates);
        let report = nash_check(inst, &s, tol).map_err(|e| e.to_string())?;
        ensure!(report.is_nash, "instance {i}: gap {:.3e}", report.max_gap);
        worst = worst.max(report.max_gap);
    }
    Ok(format!(
        "{} instances, worst gap {worst:.2e}, {:.2} s",
        tiny.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn c7_serial_poa() -> Outcome {
    let start = Instant::now();
    let near_zero = serial_poa(&SerialPoAInputs {
        links: 4,
        gamma: 0.5,
        local_weights: vec![1.0; 4],
        long_weight: 4e-6,
        long_b: 1.0,
    })
    .map_err(|e| e.to_string())?;
    ensure!(
        (1.0..=1.001).contains(&near_zero.poa),
        "poa(1e-6) = {}",
        near_zero.poa
    );
    let mut max_at_one: f64 = 0.0;
    for links in 2..=10 {
        for gamma in [0.25, 0.5, 0.75] {
            let p = serial_poa(&SerialPoAInputs {
                links,
                gamma,
                local_weights: vec![1.0; links],
                long_weight: links as f64,
                long_b: 1.0,
            })
            .map_err(|e| e.to_string())?;
            ensure!(p.poa <= 2.0, "L = {links}, gamma = {gamma}: poa {}", p.poa);
            max_at_one = max_at_one.max(p.poa);
        }
    }

    // Enumeration: the two candidate equilibria against the optimum.
    let (links, gamma, locals, long) = (3, 0.5, vec![1.0, 2.0, 3.0], 3.0);
    let closed = serial_poa(&SerialPoAInputs {
        links,
        gamma,
        local_weights: locals.clone(),
        long_weight: long,
        long_b: 1.0,
    })
    .map_err(|e| e.to_string())?;
    let inst = serial_instance(links, 6.0, &locals, long, gamma, PayoffMode::Uniform)
        .map_err(|e| e.to_string())?;
    let eqs = serial_candidate_equilibria(&inst).map_err(|e| e.to_string())?;
    let emp = poa_pos_empirical_with(
        &inst,
        &eqs,
        &PoaOptions {
            oracle_tol: 1e-13,
            ..PoaOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let enumerated = emp.poa_lower_bound.finite().ok_or("unbounded enumeration")?;
    ensure!(
        (enumerated - closed.poa).abs() <= 1e-6,
        "closed form {} vs enumeration {enumerated}",
        closed.poa
    );
    Ok(format!(
        "poa(1e-6) = {:.7}, max poa(chi=1) = {max_at_one:.4}, enumeration diff {:.1e}, {:.2} s",
        near_zero.poa,
        (enumerated - closed.poa).abs(),
        start.elapsed().as_secs_f64()
    ))
}

fn c8_simnet_equivalence() -> Outcome {
    let start = Instant::now();
    let corpus = common::corpus();
    let mut worst: f64 = 0.0;
    let mut messages = 0;
    for (seed, inst) in &corpus {
        let (central, _) = iterated_allocation(inst).map_err(|e| e.to_string())?;
        let sim = run_simulation(inst, 10_000).map_err(|e| format!("seed {seed}: {e}"))?;
        let diff = sim.profile.max_abs_diff(&central);
        ensure!(diff <= 1e-9, "seed {seed}: profiles differ by {diff:.3e}");
        worst = worst.max(diff);
        let audit = message_audit(inst, &sim.log);
        ensure!(audit.locality_ok, "seed {seed}: offending {:?}", audit.offending);
        messages += sim.messages;
    }
    Ok(format!(
        "{} instances, max diff {worst:.1e}, {messages} messages, {:.2} s",
        corpus.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn c9_water_fill_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cases = 1000;
    for case in 0..cases {
        let n = rng.gen_range(1..=10);
        let entries: Vec<BudgetEntry> = (0..n)
            .map(|flow| BudgetEntry {
                flow,
                weight: rng.gen_range(0.01..10.0),
                cap: rng.gen_bool(0.6).then(|| rng.gen_range(0.0..50.0)),
            })
            .collect();
        let b1 = rng.gen_range(0.0..100.0);
        let b2 = b1 + rng.gen_range(0.0..100.0);
        let p1 = CappedBudgetProblem::new(b1, entries).map_err(|e| e.to_string())?;
        let p2 = p1.with_budget(b2).map_err(|e| e.to_string())?;
        let a1 = capped_water_fill(&p1).amounts;
        let a2 = capped_water_fill(&p2).amounts;
        for (m, (x1, x2)) in a1.iter().zip(&a2).enumerate() {
            ensure!(*x2 >= x1 - 1e-12, "case {case}, component {m}: {x1} -> {x2}");
        }
    }
    Ok(format!("{cases} problems"))
}

fn c10_zero_allocation() -> Outcome {
    let inst = NetworkInstance::from_rows(
        &["110", "011", "111"],
        vec![20.0, 30.0, 40.0],
        0.5,
        vec![1.0, 2.0, 3.0],
        PayoffMode::Uniform,
    )
    .map_err(|e| e.to_string())?;
    let zero = equal_allocation_equilibria(&inst, &[0.0; 3]).map_err(|e| e.to_string())?;
    let report = nash_check(&inst, &zero, NASH_TOL).map_err(|e| e.to_string())?;
    ensure!(report.is_nash, "gap {:.3e}", report.max_gap);
    ensure!(report.welfare == Welfare::Finite(0.0), "welfare {}", report.welfare);
    let emp = poa_pos_empirical(&inst, &[zero]).map_err(|e| e.to_string())?;
    ensure!(
        emp.poa_lower_bound == Ratio::Unbounded,
        "poa bound {}",
        emp.poa_lower_bound
    );
    Ok(format!("poa {}, optimum {:.4}", emp.poa_lower_bound, emp.oracle_welfare))
}

fn main() {
    // Warm up the allocator so the first timed criterion does not pay for
    // page faults.
    let _ = iterated_allocation(&two_link(PayoffMode::Uniform));
    let _ = dual_solve_with(
        &two_link(PayoffMode::Uniform),
        &SolverOptions {
            step: StepRule::Spectral,
            ..SolverOptions::new(1e-9, 1000)
        },
    );

    let criteria: [Criterion; 10] = [
        ("example fidelity", c1_example_fidelity),
        ("long-path deviation", c2_long_path_deviation),
        ("equilibrium property suite", c3_equilibrium_suite),
        ("large random experiment", c4_large_experiment),
        ("oracle cross-check", c5_oracle_cross_check),
        ("uniform optimum is an equilibrium", c6_optimum_is_equilibrium),
        ("serial price of anarchy", c7_serial_poa),
        ("simulation equivalence", c8_simnet_equivalence),
        ("water-fill monotonicity", c9_water_fill_monotonicity),
        ("zero-allocation equilibrium", c10_zero_allocation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail} [{ms:.1} ms]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {why} [{ms:.1} ms]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
