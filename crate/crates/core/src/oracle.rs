//! Reference solvers for the NUM problem
//! `max sum_r u_r(x_r)  s.t.  A x <= c, x >= 0`.
//!
//! [`dual_solve`] minimizes the Lagrangian dual over link prices and
//! recovers a feasible primal point; [`brute_force_solve`] enumerates a rate
//! grid on tiny instances and serves as an independent check.

use thiserror::Error;

use crate::model::{marginal_utility, welfare_of_rates, NetworkInstance, RateVector};

/// Lower bound on a path price, keeping `(w/p)^(1/gamma)` finite.
const PRICE_FLOOR: f64 = 1e-12;
/// Largest grid (points over all but the last flow) brute force will scan.
const BRUTE_FORCE_BUDGET: f64 = 5e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("grid step must be positive, got {0}")]
    GridStep(f64),
    #[error("brute force supports at most 4 links and 4 flows, got {links}x{flows}")]
    TooLarge { links: usize, flows: usize },
    #[error("grid of {points:.3e} points exceeds the brute-force budget")]
    GridTooFine { points: f64 },
    #[error("dual solver stopped after {iterations} iterations with relative gap {gap:.3e}")]
    NotConverged { iterations: usize, gap: f64 },
}

/// Step-size rule for the dual price update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Spectral (Barzilai-Borwein) projected gradient with a nonmonotone
    /// Armijo safeguard.
    Spectral,
    /// `alpha_t = alpha0 / sqrt(t)`; `alpha0 = None` uses `1 / max_l c_l`.
    Diminishing { alpha0: Option<f64> },
}

/// Prices and bookkeeping of the dual iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub prices: Vec<f64>,
    pub step: StepRule,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Target relative duality gap, `gap <= tol * max(1, |objective|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub step: StepRule,
    /// Keep the best dual value after every iteration.
    pub record_history: bool,
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            step: StepRule::Spectral,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Feasible rates (`A x <= c`).
    pub rates: RateVector,
    /// Welfare at `rates`.
    pub objective: f64,
    /// Dual bound minus `objective`; for brute force, an a-priori estimate
    /// of the grid discretization loss.
    pub duality_gap: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final dual state; empty prices for brute force.
    pub state: DualState,
    /// Best dual value per iteration, when requested.
    pub dual_history: Vec<f64>,
}

impl OracleResult {
    pub fn require_converged(self) -> Result<Self, OracleError> {
        if self.converged {
            Ok(self)
        } else {
            Err(OracleError::NotConverged {
                iterations: self.iterations,
                gap: self.duality_gap / self.objective.abs().max(1.0),
            })
        }
    }
}

struct Dual<'a> {
    inst: &'a NetworkInstance,
    /// Per-flow upper bound `min_{l on r} c_l`; implied by `A x <= c`.
    rate_cap: Vec<f64>,
}

impl<'a> Dual<'a> {
    fn new(inst: &'a NetworkInstance) -> Self {
        let rate_cap = (0..inst.num_flows())
            .map(|r| {
                inst.links_of(r)
                    .iter()
                    .map(|&l| inst.capacity(l))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Self { inst, rate_cap }
    }

    /// Primal maximizer of the Lagrangian at `prices`.
    fn rates(&self, prices: &[f64]) -> Vec<f64> {
        let gamma = self.inst.gamma();
        (0..self.inst.num_flows())
            .map(|r| {
                let p: f64 = self.inst.links_of(r).iter().map(|&l| prices[l]).sum();
                let p = p.max(PRICE_FLOOR);
                (self.inst.weights()[r] / p).powf(1.0 / gamma).min(self.rate_cap[r])
            })
            .collect()
    }

    /// Dual value and gradient `c - A x(prices)`.
    fn eval(&self, prices: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let x = self.rates(prices);
        let loads = self.inst.loads(&x);
        let mut value: f64 = prices
            .iter()
            .zip(self.inst.capacities())
            .map(|(p, c)| p * c)
            .sum();
        for (r, &xr) in x.iter().enumerate() {
            let p: f64 = self.inst.links_of(r).iter().map(|&l| prices[l]).sum();
            value += self.inst.flow_utility(r, xr).to_f64() - p * xr;
        }
        let grad = self
            .inst
            .capacities()
            .iter()
            .zip(&loads)
            .map(|(c, load)| c - load)
            .collect();
        (value, grad, x)
    }

    /// Scales every flow down by the worst overload on its path.
    fn make_feasible(&self, x: &[f64]) -> Vec<f64> {
        let loads = self.inst.loads(x);
        let over: Vec<f64> = loads
            .iter()
            .zip(self.inst.capacities())
            .map(|(load, c)| (load / c).max(1.0))
            .collect();
        x.iter()
            .enumerate()
            .map(|(r, &xr)| {
                let worst = self
                    .inst
                    .links_of(r)
                    .iter()
                    .map(|&l| over[l])
                    .fold(1.0, f64::max);
                xr / worst
            })
            .collect()
    }

    fn initial_prices(&self) -> Vec<f64> {
        let inst = self.inst;
        (0..inst.num_links())
            .map(|l| {
                let fs = inst.flows_on(l);
                if fs.is_empty() {
                    return 0.0;
                }
                let share = inst.capacity(l) / fs.len() as f64;
                fs.iter()
                    .map(|&r| {
                        marginal_utility(share, inst.weights()[r], inst.gamma())
                            / inst.links_of(r).len() as f64
                    })
                    .sum::<f64>()
                    / fs.len() as f64
            })
            .collect()
    }
}

fn project(v: &mut [f64]) {
    v.iter_mut().for_each(|p| *p = p.max(0.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual projected-gradient solver with the default spectral step rule.
pub fn dual_solve(
    inst: &NetworkInstance,
    tol: f64,
    max_iter: usize,
) -> Result<OracleResult, OracleError> {
    dual_solve_with(inst, &SolverOptions::new(tol, max_iter))
}

pub fn dual_solve_with(
    inst: &NetworkInstance,
    opts: &SolverOptions,
) -> Result<OracleResult, OracleError> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(OracleError::Tolerance(opts.tol));
    }
    let dual = Dual::new(inst);
    let mut prices = dual.initial_prices();
    let (mut value, mut grad, mut x) = dual.eval(&prices);

    let mut best_dual = value;
    let mut best_primal = f64::NEG_INFINITY;
    let mut best_rates = vec![0.0; inst.num_flows()];
    let mut history = Vec::new();

    // spectral state
    const MEMORY: usize = 10;
    let mut recent = vec![value];
    let mut alpha = 1.0 / grad.iter().fold(1e-12f64, |m, g| m.max(g.abs()));
    // diminishing state
    let mut ergodic = vec![0.0; inst.num_flows()];
    let alpha0 = match opts.step {
        StepRule::Diminishing { alpha0 } => {
            alpha0.unwrap_or_else(|| 1.0 / inst.capacities().iter().fold(0.0f64, |m, c| m.max(*c)))
        }
        StepRule::Spectral => 0.0,
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;

        let mut consider = |cand: &[f64]| {
            let feasible = dual.make_feasible(cand);
            let obj = welfare_of_rates(inst, &feasible).to_f64();
            if obj > best_primal {
                best_primal = obj;
                best_rates = feasible;
            }
        };
        consider(&x);
        if let StepRule::Diminishing { .. } = opts.step {
            let t = iterations as f64;
            for (e, xi) in ergodic.iter_mut().zip(&x) {
                *e += (xi - *e) / t;
            }
            consider(&ergodic);
        }
        best_dual = best_dual.min(value);
        if opts.record_history {
            history.push(best_dual);
        }
        let gap = best_dual - best_primal;
        if gap <= opts.tol * best_primal.abs().max(1.0) {
            converged = true;
            break;
        }

        match opts.step {
            StepRule::Spectral => {
                let mut trial: Vec<f64> =
                    prices.iter().zip(&grad).map(|(p, g)| p - alpha * g).collect();
                project(&mut trial);
                let dir: Vec<f64> = trial.iter().zip(&prices).map(|(t, p)| t - p).collect();
                let slope = dot(&grad, &dir);
                if slope >= 0.0 {
                    // stationary to machine precision
                    break;
                }
                let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut step = 1.0;
                let (next, next_value, next_grad, next_x) = loop {
                    let cand: Vec<f64> =
                        prices.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
                    let (v, g, xx) = dual.eval(&cand);
                    if v <= reference + 1e-4 * step * slope || step < 1e-12 {
                        break (cand, v, g, xx);
                    }
                    step *= 0.5;
                };
                let s: Vec<f64> = next.iter().zip(&prices).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                alpha = if sy > 0.0 {
                    (dot(&s, &s) / sy).clamp(1e-12, 1e12)
                } else {
                    1e3 * alpha.max(1e-12)
                };
                prices = next;
                value = next_value;
                grad = next_grad;
                x = next_x;
                recent.push(value);
                if recent.len() > MEMORY {
                    recent.remove(0);
                }
            }
            StepRule::Diminishing { .. } => {
                let step = alpha0 / (iterations as f64).sqrt();
                for (p, g) in prices.iter_mut().zip(&grad) {
                    *p = (*p - step * g).max(0.0);
                }
                let (v, g, xx) = dual.eval(&prices);
                value = v;
                grad = g;
                x = xx;
            }
        }
    }

    if !converged {
        log::warn!(
            "dual solver did not reach tolerance {} in {} iterations (gap {:.3e})",
            opts.tol,
            iterations,
            best_dual - best_primal
        );
    }

    Ok(OracleResult {
        rates: RateVector(best_rates),
        objective: best_primal,
        duality_gap: best_dual - best_primal,
        converged,
        iterations,
        state: DualState {
            prices,
            step: opts.step,
            iteration: iterations,
        },
        dual_history: history,
    })
}

/// Exhaustive search over rates on the grid `{0, h, 2h, ...}`.
///
/// All flows but the last are enumerated; the last takes the largest
/// feasible grid value, which is optimal for it since utilities increase.
pub fn brute_force_solve(
    inst: &NetworkInstance,
    grid_step: f64,
) -> Result<OracleResult, OracleError> {
    let (links, flows) = (inst.num_links(), inst.num_flows());
    if links > 4 || flows > 4 {
        return Err(OracleError::TooLarge { links, flows });
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(OracleError::GridStep(grid_step));
    }
    let dual = Dual::new(inst);
    let points: f64 = dual.rate_cap[..flows - 1]
        .iter()
        .map(|m| (m / grid_step).floor() + 1.0)
        .product();
    if points > BRUTE_FORCE_BUDGET {
        return Err(OracleError::GridTooFine { points });
    }

    struct Search<'a> {
        inst: &'a NetworkInstance,
        h: f64,
        remaining: Vec<f64>,
        current: Vec<f64>,
        best: f64,
        best_rates: Vec<f64>,
    }

    impl Search<'_> {
        fn headroom(&self, r: usize) -> usize {
            let avail = self
                .inst
                .links_of(r)
                .iter()
                .map(|&l| self.remaining[l])
                .fold(f64::INFINITY, f64::min)
                .max(0.0);
            (avail / self.h + 1e-9).floor() as usize
        }

        fn visit(&mut self, r: usize, partial: f64) {
            let last = r + 1 == self.inst.num_flows();
            let top = self.headroom(r);
            let range = if last { top..=top } else { 0..=top };
            for k in range {
                let x = k as f64 * self.h;
                let value = partial + self.inst.flow_utility(r, x).to_f64();
                if last {
                    if value > self.best {
                        self.best = value;
                        self.current[r] = x;
                        self.best_rates.copy_from_slice(&self.current);
                    }
                    continue;
                }
                self.current[r] = x;
                for &l in self.inst.links_of(r) {
                    self.remaining[l] -= x;
                }
                self.visit(r + 1, value);
                for &l in self.inst.links_of(r) {
                    self.remaining[l] += x;
                }
            }
        }
    }

    let mut search = Search {
        inst,
        h: grid_step,
        remaining: inst.capacities().to_vec(),
        current: vec![0.0; flows],
        best: f64::NEG_INFINITY,
        best_rates: vec![0.0; flows],
    };
    search.visit(0, 0.0);

    let gap_estimate: f64 = search
        .best_rates
        .iter()
        .enumerate()
        .map(|(r, &x)| grid_step * marginal_utility(x.max(grid_step), inst.weights()[r], inst.gamma()))
        .sum();

    Ok(OracleResult {
        rates: RateVector(search.best_rates),
        objective: search.best,
        duality_gap: gap_estimate,
        converged: true,
        iterations: 1,
        state: DualState {
            prices: Vec::new(),
            step: StepRule::Spectral,
            iteration: 0,
        },
        dual_history: Vec::new(),
    })
}
