//! Principal's value for a given agent policy, her best-reply cutoff, and
//! the equilibrium fixed point on the cutoff.
//!
//! The value solves a linear second-order equation on a uniform belief
//! grid. The diffusion coefficient vanishes at both ends of the belief
//! interval, so the end values are the exact limits.
//!
//! Dividing the equation by the diffusion, the second difference at a node
//! is exactly the hat-weighted mean of the second derivative. The remaining
//! terms are integrated against the hat functions with the value replaced
//! by its linear interpolant, splitting cells at the policy kinks and at the
//! cutoff. The scheme is second order wherever those points fall, and the
//! value is continuous in the cutoff. Cells where the reaction term swamps
//! the diffusion are lumped onto the diagonal to keep the system monotone.

use serde::Serialize;

use crate::agent::{build_agent_solution, AgentSolution, Regime};
use crate::curve::{Axis, CurveKind, ValueCurve};
use crate::error::{Error, Result};
use crate::model::{arrival_weight, logistic, logit, myopic_cutoffs, termination_payoff_unchecked, GameParams, Numerics};
use crate::numeric::{bisect, linspace, solve_tridiagonal};

const GAUSS_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Hat-function moments of one cell, divided by the cell width:
/// `ll`, `lr`, `rr` of `phi phi / D` and `sl`, `sr` of `phi R / D`.
#[derive(Debug, Clone, Copy, Default)]
struct CellMoments {
    ll: f64,
    lr: f64,
    rr: f64,
    sl: f64,
    sr: f64,
}

impl CellMoments {
    fn add(&mut self, o: &CellMoments) {
        self.ll += o.ll;
        self.lr += o.lr;
        self.rr += o.rr;
        self.sl += o.sl;
        self.sr += o.sr;
    }
}

/// Pieces of `[a, b]` over which the distance to the nearer end of (0, 1)
/// changes by at most a factor of two.
fn graded_pieces(a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut x = a;
    while x < b {
        let next = if x < 0.5 { (2.0 * x).min(0.5) } else { 1.0 - 0.5 * (1.0 - x) };
        let next = if next <= x { b } else { next.min(b) };
        out.push((x, next));
        x = next;
    }
    out
}

/// Cutoff-independent pieces of the principal's equation for one agent policy.
#[derive(Debug, Clone)]
pub struct PrincipalProblem {
    params: GameParams,
    agent: AgentSolution,
    pub grid: Vec<f64>,
    /// `1/2 psi^2 (1-a)^2 (p(1-p))^2` at each node
    pub diffusion: Vec<f64>,
    pub payoff: Vec<f64>,
    /// policy kinks inside the grid, as beliefs
    kinks: Vec<f64>,
    cells: Vec<CellMoments>,
    h: f64,
}

impl PrincipalProblem {
    pub fn new(agent: &AgentSolution, params: &GameParams, grid_n: usize, p_min: f64) -> Result<Self> {
        if grid_n < 201 {
            return Err(Error::Config(format!("grid_n must be at least 201, got {grid_n}")));
        }
        let grid = linspace(p_min, 1.0 - p_min, grid_n);
        let diffusion = grid.iter().map(|&p| 1.0 / inverse_diffusion(agent, params, p)).collect();
        let payoff = grid.iter().map(|&p| termination_payoff_unchecked(p, params)).collect();
        let h = grid[1] - grid[0];
        let mut kinks: Vec<f64> = [agent.z_l, Some(agent.z_star), agent.z_r]
            .into_iter()
            .flatten()
            .map(logistic)
            .filter(|p| *p > grid[0] && *p < grid[grid_n - 1])
            .collect();
        kinks.sort_by(f64::total_cmp);
        let mut prob = PrincipalProblem {
            params: *params,
            agent: agent.clone(),
            grid,
            diffusion,
            payoff,
            kinks,
            cells: Vec::new(),
            h,
        };
        prob.cells = (0..grid_n - 1).map(|j| prob.cell_moments(j, prob.grid[j], prob.grid[j + 1])).collect();
        Ok(prob)
    }

    /// Moments of cell `j` restricted to `[a, b]`, split at the policy kinks.
    fn cell_moments(&self, j: usize, a: f64, b: f64) -> CellMoments {
        let xl = self.grid[j];
        let mut cuts = vec![a];
        cuts.extend(self.kinks.iter().copied().filter(|k| *k > a && *k < b));
        cuts.push(b);
        let mut m = CellMoments::default();
        for w in cuts.windows(2) {
            for (lo, hi) in graded_pieces(w[0], w[1]) {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (gx, gw) in GAUSS_X.iter().zip(GAUSS_W) {
                    let x = mid + half * gx;
                    let wt = gw * half / self.h * inverse_diffusion(&self.agent, &self.params, x);
                    let r = termination_payoff_unchecked(x, &self.params);
                    let pr = (x - xl) / self.h;
                    let pl = 1.0 - pr;
                    m.add(&CellMoments {
                        ll: wt * pl * pl,
                        lr: wt * pl * pr,
                        rr: wt * pr * pr,
                        sl: wt * pl * r,
                        sr: wt * pr * r,
                    });
                }
            }
        }
        m
    }

    /// Value when the principal stops at every opportunity above `p_cut`.
    pub fn solve(&self, p_cut: f64) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let g = &self.params;
        let h2 = self.h * self.h;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for (j, cell) in self.cells.iter().enumerate() {
            let (xl, xr) = (self.grid[j], self.grid[j + 1]);
            // reaction weights on the waiting and stopping parts of the cell
            let (wait, stop) = if p_cut >= xr {
                (*cell, CellMoments::default())
            } else if p_cut <= xl {
                (CellMoments::default(), *cell)
            } else {
                (self.cell_moments(j, xl, p_cut), self.cell_moments(j, p_cut, xr))
            };
            let rate = g.r2 + g.lambda;
            let ll = g.r2 * wait.ll + rate * stop.ll;
            let lr = g.r2 * wait.lr + rate * stop.lr;
            let rr = g.r2 * wait.rr + rate * stop.rr;
            let boundary = j == 0 || j + 2 == n;
            if boundary || lr * h2 <= 1.0 {
                diag[j] += ll;
                upper[j] += lr;
                lower[j + 1] += lr;
                diag[j + 1] += rr;
            } else {
                diag[j] += ll + lr;
                diag[j + 1] += lr + rr;
            }
            rhs[j] += g.lambda * stop.sl;
            rhs[j + 1] += g.lambda * stop.sr;
        }
        for i in 1..n - 1 {
            lower[i] -= 1.0 / h2;
            upper[i] -= 1.0 / h2;
            diag[i] += 2.0 / h2;
        }
        // ends: zero at the bottom, the full-information stop value at the top
        let top = arrival_weight(g) * self.payoff[n - 1];
        lower[1] = 0.0;
        rhs[n - 2] -= upper[n - 2] * top;
        upper[n - 2] = 0.0;
        (lower[0], diag[0], upper[0], rhs[0]) = (0.0, 1.0, 0.0, 0.0);
        (lower[n - 1], diag[n - 1], upper[n - 1], rhs[n - 1]) = (0.0, 1.0, 0.0, top);
        solve_tridiagonal(&lower, &diag, &upper, &rhs)
    }

    /// First crossing of the termination payoff above the value, at or
    /// above `p**`, by quadratic interpolation of the value between nodes.
    pub fn crossing(&self, w: &[f64]) -> Option<f64> {
        let (p_zero, _) = myopic_cutoffs(&self.params);
        let start = self.grid.partition_point(|&p| p < p_zero).max(1);
        for i in start..self.grid.len() {
            let gap = self.payoff[i] - w[i];
            if gap >= 0.0 {
                let prev = self.payoff[i - 1] - w[i - 1];
                if prev >= 0.0 {
                    return Some(self.grid[i - 1]);
                }
                // quadratic value through three nodes; the payoff is affine
                let j = if i + 1 < self.grid.len() { i } else { i - 1 };
                let curv = 0.5 * (w[j + 1] - 2.0 * w[j] + w[j - 1]);
                let shift = (i - j) as f64;
                let f = |t: f64| prev + (gap - prev) * t - curv * (t + shift) * (t + shift - 1.0);
                let df = |t: f64| (gap - prev) - curv * (2.0 * (t + shift) - 1.0);
                let mut t = -prev / (gap - prev);
                for _ in 0..4 {
                    t = (t - f(t) / df(t)).clamp(0.0, 1.0);
                }
                // rounding can land a hair below p** where the value is ~0
                return Some((self.grid[i - 1] + t * self.h).max(p_zero));
            }
        }
        None
    }

    /// Central-difference residual of the equation at interior node `i`.
    pub fn residual(&self, w: &[f64], p_cut: f64, i: usize) -> f64 {
        let g = &self.params;
        let b = if self.grid[i] >= p_cut { 1.0 } else { 0.0 };
        let d2 = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (self.h * self.h);
        g.r2 * w[i] - self.diffusion[i] * d2 - g.lambda * b * (self.payoff[i] - w[i])
    }

    pub fn step(&self) -> f64 {
        self.h
    }
}

fn inverse_diffusion(agent: &AgentSolution, params: &GameParams, p: f64) -> f64 {
    let ln_slack = agent.point(logit(p)).ln_slack;
    let q = p * (1.0 - p);
    // past e^600 the cell is reaction-dominated either way; stay finite
    (-2.0 * ln_slack).min(600.0).exp() / (0.5 * params.psi * params.psi * q * q)
}

/// Principal value on the belief grid for a fixed cutoff.
pub fn solve_value_given_cutoff(
    agent: &AgentSolution,
    p_cut: f64,
    params: &GameParams,
    grid_n: usize,
    numerics: &Numerics,
) -> Result<ValueCurve> {
    if !(p_cut > 0.0 && p_cut < 1.0) {
        return Err(Error::Domain {
            what: "p_cut",
            value: p_cut,
            domain: "(0, 1)".into(),
        });
    }
    let prob = PrincipalProblem::new(agent, params, grid_n, numerics.p_min)?;
    let w = prob.solve(p_cut)?;
    ValueCurve::new(CurveKind::PrincipalValue, Axis::Belief, prob.grid, w)
}

#[derive(Debug, Clone, Serialize)]
pub struct BestReply {
    pub p_cut: f64,
    pub rounds: usize,
    pub w: ValueCurve,
}

/// Optimal cutoff against a fixed agent policy, by policy iteration
/// started from the no-information cutoff.
pub fn best_reply_cutoff(agent: &AgentSolution, params: &GameParams, numerics: &Numerics) -> Result<BestReply> {
    let prob = PrincipalProblem::new(agent, params, numerics.grid_n, numerics.p_min)?;
    best_reply_on(&prob, numerics)
}

/// Plain policy-iteration rounds before falling back to bracketing.
const PLAIN_ROUNDS: usize = 10;

fn best_reply_on(prob: &PrincipalProblem, numerics: &Numerics) -> Result<BestReply> {
    let (p_zero, _) = myopic_cutoffs(&prob.params);
    let top = prob.grid[prob.grid.len() - 1];
    let next_cut = |q: f64| -> Result<f64> {
        let w = prob.solve(q)?;
        prob.crossing(&w).ok_or(Error::Bracket {
            what: "termination payoff minus value",
            lo: p_zero,
            hi: 1.0,
        })
    };
    let finish = |q: f64, rounds: usize| -> Result<BestReply> {
        let w = prob.solve(q)?;
        let curve = ValueCurve::new(CurveKind::PrincipalValue, Axis::Belief, prob.grid.clone(), w)?;
        Ok(BestReply { p_cut: q, rounds, w: curve })
    };
    let mut q = p_zero;
    // cutoffs the map pushed up and down, respectively
    let mut below = f64::NEG_INFINITY;
    let mut above = f64::INFINITY;
    let mut last_change = f64::INFINITY;
    let mut rounds = 0;
    while rounds < numerics.max_policy_rounds {
        rounds += 1;
        let next = next_cut(q)?;
        last_change = (next - q).abs();
        // the crossing can flicker at rounding level instead of repeating exactly
        if last_change <= 1e-12 {
            return finish(next, rounds);
        }
        if next > q {
            below = below.max(q);
        } else {
            above = above.min(q);
        }
        q = next;
        // grid effects can make the iterates turn back, and near-flat gaps
        // make them creep; either way bracket the sign change of the map
        if above.is_finite() || rounds >= PLAIN_ROUNDS {
            break;
        }
    }
    if !above.is_finite() {
        let mut step = 4.0 * last_change;
        let mut x = q;
        while rounds < numerics.max_policy_rounds {
            rounds += 1;
            if next_cut(x)? <= x {
                above = x;
                break;
            }
            below = x;
            if x >= top {
                break;
            }
            x = (x + step).min(top);
            step *= 2.0;
        }
    }
    if !(below.is_finite() && above.is_finite()) {
        return Err(Error::NonConvergence {
            what: "best-reply policy iteration",
            iterations: rounds,
            residual: last_change,
        });
    }
    let mut failed = None;
    let cut = bisect(
        "best-reply bracket",
        |x| match next_cut(x) {
            Ok(y) => y - x,
            Err(e) => {
                failed.get_or_insert(e);
                f64::NAN
            }
        },
        below,
        above,
        numerics.root_tol,
        numerics.max_bisect,
    );
    if let Some(e) = failed {
        return Err(e);
    }
    finish(cut?, rounds)
}

pub fn cutoff_map(params: &GameParams, numerics: &Numerics, p_conjecture: f64) -> Result<f64> {
    let agent = build_agent_solution(params, logit(p_conjecture))?;
    Ok(best_reply_cutoff(&agent, params, numerics)?.p_cut)
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointDiagnostics {
    pub bisection_steps: usize,
    pub best_reply_rounds: usize,
    /// `|phi(p*) - p*|`
    pub residual: f64,
    pub grid_n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub params: GameParams,
    pub numerics: Numerics,
    pub agent: AgentSolution,
    pub p_star: f64,
    /// Mixing-region edges as beliefs (hump-shaped regime only).
    pub p_l: Option<f64>,
    pub p_r: Option<f64>,
    pub w: ValueCurve,
    pub diagnostics: FixedPointDiagnostics,
}

impl Equilibrium {
    pub fn regime(&self) -> Regime {
        self.agent.regime
    }

    pub fn z_star(&self) -> f64 {
        self.agent.z_star
    }

    /// Agent value at belief `p`.
    pub fn agent_value(&self, p: f64) -> f64 {
        self.agent.value(logit(p))
    }

    pub fn policy(&self, p: f64) -> f64 {
        self.agent.policy(logit(p))
    }

    /// Principal value at belief `p` (grid interpolation).
    pub fn principal_value(&self, p: f64) -> f64 {
        self.w.at(p)
    }
}

/// Unique equilibrium: bisection on `phi(p) - p` over `[p**, p_H]`.
pub fn solve_equilibrium(params: &GameParams, numerics: &Numerics) -> Result<Equilibrium> {
    params.validate()?;
    numerics.validate()?;
    let (p_zero, p_high) = myopic_cutoffs(params);
    let mut steps = 0usize;
    let mut g = |p: f64| -> f64 {
        steps += 1;
        match cutoff_map(params, numerics, p) {
            Ok(q) => q - p,
            Err(_) => f64::NAN,
        }
    };
    // surface solver errors at the bracket ends instead of a bare bracket failure
    cutoff_map(params, numerics, p_zero)?;
    cutoff_map(params, numerics, p_high)?;
    let p_star = bisect(
        "equilibrium cutoff map",
        &mut g,
        p_zero,
        p_high,
        numerics.fixed_point_tol,
        numerics.max_bisect,
    )?;
    // the map can jump at the fixed point, so check both sides of the bracket
    let mut best = None;
    for p in [p_star, p_star - numerics.fixed_point_tol, p_star + numerics.fixed_point_tol] {
        let p = p.clamp(p_zero, p_high);
        let agent = build_agent_solution(params, logit(p))?;
        let reply = best_reply_cutoff(&agent, params, numerics)?;
        let residual = (reply.p_cut - p).abs();
        if best.as_ref().is_none_or(|(_, _, _, r)| residual < *r) {
            best = Some((p, agent, reply, residual));
        }
    }
    let (p_star, agent, reply, residual) = best.expect("three candidates");
    // a policy kink inside a cell next to the crossing leaves a residual of
    // a fraction of the mesh that vanishes under refinement
    let h = (1.0 - 2.0 * numerics.p_min) / (numerics.grid_n - 1) as f64;
    if !(residual < (0.1 * h).max(1e-5)) {
        return Err(Error::NonConvergence {
            what: "equilibrium fixed point",
            iterations: steps,
            residual,
        });
    }
    let (p_l, p_r) = match agent.mixing_beliefs() {
        Some((l, r)) => (Some(l), Some(r)),
        None => (None, None),
    };
    Ok(Equilibrium {
        params: *params,
        numerics: *numerics,
        agent,
        p_star,
        p_l,
        p_r,
        w: reply.w,
        diagnostics: FixedPointDiagnostics {
            bisection_steps: steps,
            best_reply_rounds: reply.rounds,
            residual,
            grid_n: numerics.grid_n,
        },
    })
}
