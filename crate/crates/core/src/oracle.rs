//! Brute-force discrete-time version of the game, used to cross-check the
//! closed-form solver.
//!
//! Log-odds live on a uniform grid of spacing `psi sqrt(dt)`. Each period the
//! signal moves the belief one node up or down. The period length at a node
//! is `dt / (1 - a)^2`, which makes the binomial step of size
//! `psi (1 - a) sqrt(period)` land exactly on the neighbouring node. Within
//! a period the state is frozen while discounting, flow payoffs and Poisson
//! stopping are integrated exactly.
//!
//! Nothing here uses the closed-form machinery: the agent's intensity comes
//! from the discrete indifference condition and the principal's cutoff from
//! policy iteration on her own discrete value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logistic, logit, myopic_cutoffs, termination_payoff_unchecked, GameParams};
use crate::numeric::solve_tridiagonal;
use crate::principal::Equilibrium;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteGame {
    /// Base period length; sets the grid spacing `psi sqrt(dt)`.
    pub dt: f64,
    /// Grid covers `[-z_max, z_max]`.
    pub z_max: f64,
    pub damping: f64,
    pub max_rounds: usize,
    /// Sup-norm change in the conjectured intensity that ends the outer loop.
    pub tol: f64,
}

impl Default for DiscreteGame {
    fn default() -> Self {
        DiscreteGame {
            dt: 1e-3,
            z_max: 10.0,
            damping: 0.5,
            max_rounds: 500,
            tol: 1e-5,
        }
    }
}

impl DiscreteGame {
    pub fn validate(&self, params: &GameParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt < 0.1) {
            return Err(Error::Config(format!("dt must lie in (0, 0.1), got {}", self.dt)));
        }
        if !(self.z_max >= 2.0) {
            return Err(Error::Config(format!("z_max must be at least 2, got {}", self.z_max)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if params.psi * self.dt.sqrt() >= 1.0 {
            return Err(Error::Config("psi * sqrt(dt) must be below 1".into()));
        }
        if 1.0 - (-params.lambda * self.dt).exp() >= 0.5 {
            return Err(Error::Config("arrival probability per period must be below 0.5".into()));
        }
        Ok(())
    }

    pub fn spacing(&self, params: &GameParams) -> f64 {
        params.psi * self.dt.sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteEquilibrium {
    pub p_star: f64,
    pub z_cut: f64,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub rounds: usize,
    /// Last sup-norm change of the conjectured intensity.
    pub last_change: f64,
}

struct Chain<'a> {
    params: &'a GameParams,
    dg: &'a DiscreteGame,
    z: Vec<f64>,
    p: Vec<f64>,
    payoff: Vec<f64>,
    /// step probability scale `psi sqrt(dt) / 4`
    tilt: f64,
}

impl<'a> Chain<'a> {
    fn new(params: &'a GameParams, dg: &'a DiscreteGame) -> Self {
        let h = dg.spacing(params);
        let m = (dg.z_max / h).ceil() as i64;
        let z: Vec<f64> = (-m..=m).map(|j| j as f64 * h).collect();
        let p: Vec<f64> = z.iter().map(|&x| logistic(x)).collect();
        let payoff = p.iter().map(|&q| termination_payoff_unchecked(q, params)).collect();
        Chain {
            params,
            dg,
            z,
            p,
            payoff,
            tilt: 0.25 * h,
        }
    }

    fn len(&self) -> usize {
        self.z.len()
    }

    fn period(&self, a: f64) -> f64 {
        self.dg.dt / ((1.0 - a) * (1.0 - a))
    }

    fn stop_weights(&self, z_cut: f64) -> Vec<f64> {
        let h = self.z[1] - self.z[0];
        self.z.iter().map(|&x| ((x + 0.5 * h - z_cut) / h).clamp(0.0, 1.0)).collect()
    }

    /// Decaying-mode ratio of a constant-coefficient region:
    /// root of `k pu x^2 - x + k (1 - pu) = 0` above (`upper`) or below one.
    fn mode_ratio(k: f64, pu: f64, upper: bool) -> f64 {
        let disc = (1.0 - 4.0 * k * k * pu * (1.0 - pu)).sqrt();
        if upper {
            (1.0 + disc) / (2.0 * k * pu)
        } else {
            // (1 - disc) / (2 k pu) without cancellation
            2.0 * k * (1.0 - pu) / (1.0 + disc)
        }
    }

    /// Agent value when he follows the conjecture `a`.
    fn agent_value(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let g = self.params;
        let n = self.len();
        let pu = 0.5 + self.tilt;
        let mut lower = vec![0.0; n];
        let diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        // far left: no mimicking, no stopping; value approaches u + c
        let k0 = (-g.r1 * self.dg.dt).exp();
        let lo = g.u + g.c;
        let rho = Self::mode_ratio(k0, pu, true);
        // v0 - lo = (v1 - lo) / rho
        upper[0] = -1.0 / rho;
        rhs[0] = lo * (1.0 - 1.0 / rho);
        // far right: no mimicking, stopped at the first opportunity
        let rate = g.r1 + g.lambda;
        let kn = (-rate * self.dg.dt).exp();
        let hi = g.r1 * (g.u + g.c) / rate;
        let rho = Self::mode_ratio(kn, pu, false);
        lower[n - 1] = -rho;
        rhs[n - 1] = hi * (1.0 - rho);
        for j in 1..n - 1 {
            let rate = g.r1 + g.lambda * b[j];
            let tau = self.period(a[j]);
            let k = (-rate * tau).exp();
            let gain = -(-rate * tau).exp_m1() / rate;
            lower[j] = -k * (1.0 - pu);
            upper[j] = -k * pu;
            rhs[j] = g.r1 * (g.u + (1.0 - a[j]) * g.c) * gain;
        }
        solve_tridiagonal(&lower, &diag, &upper, &rhs)
    }

    /// Intensity that makes the agent indifferent given his current value.
    fn best_response(&self, a: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
        let g = self.params;
        let n = self.len();
        let step = 4.0 * self.tilt; // psi sqrt(dt)
        let mut out = vec![0.0; n];
        for j in 1..n - 1 {
            let drop = (v[j - 1] - v[j + 1]).max(0.0);
            if drop == 0.0 {
                continue;
            }
            let rate = g.r1 + g.lambda * b[j];
            let tau = self.period(a[j]);
            let k = (-rate * tau).exp();
            let gain = -(-rate * tau).exp_m1() / rate;
            let slack = a[j] - 1.0;
            let ratio = 2.0 * g.r1 * g.c * gain * slack * slack / (k * step * drop);
            out[j] = 1.0 - ratio.min(1.0);
        }
        out
    }

    /// Principal value for the conjecture `a` and a cutoff in log-odds.
    fn principal_value(&self, a: &[f64], z_cut: f64) -> Result<Vec<f64>> {
        let g = self.params;
        let n = self.len();
        let b = self.stop_weights(z_cut);
        let mut lower = vec![0.0; n];
        let diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = g.lambda / (g.r2 + g.lambda) * self.payoff[n - 1];
        for j in 1..n - 1 {
            let rate = g.r2 + g.lambda * b[j];
            let tau = self.period(a[j]);
            let k = (-rate * tau).exp();
            let gain = -(-rate * tau).exp_m1() / rate;
            // up-move probability under the type mixture
            let pu = 0.5 + self.tilt * (2.0 * self.p[j] - 1.0);
            lower[j] = -k * (1.0 - pu);
            upper[j] = -k * pu;
            rhs[j] = g.lambda * b[j] * self.payoff[j] * gain;
        }
        solve_tridiagonal(&lower, &diag, &upper, &rhs)
    }

    fn crossing(&self, w: &[f64], z_from: f64) -> Option<f64> {
        let start = self.z.partition_point(|&x| x < z_from).max(1);
        for j in start..self.len() {
            let gap = self.payoff[j] - w[j];
            if gap >= 0.0 {
                let prev = self.payoff[j - 1] - w[j - 1];
                if prev >= 0.0 {
                    return Some(self.z[j - 1]);
                }
                let t = -prev / (gap - prev);
                return Some(self.z[j - 1] + t * (self.z[j] - self.z[j - 1]));
            }
        }
        None
    }

    /// Principal best reply to `a`: cutoff and value.
    fn principal_best_reply(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (p_zero, _) = myopic_cutoffs(self.params);
        let z_zero = logit(p_zero);
        let mut z_cut = z_zero;
        let mut w = self.principal_value(a, z_cut)?;
        for _ in 0..200 {
            let next = self.crossing(&w, z_zero).ok_or(Error::Bracket {
                what: "discrete termination payoff minus value",
                lo: p_zero,
                hi: 1.0,
            })?;
            let next_w = self.principal_value(a, next)?;
            let change = next_w
                .iter()
                .zip(&w)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            z_cut = next;
            w = next_w;
            if change < 1e-10 {
                return Ok((z_cut, w));
            }
        }
        Err(Error::NonConvergence {
            what: "discrete principal policy iteration",
            iterations: 200,
            residual: f64::NAN,
        })
    }
}

/// Fixed point of the discrete game from an initial conjectured intensity.
pub fn discrete_equilibrium_from(
    params: &GameParams,
    dg: &DiscreteGame,
    initial: impl Fn(f64) -> f64,
) -> Result<DiscreteEquilibrium> {
    params.validate()?;
    dg.validate(params)?;
    let chain = Chain::new(params, dg);
    let n = chain.len();
    let mut a: Vec<f64> = chain.z.iter().map(|&x| initial(x).clamp(0.0, 0.99)).collect();
    a[0] = 0.0;
    a[n - 1] = 0.0;
    let mut change = f64::INFINITY;
    for round in 1..=dg.max_rounds {
        let (z_cut, _) = chain.principal_best_reply(&a)?;
        let b = chain.stop_weights(z_cut);
        let v = chain.agent_value(&a, &b)?;
        let br = chain.best_response(&a, &b, &v);
        change = 0.0;
        for j in 0..n {
            let next = (1.0 - dg.damping) * a[j] + dg.damping * br[j];
            change = f64::max(change, (next - a[j]).abs());
            a[j] = next;
        }
        for &x in &a {
            if 1.0 - (-params.lambda * chain.period(x)).exp() >= 0.5 {
                return Err(Error::Config("local period too long for the arrival rate; reduce dt".into()));
            }
        }
        if change < dg.tol {
            let (z_cut, w) = chain.principal_best_reply(&a)?;
            let b = chain.stop_weights(z_cut);
            let v = chain.agent_value(&a, &b)?;
            return Ok(DiscreteEquilibrium {
                p_star: logistic(z_cut),
                z_cut,
                z: chain.z,
                a,
                v,
                w,
                rounds: round,
                last_change: change,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "discrete conjecture iteration",
        iterations: dg.max_rounds,
        residual: change,
    })
}

/// Fixed point from the no-mimicking conjecture.
pub fn discrete_equilibrium(params: &GameParams, dg: &DiscreteGame) -> Result<DiscreteEquilibrium> {
    discrete_equilibrium_from(params, dg, |_| 0.0)
}

/// Solve from several random hump-shaped initial conjectures and return the
/// spread of the resulting cutoffs.
pub fn multi_start_spread(params: &GameParams, dg: &DiscreteGame, starts: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts = Vec::with_capacity(starts);
    for _ in 0..starts {
        let peak: f64 = rng.random_range(0.0..0.9);
        let center: f64 = rng.random_range(-2.0..2.0);
        let width: f64 = rng.random_range(0.3..3.0);
        let eq = discrete_equilibrium_from(params, dg, |z| peak * (-(z - center).powi(2) / (2.0 * width * width)).exp())?;
        cuts.push(eq.p_star);
    }
    let lo = cuts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cuts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((cuts, hi - lo))
}

/// Sup-norm distances between the discrete game and the continuous solution
/// on the discrete grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleGaps {
    pub p_star_discrete: f64,
    pub p_star_closed_form: f64,
    pub p_star_gap: f64,
    pub v_gap: f64,
    pub w_gap: f64,
    pub a_gap: f64,
}

pub fn compare_with_closed_form(eq: &Equilibrium, dp: &DiscreteEquilibrium) -> OracleGaps {
    let mut gaps = OracleGaps {
        p_star_discrete: dp.p_star,
        p_star_closed_form: eq.p_star,
        p_star_gap: (dp.p_star - eq.p_star).abs(),
        v_gap: 0.0,
        w_gap: 0.0,
        a_gap: 0.0,
    };
    for (j, &z) in dp.z.iter().enumerate() {
        let pt = eq.agent.point(z);
        gaps.v_gap = gaps.v_gap.max((dp.v[j] - pt.v).abs());
        gaps.a_gap = gaps.a_gap.max((dp.a[j] - pt.a).abs());
        gaps.w_gap = gaps.w_gap.max((dp.w[j] - eq.principal_value(logistic(z))).abs());
    }
    gaps
}
