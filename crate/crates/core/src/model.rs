//! Game primitives, belief coordinates and the myopic benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight primitives of the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    /// Agent discount rate.
    pub r1: f64,
    /// Principal discount rate.
    pub r2: f64,
    /// Arrival rate of stopping opportunities.
    pub lambda: f64,
    /// Signal-to-noise ratio of the performance signal.
    pub psi: f64,
    /// Agent flow payoff while fully mimicking.
    pub u: f64,
    /// Flow cost of mimicking.
    pub c: f64,
    /// Principal lump sum for stopping a noninvestible agent.
    #[serde(rename = "w_NI")]
    pub w_ni: f64,
    /// Principal lump sum for stopping an investible agent.
    #[serde(rename = "w_I")]
    pub w_i: f64,
}

impl GameParams {
    /// Reference parameter set.
    pub fn figure() -> Self {
        GameParams {
            r1: 0.5,
            r2: 0.5,
            lambda: 2.0,
            psi: 1.5,
            u: 1.0,
            c: 1.0,
            w_ni: 1.0,
            w_i: -1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r1", self.r1),
            ("r2", self.r2),
            ("lambda", self.lambda),
            ("psi", self.psi),
            ("u", self.u),
            ("c", self.c),
            ("w_NI", self.w_ni),
        ];
        for (name, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be finite and > 0, got {x}")));
            }
        }
        if !(self.w_i.is_finite() && self.w_i < 0.0) {
            return Err(Error::InvalidParams(format!(
                "w_I must be finite and < 0, got {}",
                self.w_i
            )));
        }
        Ok(())
    }

    /// Same game with the agent's and principal's rates replaced.
    pub fn with_rates(&self, r1: f64, r2: f64) -> Self {
        GameParams { r1, r2, ..*self }
    }

    pub fn with_psi(&self, psi: f64) -> Self {
        GameParams { psi, ..*self }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        GameParams { lambda, ..*self }
    }
}

/// Numeric settings shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Beliefs are clamped to [p_min, 1 - p_min].
    pub p_min: f64,
    /// Absolute tolerance for scalar root finding.
    pub root_tol: f64,
    /// Iteration cap for bisection.
    pub max_bisect: usize,
    /// Points on the principal's belief grid.
    pub grid_n: usize,
    /// Cap on best-reply policy iteration rounds.
    pub max_policy_rounds: usize,
    /// Width at which the equilibrium bisection stops.
    pub fixed_point_tol: f64,
    /// Base seed for Monte Carlo work.
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            p_min: 1e-4,
            root_tol: 1e-12,
            max_bisect: 200,
            grid_n: 4001,
            max_policy_rounds: 100,
            fixed_point_tol: 1e-10,
            seed: 20240917,
        }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min < 0.01) {
            return Err(Error::Config(format!("p_min must lie in (0, 0.01), got {}", self.p_min)));
        }
        if !(self.root_tol > 0.0 && self.root_tol < 1e-3) {
            return Err(Error::Config(format!("root_tol must lie in (0, 1e-3), got {}", self.root_tol)));
        }
        if self.grid_n < 201 {
            return Err(Error::Config(format!("grid_n must be at least 201, got {}", self.grid_n)));
        }
        if self.max_bisect < 10 || self.max_policy_rounds < 1 {
            return Err(Error::Config("iteration caps too small".into()));
        }
        if !(self.fixed_point_tol > 0.0 && self.fixed_point_tol < 1e-5) {
            return Err(Error::Config(format!(
                "fixed_point_tol must lie in (0, 1e-5), got {}",
                self.fixed_point_tol
            )));
        }
        Ok(())
    }
}

/// Log-odds of a belief.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Inverse of [`logit`].
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A belief in both coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub p: f64,
    pub z: f64,
}

impl BeliefState {
    pub fn from_p(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain {
                what: "p",
                value: p,
                domain: "(0, 1)".into(),
            });
        }
        Ok(BeliefState { p, z: logit(p) })
    }

    pub fn from_z(z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::Domain {
                what: "z",
                value: z,
                domain: "finite reals".into(),
            });
        }
        Ok(BeliefState { p: logistic(z), z })
    }
}

fn check_unit(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "p",
            value: p,
            domain: "[0, 1]".into(),
        })
    }
}

/// Principal's expected lump sum from stopping at belief `p`.
pub fn termination_payoff(p: f64, params: &GameParams) -> Result<f64> {
    check_unit(p)?;
    Ok(termination_payoff_unchecked(p, params))
}

#[inline]
pub(crate) fn termination_payoff_unchecked(p: f64, params: &GameParams) -> f64 {
    // written so that both endpoints are exact
    params.w_i + p * (params.w_ni - params.w_i)
}

/// Belief at which the termination payoff equals `y`.
fn termination_payoff_inverse(y: f64, params: &GameParams) -> f64 {
    (y - params.w_i) / (params.w_ni - params.w_i)
}

/// Weight on the termination payoff when stopping at the next opportunity.
pub fn arrival_weight(params: &GameParams) -> f64 {
    params.lambda / (params.r2 + params.lambda)
}

/// `(p**, p_H)`: zero of the termination payoff, and the belief above which
/// stopping beats waiting even against full information.
pub fn myopic_cutoffs(params: &GameParams) -> (f64, f64) {
    let p_zero = termination_payoff_inverse(0.0, params);
    let p_high = termination_payoff_inverse(arrival_weight(params) * params.w_ni, params);
    (p_zero, p_high)
}

/// `(W_under, W_over)`: values with no information and with full information.
pub fn benchmark_values(p: f64, params: &GameParams) -> Result<(f64, f64)> {
    check_unit(p)?;
    let k = arrival_weight(params);
    let under = k * termination_payoff_unchecked(p, params).max(0.0);
    let over = k * p * params.w_ni;
    Ok((under, over))
}

/// Friction threshold `r1 c / u` for the transparency limits.
pub fn lambda_tilde(params: &GameParams) -> f64 {
    params.r1 * params.c / params.u
}

/// Primitives of the venture-capital formulation with a revealing event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternativeParams {
    /// Principal's flow cost of continuing.
    pub b: f64,
    /// Arrival rate of the revealing event.
    pub delta: f64,
    /// Principal's reward when the event reveals an investible agent.
    pub pi_i: f64,
    pub u_hat: f64,
    pub c_hat: f64,
    pub lambda_hat: f64,
    pub r1_hat: f64,
    pub r2_hat: f64,
    /// Signal-to-noise ratio, carried over unchanged.
    pub psi: f64,
}

/// Map the revealing-event formulation onto the benchmark primitives.
pub fn transform_alternative_params(alt: &AlternativeParams) -> Result<GameParams> {
    let inputs = [
        ("b", alt.b),
        ("delta", alt.delta),
        ("pi_I", alt.pi_i),
        ("u_hat", alt.u_hat),
        ("c_hat", alt.c_hat),
        ("lambda_hat", alt.lambda_hat),
        ("r1_hat", alt.r1_hat),
        ("r2_hat", alt.r2_hat),
        ("psi", alt.psi),
    ];
    for (name, x) in inputs {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidParams(format!("{name} must be finite and > 0, got {x}")));
        }
    }
    let bound = alt.r2_hat / alt.delta * alt.b;
    if alt.pi_i <= bound {
        return Err(Error::RewardTooSmall {
            pi_i: alt.pi_i,
            bound,
        });
    }
    let denom = alt.r2_hat + alt.delta;
    let params = GameParams {
        r1: alt.r1_hat + alt.delta,
        r2: alt.r2_hat + alt.delta,
        lambda: alt.lambda_hat,
        psi: alt.psi,
        u: alt.u_hat,
        c: alt.c_hat,
        w_ni: alt.r2_hat * alt.b / denom,
        w_i: (alt.r2_hat * alt.b - alt.delta * alt.pi_i) / denom,
    };
    // rounding right at the boundary can still leave w_I >= 0
    if params.w_i >= 0.0 {
        return Err(Error::RewardTooSmall {
            pi_i: alt.pi_i,
            bound,
        });
    }
    Ok(params)
}
