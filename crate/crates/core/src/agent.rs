//! Closed-form best response of the noninvestible agent to a cutoff
//! strategy of the principal, in log-odds coordinates.
//!
//! Inside the mixing region the value is a Gaussian quantile of an
//! exponential in `z`. Everything there is evaluated in log space and
//! anchored at the region's own edges so that large signal-to-noise
//! ratios neither overflow nor lose the tails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GameParams;
use crate::normal;
use crate::numeric::bisect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    FullySeparating,
    HumpShaped,
}

/// A real coefficient kept alongside its sign and log magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficient {
    pub value: f64,
    pub sign: f64,
    pub ln_abs: f64,
}

impl Coefficient {
    fn from_log(sign: f64, ln_abs: f64) -> Self {
        Coefficient {
            value: sign * ln_abs.exp(),
            sign,
            ln_abs,
        }
    }

    fn from_value(value: f64) -> Self {
        Coefficient {
            value,
            sign: value.signum(),
            ln_abs: value.abs().ln(),
        }
    }
}

/// `(a, v, v', v'')` at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentPoint {
    pub a: f64,
    /// `ln(1 - a)`, exact even where `a` rounds to one
    pub ln_slack: f64,
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

/// Positive and negative roots of `xi^2 + xi = 2 rate / psi^2`.
pub fn characteristic_roots(rate: f64, psi: f64) -> (f64, f64) {
    let x = 8.0 * rate / (psi * psi);
    let d = (1.0 + x).sqrt();
    // (d - 1) / 2 without cancellation when x is small
    let plus = 0.5 * x / (d + 1.0);
    (plus, -1.0 - plus)
}

fn r_star_gap(r: f64, params: &GameParams) -> f64 {
    let s2 = params.psi * params.psi;
    let d0 = (1.0 + 8.0 * r / s2).sqrt();
    let d1 = (1.0 + 8.0 * (r + params.lambda) / s2).sqrt();
    r * (d0 + d1) + params.lambda * (d0 + 1.0) - 4.0 * params.lambda * (params.u / params.c + 1.0)
}

/// Critical agent discount rate: mixing happens iff `r1 < r*`.
pub fn solve_r_star(params: &GameParams) -> f64 {
    let hi = 100.0 * params.lambda * (params.u / params.c + 1.0);
    // the gap is increasing with a sign change on (0, hi), so this cannot fail
    bisect("r*", |r| r_star_gap(r, params), 0.0, hi, 0.0, 400).expect("r* bracket")
}

/// Regime from the sign of the r* equation at `r1`; `r1 = r*` separates.
pub fn classify_regime(params: &GameParams) -> Regime {
    if r_star_gap(params.r1, params) < 0.0 {
        Regime::HumpShaped
    } else {
        Regime::FullySeparating
    }
}

/// `(v_L, v_R, kappa_L, kappa_R)`.
pub fn boundary_values(params: &GameParams) -> (f64, f64, f64, f64) {
    let k = Kernel::new(params);
    (k.v_l, k.v_r, k.kappa_l, k.kappa_r)
}

/// Constants that do not depend on the cutoff.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    xi_l: f64,
    xi_l_prime: f64,
    xi_r: f64,
    xi_r_prime: f64,
    v_l: f64,
    v_r: f64,
    kappa_l: f64,
    kappa_r: f64,
    /// value with no mimicking and no stopping, and its stopped analogue
    v_low_limit: f64,
    v_high_limit: f64,
    left: Side,
    right: Side,
}

/// One side of the mixing region: `v = base + sqrt(kappa) q`.
#[derive(Debug, Clone, Copy)]
struct Side {
    base: f64,
    sqrt_kappa: f64,
    ln_k: f64,
    /// normalized value at the outer edge
    q_edge: f64,
    /// `ln(k phi(q_edge))`
    ln_k_phi_edge: f64,
}

impl Side {
    fn new(base: f64, kappa: f64, k: f64, v_edge: f64) -> Self {
        let sqrt_kappa = kappa.sqrt();
        let q_edge = (v_edge - base) / sqrt_kappa;
        Side {
            base,
            sqrt_kappa,
            ln_k: k.ln(),
            q_edge,
            ln_k_phi_edge: k.ln() + normal::ln_pdf(q_edge),
        }
    }

    fn q(&self, x: f64) -> f64 {
        (x - self.base) / self.sqrt_kappa
    }
}

impl Kernel {
    fn new(params: &GameParams) -> Self {
        let GameParams {
            r1, lambda, psi, u, c, ..
        } = *params;
        let s2 = psi * psi;
        let (xi_l, xi_l_prime) = characteristic_roots(r1, psi);
        let (xi_r_prime, xi_r) = characteristic_roots(r1 + lambda, psi);
        let v_l = u + c - r1 * c / (xi_l * s2);
        let v_r = r1 * (u + c) / (r1 + lambda) - r1 * c / (xi_r * s2);
        let kappa_l = r1 * c * c / (2.0 * s2);
        let kappa_r = r1 * r1 * c * c / (2.0 * (r1 + lambda) * s2);
        let u_bar = r1 * u / (r1 + lambda);
        let k_l = (2.0 * r1).sqrt() / psi;
        let k_r = (2.0 * (r1 + lambda)).sqrt() / psi;
        Kernel {
            xi_l,
            xi_l_prime,
            xi_r,
            xi_r_prime,
            v_l,
            v_r,
            kappa_l,
            kappa_r,
            v_low_limit: u + c,
            v_high_limit: r1 * (u + c) / (r1 + lambda),
            left: Side::new(u, kappa_l, k_l, v_l),
            right: Side::new(u_bar, kappa_r, k_r, v_r),
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if !(x >= self.v_r && x <= self.v_l) {
            return Err(Error::Domain {
                what: "x",
                value: x,
                domain: format!("[v_R, v_L] = [{}, {}]", self.v_r, self.v_l),
            });
        }
        Ok(())
    }

    /// log of the left denominator `k phi(q_L) + Phi(q_L) - Phi(q)`.
    fn ln_den_left(&self, q: f64) -> f64 {
        normal::ln_add_exp(self.left.ln_k_phi_edge, normal::ln_cdf_diff(q, self.left.q_edge))
    }

    /// log of the right denominator `k phi(q_R) - (Phi(q) - Phi(q_R))`.
    fn ln_den_right(&self, q: f64) -> f64 {
        normal::ln_sub_exp(self.right.ln_k_phi_edge, normal::ln_cdf_diff(self.right.q_edge, q))
    }

    fn map_minus(&self, x: f64) -> f64 {
        let q = self.left.q(x).min(self.left.q_edge);
        let ln_one_minus_a = self.left.ln_k + normal::ln_pdf(q) - self.ln_den_left(q);
        -ln_one_minus_a.exp_m1()
    }

    fn map_plus(&self, x: f64) -> f64 {
        let q = self.right.q(x).max(self.right.q_edge);
        let ln_one_minus_a = self.right.ln_k + normal::ln_pdf(q) - self.ln_den_right(q);
        -ln_one_minus_a.exp_m1()
    }
}

/// Mixing intensity at the cutoff implied by the left-region conditions
/// when the agent's value there is `x`. Strictly decreasing on `[v_R, v_L]`.
pub fn mixing_boundary_map_minus(x: f64, params: &GameParams) -> Result<f64> {
    let k = Kernel::new(params);
    k.check_domain(x)?;
    Ok(k.map_minus(x))
}

/// Mirror of [`mixing_boundary_map_minus`] from the right-region conditions.
/// Strictly increasing on `[v_R, v_L]`.
pub fn mixing_boundary_map_plus(x: f64, params: &GameParams) -> Result<f64> {
    let k = Kernel::new(params);
    k.check_domain(x)?;
    let a = k.map_plus(x);
    if a.is_nan() {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: "values with a positive right denominator".into(),
        });
    }
    Ok(a)
}

/// `ln(1 - a)` for [`mixing_boundary_map_minus`], usable where `a` rounds to one.
pub fn mixing_boundary_log_slack_minus(x: f64, params: &GameParams) -> Result<f64> {
    let k = Kernel::new(params);
    k.check_domain(x)?;
    let q = k.left.q(x).min(k.left.q_edge);
    Ok(k.left.ln_k + normal::ln_pdf(q) - k.ln_den_left(q))
}

/// `ln(1 - a)` for [`mixing_boundary_map_plus`].
pub fn mixing_boundary_log_slack_plus(x: f64, params: &GameParams) -> Result<f64> {
    let k = Kernel::new(params);
    k.check_domain(x)?;
    let q = k.right.q(x).max(k.right.q_edge);
    Ok(k.right.ln_k + normal::ln_pdf(q) - k.ln_den_right(q))
}

/// Agent value at the cutoff in the hump-shaped regime.
pub fn solve_v_star(params: &GameParams) -> Result<f64> {
    if classify_regime(params) == Regime::FullySeparating {
        return Err(Error::SeparatingRegime {
            r1: params.r1,
            r_star: solve_r_star(params),
        });
    }
    let k = Kernel::new(params);
    solve_v_star_kernel(&k)
}

fn solve_v_star_kernel(k: &Kernel) -> Result<f64> {
    bisect(
        "v*",
        |x| k.map_minus(x) - k.map_plus(x),
        k.v_r,
        k.v_l,
        0.0,
        400,
    )
}

/// Mixing-region state relative to the cutoff.
#[derive(Debug, Clone, Copy)]
struct Mixing {
    /// z_L - z* (< 0) and z_R - z* (> 0)
    dz_l: f64,
    dz_r: f64,
    q_star_l: f64,
    q_star_r: f64,
    ln_den_l: f64,
    ln_den_r: f64,
    ln_cdf_star_l: f64,
    ln_sf_edge_l: f64,
    ln_cdf_edge_r: f64,
    ln_sf_star_r: f64,
}

/// Agent best response to the cutoff `z_star`.
#[derive(Debug, Clone, Serialize)]
pub struct AgentSolution {
    pub params: GameParams,
    pub regime: Regime,
    pub z_star: f64,
    pub v_star: f64,
    /// Mixing intensity at the cutoff (the peak of the hump).
    pub a_star: f64,
    pub z_l: Option<f64>,
    pub z_r: Option<f64>,
    pub v_l: f64,
    pub v_r: f64,
    pub xi_l: f64,
    pub xi_l_prime: f64,
    pub xi_r: f64,
    pub xi_r_prime: f64,
    pub kappa_l: f64,
    pub kappa_r: f64,
    pub a1: Coefficient,
    pub b1: Coefficient,
    pub c1: Option<Coefficient>,
    pub c2: Option<f64>,
    pub d1: Option<Coefficient>,
    pub d2: Option<f64>,
    #[serde(skip)]
    kernel: KernelHandle,
    #[serde(skip)]
    mixing: Option<Mixing>,
    /// separating case: v(z*) - (u+c) and v(z*) - v_high_limit
    #[serde(skip)]
    sep_offsets: (f64, f64),
}

// Kernel is Copy but private; wrap so AgentSolution can derive Clone/Debug.
#[derive(Debug, Clone, Copy)]
struct KernelHandle(Kernel);

/// Build the agent's solution for a principal cutoff at `z_star`.
pub fn build_agent_solution(params: &GameParams, z_star: f64) -> Result<AgentSolution> {
    params.validate()?;
    if !z_star.is_finite() {
        return Err(Error::Domain {
            what: "z_star",
            value: z_star,
            domain: "finite reals".into(),
        });
    }
    let k = Kernel::new(params);
    let s2 = params.psi * params.psi;
    let r1c = params.r1 * params.c;
    let regime = classify_regime(params);
    match regime {
        Regime::HumpShaped => {
            let v_star = solve_v_star_kernel(&k)?;
            let q_star_l = k.left.q(v_star);
            let q_star_r = k.right.q(v_star);
            let ln_den_l = k.ln_den_left(q_star_l);
            let ln_den_r = k.ln_den_right(q_star_r);
            let dz_l = k.left.ln_k_phi_edge - ln_den_l;
            let dz_r = k.right.ln_k_phi_edge - ln_den_r;
            let a_star = -(k.left.ln_k + normal::ln_pdf(q_star_l) - ln_den_l).exp_m1();
            let z_l = z_star + dz_l;
            let z_r = z_star + dz_r;
            let a1 = Coefficient::from_log(-1.0, (r1c / (k.xi_l * s2)).ln() - k.xi_l * z_l);
            let b1 = Coefficient::from_log(1.0, (-r1c / (k.xi_r * s2)).ln() - k.xi_r * z_r);
            let c1 = Coefficient::from_log(-1.0, ln_den_l - z_star);
            let d1 = Coefficient::from_log(-1.0, ln_den_r - z_star);
            let c2 = normal::cdf(k.left.q_edge) + k.left.ln_k_phi_edge.exp();
            let d2 = normal::cdf(k.right.q_edge) + k.right.ln_k_phi_edge.exp();
            let mixing = Mixing {
                dz_l,
                dz_r,
                q_star_l,
                q_star_r,
                ln_den_l,
                ln_den_r,
                ln_cdf_star_l: normal::ln_cdf(q_star_l),
                ln_sf_edge_l: normal::ln_sf(k.left.q_edge),
                ln_cdf_edge_r: normal::ln_cdf(k.right.q_edge),
                ln_sf_star_r: normal::ln_sf(q_star_r),
            };
            Ok(AgentSolution {
                params: *params,
                regime,
                z_star,
                v_star,
                a_star,
                z_l: Some(z_l),
                z_r: Some(z_r),
                v_l: k.v_l,
                v_r: k.v_r,
                xi_l: k.xi_l,
                xi_l_prime: k.xi_l_prime,
                xi_r: k.xi_r,
                xi_r_prime: k.xi_r_prime,
                kappa_l: k.kappa_l,
                kappa_r: k.kappa_r,
                a1,
                b1,
                c1: Some(c1),
                c2: Some(c2),
                d1: Some(d1),
                d2: Some(d2),
                kernel: KernelHandle(k),
                mixing: Some(mixing),
                sep_offsets: (0.0, 0.0),
            })
        }
        Regime::FullySeparating => {
            let jump = params.lambda * (params.u + params.c) / (params.r1 + params.lambda);
            let spread = k.xi_l - k.xi_r;
            let alpha = k.xi_r / spread * jump;
            let beta = k.xi_l / spread * jump;
            let a1 = Coefficient::from_value(alpha * (-k.xi_l * z_star).exp());
            let b1 = Coefficient::from_value(beta * (-k.xi_r * z_star).exp());
            Ok(AgentSolution {
                params: *params,
                regime,
                z_star,
                v_star: k.v_low_limit + alpha,
                a_star: 0.0,
                z_l: None,
                z_r: None,
                v_l: k.v_l,
                v_r: k.v_r,
                xi_l: k.xi_l,
                xi_l_prime: k.xi_l_prime,
                xi_r: k.xi_r,
                xi_r_prime: k.xi_r_prime,
                kappa_l: k.kappa_l,
                kappa_r: k.kappa_r,
                a1: Coefficient {
                    sign: -1.0,
                    ln_abs: (-alpha).ln() - k.xi_l * z_star,
                    ..a1
                },
                b1: Coefficient {
                    sign: 1.0,
                    ln_abs: beta.ln() - k.xi_r * z_star,
                    ..b1
                },
                c1: None,
                c2: None,
                d1: None,
                d2: None,
                kernel: KernelHandle(k),
                mixing: None,
                sep_offsets: (alpha, beta),
            })
        }
    }
}

impl AgentSolution {
    /// `(a, v)` at log-odds `z`.
    pub fn eval(&self, z: f64) -> (f64, f64) {
        let pt = self.point(z);
        (pt.a, pt.v)
    }

    pub fn policy(&self, z: f64) -> f64 {
        self.point(z).a
    }

    pub fn value(&self, z: f64) -> f64 {
        self.point(z).v
    }

    /// Intensity and value with analytic first and second derivatives.
    pub fn point(&self, z: f64) -> AgentPoint {
        let k = &self.kernel.0;
        let p = &self.params;
        let s2 = p.psi * p.psi;
        let r1c = p.r1 * p.c;
        if z == f64::NEG_INFINITY {
            return AgentPoint { a: 0.0, ln_slack: 0.0, v: k.v_low_limit, dv: 0.0, d2v: 0.0 };
        }
        if z == f64::INFINITY {
            return AgentPoint { a: 0.0, ln_slack: 0.0, v: k.v_high_limit, dv: 0.0, d2v: 0.0 };
        }
        let s = z - self.z_star;
        let Some(m) = self.mixing else {
            let (alpha, beta) = self.sep_offsets;
            let (v0, amp, xi) = if s < 0.0 {
                (k.v_low_limit, alpha, k.xi_l)
            } else {
                (k.v_high_limit, beta, k.xi_r)
            };
            let e = amp * (xi * s).exp();
            return AgentPoint { a: 0.0, ln_slack: 0.0, v: v0 + e, dv: xi * e, d2v: xi * xi * e };
        };
        if s <= m.dz_l {
            // no mixing, no stopping
            let dv = -r1c / s2 * (k.xi_l * (s - m.dz_l)).exp();
            return AgentPoint {
                a: 0.0,
                ln_slack: 0.0,
                v: k.v_low_limit + dv / k.xi_l,
                dv,
                d2v: k.xi_l * dv,
            };
        }
        if s >= m.dz_r {
            let dv = -r1c / s2 * (k.xi_r * (s - m.dz_r)).exp();
            return AgentPoint {
                a: 0.0,
                ln_slack: 0.0,
                v: k.v_high_limit + dv / k.xi_r,
                dv,
                d2v: k.xi_r * dv,
            };
        }
        let (side, ln_cdf, ln_sf, ln_den, kappa) = if s <= 0.0 {
            let ln_cdf = normal::ln_add_exp(m.ln_cdf_star_l, m.ln_den_l + (-s.exp_m1()).ln());
            let ln_sf = normal::ln_add_exp(m.ln_sf_edge_l, k.left.ln_k_phi_edge + (s - m.dz_l).exp_m1().ln());
            (&k.left, ln_cdf, ln_sf, m.ln_den_l, k.kappa_l)
        } else {
            let ln_cdf = normal::ln_add_exp(m.ln_cdf_edge_r, k.right.ln_k_phi_edge + (-(s - m.dz_r).exp_m1()).ln());
            let ln_sf = normal::ln_add_exp(m.ln_sf_star_r, m.ln_den_r + s.exp_m1().ln());
            (&k.right, ln_cdf, ln_sf, m.ln_den_r, k.kappa_r)
        };
        let q = if ln_cdf < ln_sf {
            normal::ppf_ln(ln_cdf)
        } else {
            normal::isf_ln(ln_sf)
        };
        let ln_slack = side.ln_k + normal::ln_pdf(q) - ln_den - s;
        let a = (-ln_slack.exp_m1()).max(0.0);
        let v = side.base + side.sqrt_kappa * q;
        let dv = -r1c / s2 * (-ln_slack).exp();
        let d2v = dv + (v - side.base) * dv * dv / kappa;
        AgentPoint { a, ln_slack, v, dv, d2v }
    }

    /// Mixing-region edges as beliefs, when present.
    pub fn mixing_beliefs(&self) -> Option<(f64, f64)> {
        Some((crate::model::logistic(self.z_l?), crate::model::logistic(self.z_r?)))
    }

    /// Value of the agent when he neither mixes nor faces stopping.
    pub fn value_limit_low(&self) -> f64 {
        self.kernel.0.v_low_limit
    }

    /// Value of the agent when he neither mixes nor escapes stopping.
    pub fn value_limit_high(&self) -> f64 {
        self.kernel.0.v_high_limit
    }

    /// `q*` on both sides, useful for diagnostics.
    pub fn normalized_cutoff_values(&self) -> Option<(f64, f64)> {
        self.mixing.map(|m| (m.q_star_l, m.q_star_r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logit;
    use proptest::prelude::*;

    fn fig() -> GameParams {
        GameParams::figure()
    }

    // frozen from an independent 50-digit mpmath evaluation of the closed forms
    const R_STAR_FIG: f64 = 1.4670676481927325;
    const V_R_FIG: f64 = 0.5072330188676101;
    const V_STAR_FIG: f64 = 0.632197219311695;
    const A_STAR_FIG: f64 = 0.833254758356198;
    const A_MINUS_MID_FIG: f64 = 0.567181497620086;
    const DZ_L_FIG: f64 = -1.6825331457935908;
    const DZ_R_FIG: f64 = 0.28776381074795043;

    #[test]
    fn roots_examples() {
        let (p, m) = characteristic_roots(0.5, 1.5);
        assert!((p - 1.0 / 3.0).abs() < 1e-15 && (m + 4.0 / 3.0).abs() < 1e-15);
        let (p, m) = characteristic_roots(2.5, 1.5);
        let d = (89.0f64 / 9.0).sqrt();
        assert!((p - (d - 1.0) / 2.0).abs() < 1e-15);
        assert!((m + (d + 1.0) / 2.0).abs() < 1e-15);
        assert!((p - 1.072327).abs() < 1e-5);
    }

    #[test]
    fn r_star_figure() {
        let r = solve_r_star(&fig());
        assert!((r - R_STAR_FIG).abs() < 1e-12);
        assert!(r_star_gap(r, &fig()).abs() < 1e-10 * 4.0 * fig().lambda * 2.0);
        assert!(r > 0.5);
        assert!(solve_r_star(&fig().with_lambda(2.0)) > solve_r_star(&fig().with_lambda(0.1)));
    }

    #[test]
    fn boundary_value_examples() {
        let (vl, vr, kl, kr) = boundary_values(&fig());
        assert!((vl - 4.0 / 3.0).abs() < 1e-14);
        assert!((vr - V_R_FIG).abs() < 1e-14);
        assert!((kl - 1.0 / 9.0).abs() < 1e-15);
        assert!((kr - 1.0 / 45.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_values_match_radical_form() {
        for (r1, psi) in [(0.5, 1.5), (0.1, 3.0), (2.0, 0.7), (0.01, 20.0)] {
            let g = GameParams { r1, psi, ..fig() };
            let (vl, _, _, _) = boundary_values(&g);
            let radical = g.u + g.c * (1.0 - ((1.0 + 8.0 * r1 / (psi * psi)).sqrt() + 1.0) / 4.0);
            assert!((vl - radical).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_map_examples() {
        let g = fig();
        let (vl, vr, _, _) = boundary_values(&g);
        assert_eq!(mixing_boundary_map_minus(vl, &g).unwrap(), 0.0);
        assert!(mixing_boundary_map_plus(vr, &g).unwrap().abs() < 1e-15);
        let m_r = mixing_boundary_map_minus(vr, &g).unwrap();
        let p_l = mixing_boundary_map_plus(vl, &g).unwrap();
        assert!(m_r > 0.0 && m_r < 1.0);
        assert!(p_l > 0.0 && p_l < 1.0);
        let mid = mixing_boundary_map_minus(0.5 * (vl + vr), &g).unwrap();
        assert!((mid - A_MINUS_MID_FIG).abs() < 1e-12);
        assert!(mid > 0.0 && mid < m_r);
        assert!(mixing_boundary_map_minus(vl + 1e-3, &g).is_err());
        assert!(mixing_boundary_map_plus(vr - 1e-3, &g).is_err());
    }

    #[test]
    fn v_star_figure() {
        let g = fig();
        let v = solve_v_star(&g).unwrap();
        assert!((v - V_STAR_FIG).abs() < 1e-12);
        let am = mixing_boundary_map_minus(v, &g).unwrap();
        let ap = mixing_boundary_map_plus(v, &g).unwrap();
        assert!((am - ap).abs() < 1e-10);
        assert!((am - A_STAR_FIG).abs() < 1e-12);
        let bad = GameParams { r1: R_STAR_FIG + 0.01, ..g };
        assert!(matches!(solve_v_star(&bad), Err(Error::SeparatingRegime { .. })));
    }

    #[test]
    fn mixing_edges_figure() {
        let sol = build_agent_solution(&fig(), logit(0.565)).unwrap();
        let (pl, pr) = sol.mixing_beliefs().unwrap();
        assert!((sol.z_l.unwrap() - sol.z_star - DZ_L_FIG).abs() < 1e-12);
        assert!((sol.z_r.unwrap() - sol.z_star - DZ_R_FIG).abs() < 1e-12);
        assert!((pl - 0.195).abs() < 0.01, "p_L = {pl}");
        assert!((pr - 0.633).abs() < 0.01, "p_R = {pr}");
        assert!(sol.c1.unwrap().value < 0.0 && sol.d1.unwrap().value < 0.0);
    }

    // (psi, x, ln(1 - a_minus), ln(1 - a_plus)) at lambda=2, r1=0.5, u=c=1,
    // from a 60-digit mpmath evaluation
    const LARGE_PSI_ORACLE: [(f64, f64, f64, f64); 6] = [
        (20.0, 0.510986589394016, -195.22196340875604, -224.18491725016318),
        (20.0, 0.9499939316508879, -5.892156802006625, -2087.2978721711006),
        (20.0, 1.3890012739077597, -0.24693701796473738, -5492.230399535576),
        (50.0, 0.5101596494264464, -1204.5488067887422, -1402.2865378459378),
        (50.0, 0.9499998407640542, -17.331040870104562, -13059.8053631902),
        (50.0, 1.389840032101662, -0.2482146945842737, -34390.293884329636),
    ];

    #[test]
    fn large_psi_maps_are_finite() {
        let g = fig().with_psi(50.0);
        let (vl, vr, _, _) = boundary_values(&g);
        for i in 0..=100 {
            let x = vr + (vl - vr) * i as f64 / 100.0;
            let am = mixing_boundary_map_minus(x, &g).unwrap();
            let ap = mixing_boundary_map_plus(x, &g).unwrap();
            // the intensity itself can round to one; its log slack cannot
            assert!(am.is_finite() && (0.0..=1.0).contains(&am));
            assert!(ap.is_finite() && (0.0..=1.0).contains(&ap));
            assert!(mixing_boundary_log_slack_minus(x, &g).unwrap().is_finite());
            assert!(mixing_boundary_log_slack_plus(x, &g).unwrap().is_finite());
        }
        for (psi, x, lm, lp) in LARGE_PSI_ORACLE {
            let g = fig().with_psi(psi);
            let got_m = mixing_boundary_log_slack_minus(x, &g).unwrap();
            let got_p = mixing_boundary_log_slack_plus(x, &g).unwrap();
            assert!((got_m - lm).abs() < 1e-10 * lm.abs(), "{got_m} vs {lm}");
            assert!((got_p - lp).abs() < 1e-10 * lp.abs(), "{got_p} vs {lp}");
        }
    }

    fn hjb_residual(sol: &AgentSolution, z: f64) -> f64 {
        let g = &sol.params;
        let pt = sol.point(z);
        let b = if z >= sol.z_star { 1.0 } else { 0.0 };
        let one_minus = 1.0 - pt.a;
        (g.r1 + b * g.lambda) * pt.v
            - g.r1 * (g.u + one_minus * g.c)
            - 0.5 * g.psi * g.psi * one_minus * one_minus * (pt.dv + pt.d2v)
    }

    #[test]
    fn hjb_residual_figure() {
        let sol = build_agent_solution(&fig(), 0.3).unwrap();
        let g = fig();
        let kinks = [sol.z_l.unwrap(), sol.z_star, sol.z_r.unwrap()];
        let h = 1e-3;
        for i in 0..12000 {
            let z = sol.z_star - 6.0 + i as f64 * h;
            if kinks.iter().any(|k| (z - k).abs() <= h) {
                continue;
            }
            let res = hjb_residual(&sol, z);
            assert!(res.abs() < 1e-6 * g.r1 * (g.u + g.c), "z-z*={} res={res}", z - sol.z_star);
        }
    }

    #[test]
    fn pasting_conditions() {
        for params in [fig(), GameParams { r1: 3.0, ..fig() }, fig().with_psi(6.0)] {
            let sol = build_agent_solution(&params, -0.4).unwrap();
            let mut knots = vec![sol.z_star];
            knots.extend(sol.z_l);
            knots.extend(sol.z_r);
            for z in knots {
                // step small enough that the slope itself moves v by < 1e-10
                let eps = (1e-10 / (1.0 + sol.point(z).dv.abs())).max(4.0 * f64::EPSILON * z.abs());
                let lo = sol.point(z - eps);
                let hi = sol.point(z + eps);
                let drift = sol.point(z).dv.abs() * 2.0 * eps;
                assert!((lo.v - hi.v).abs() < 1e-9 + drift, "value jump at {z}");
                let bend = lo.d2v.abs().max(hi.d2v.abs()) * 2.0 * eps;
                assert!((lo.dv - hi.dv).abs() < 1e-7 * (1.0 + lo.dv.abs()) + bend, "slope jump at {z}");
            }
        }
    }

    #[test]
    fn first_order_rule_everywhere() {
        let sol = build_agent_solution(&fig().with_psi(4.0), 1.0).unwrap();
        let g = sol.params;
        for i in 0..4000 {
            let z = sol.z_star - 10.0 + i as f64 * 5e-3;
            let pt = sol.point(z);
            let rule = 1.0 - g.r1 * g.c / (g.r1 * g.c).max(-g.psi * g.psi * pt.dv);
            assert!((pt.a - rule).abs() < 1e-8);
            assert!((0.0..1.0).contains(&pt.a));
        }
    }

    #[test]
    fn translation_invariance() {
        let a = build_agent_solution(&fig(), 0.2).unwrap();
        let b = build_agent_solution(&fig(), 0.9).unwrap();
        assert!((b.z_l.unwrap() - a.z_l.unwrap() - 0.7).abs() < 1e-10);
        assert!((b.z_r.unwrap() - a.z_r.unwrap() - 0.7).abs() < 1e-10);
        for i in 0..800 {
            let s = -4.0 + i as f64 * 0.01;
            let (aa, va) = a.eval(0.2 + s);
            let (ab, vb) = b.eval(0.9 + s);
            assert!((aa - ab).abs() < 1e-10 && (va - vb).abs() < 1e-10);
        }
    }

    #[test]
    fn limits_and_separating_shape() {
        let sol = build_agent_solution(&GameParams { r1: 3.0, ..fig() }, 0.0).unwrap();
        assert_eq!(sol.regime, Regime::FullySeparating);
        let g = sol.params;
        let (a, v) = sol.eval(-60.0);
        assert_eq!(a, 0.0);
        assert!((v - (g.u + g.c)).abs() < 1e-12);
        let (_, v) = sol.eval(60.0);
        assert!((v - g.r1 * (g.u + g.c) / (g.r1 + g.lambda)).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let (a, v) = sol.eval(-10.0 + 0.05 * i as f64);
            assert_eq!(a, 0.0);
            assert!(v < prev);
            prev = v;
        }
        let hump = build_agent_solution(&fig(), 0.0).unwrap();
        assert_eq!(hump.eval(f64::NEG_INFINITY), (0.0, 2.0));
        assert_eq!(hump.eval(-1e6).0, 0.0);
        assert!((hump.eval(1e6).1 - 0.4).abs() < 1e-14);
    }

    #[test]
    fn peak_at_cutoff() {
        let sol = build_agent_solution(&fig(), 0.25).unwrap();
        let peak = sol.policy(sol.z_star);
        assert!((peak - A_STAR_FIG).abs() < 1e-10);
        for i in 0..5000 {
            let z = sol.z_star - 5.0 + i as f64 * 2e-3;
            assert!(sol.policy(z) <= peak + 1e-15);
        }
    }

    #[test]
    fn first_order_identities_in_mixing_region() {
        let sol = build_agent_solution(&fig(), 0.0).unwrap();
        let g = sol.params;
        let (zl, zr) = (sol.z_l.unwrap(), sol.z_r.unwrap());
        let h = 1e-4;
        let factor_r = (g.r1 + g.lambda) / g.r1;
        let u_bar = g.r1 * g.u / (g.r1 + g.lambda);
        for i in 1..200 {
            let z = zl + (sol.z_star - zl) * i as f64 / 200.0;
            let da = (sol.policy(z + h) - sol.policy(z - h)) / (2.0 * h);
            let (a, v) = sol.eval(z);
            assert!((1.0 - a - da - 2.0 * (v - g.u) / g.c).abs() < 1e-6);
            let z = sol.z_star + (zr - sol.z_star) * i as f64 / 200.0;
            let da = (sol.policy(z + h) - sol.policy(z - h)) / (2.0 * h);
            let (a, v) = sol.eval(z);
            assert!((1.0 - a - da - 2.0 * (v - u_bar) / g.c * factor_r).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_of_policy_and_value() {
        let sol = build_agent_solution(&fig(), 0.0).unwrap();
        let (zl, zr) = (sol.z_l.unwrap(), sol.z_r.unwrap());
        let h = 2e-3;
        let zs: Vec<f64> = (0..5000).map(|i| -6.0 + i as f64 * h).collect();
        let pts: Vec<AgentPoint> = zs.iter().map(|&z| sol.point(z)).collect();
        for i in 1..zs.len() - 1 {
            let z = zs[i];
            assert!(pts[i + 1].v < pts[i].v);
            let dd = pts[i + 1].v - 2.0 * pts[i].v + pts[i - 1].v;
            if zs[i + 1] < sol.z_star {
                assert!(dd <= 1e-8, "not concave at {z}");
            } else if zs[i - 1] > sol.z_star {
                assert!(dd >= -1e-8, "not convex at {z}");
            }
            let (a0, a1) = (pts[i].a, pts[i + 1].a);
            if zs[i + 1] <= zl || z >= zr {
                assert_eq!(a0, 0.0);
            } else if z > zl && zs[i + 1] <= sol.z_star {
                assert!(a1 > a0);
            } else if z >= sol.z_star && zs[i + 1] < zr {
                assert!(a1 < a0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn regime_equivalence(r1 in 0.01f64..5.0, lambda in 0.01f64..10.0, psi in 0.1f64..10.0, u in 0.1f64..3.0, c in 0.1f64..3.0) {
            let g = GameParams { r1, lambda, psi, u, c, ..fig() };
            let r_star = solve_r_star(&g);
            let (vl, vr, _, _) = boundary_values(&g);
            let hump = classify_regime(&g) == Regime::HumpShaped;
            // skip draws within rounding distance of the boundary
            prop_assume!((r1 - r_star).abs() > 1e-9 * r_star);
            prop_assert_eq!(hump, r1 < r_star);
            prop_assert_eq!(hump, vl > vr);
        }

        #[test]
        fn solution_invariants(r1 in 0.05f64..2.0, lambda in 0.1f64..5.0, psi in 0.3f64..8.0, z_star in -3.0f64..3.0) {
            let g = GameParams { r1, lambda, psi, ..fig() };
            let sol = build_agent_solution(&g, z_star).unwrap();
            if sol.regime == Regime::HumpShaped {
                let (zl, zr) = (sol.z_l.unwrap(), sol.z_r.unwrap());
                prop_assert!(zl < z_star && z_star < zr);
                prop_assert!(sol.v_r < sol.v_star && sol.v_star < sol.v_l);
                prop_assert!(sol.c1.unwrap().value < 0.0 && sol.d1.unwrap().value < 0.0);
            }
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let z = z_star - 8.0 + 0.08 * i as f64;
                let pt = sol.point(z);
                prop_assert!((0.0..=1.0).contains(&pt.a));
                prop_assert!(pt.ln_slack.is_finite() && pt.ln_slack <= 0.0);
                prop_assert!(pt.v <= prev);
                prev = pt.v;
            }
        }
    }
}
