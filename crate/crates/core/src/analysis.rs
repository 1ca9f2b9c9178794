//! Expected performance, its shape, and the comparative-statics sweeps.

use std::time::Instant;

use serde::Serialize;

use crate::agent::{solve_r_star, Regime};
use crate::curve::{Axis, CurveKind, ValueCurve};
use crate::error::{Error, Result};
use crate::model::{benchmark_values, logistic, logit, termination_payoff, GameParams, Numerics};
use crate::numeric::{bisect, golden_section_min, linspace};
use crate::principal::{solve_equilibrium, Equilibrium};

/// Outsider's expected signal drift over the noise scale,
/// `psi (1 - (1 - a) p)`.
pub fn expected_performance(eq: &Equilibrium, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            what: "belief",
            value: p,
            domain: "(0, 1)".into(),
        });
    }
    Ok(ep_at_z(eq, logit(p)))
}

fn ep_at_z(eq: &Equilibrium, z: f64) -> f64 {
    let slack = eq.agent.point(z).ln_slack.exp();
    eq.params.psi * (1.0 - slack * logistic(z))
}

/// Expected performance on `n` evenly spaced beliefs inside `(0, 1)`.
pub fn expected_performance_curve(eq: &Equilibrium, n: usize) -> Result<ValueCurve> {
    let p_min = eq.numerics.p_min;
    let ps = linspace(p_min, 1.0 - p_min, n.max(2));
    let values = ps.iter().map(|&p| ep_at_z(eq, logit(p))).collect();
    ValueCurve::new(CurveKind::ExpectedPerformance, Axis::Belief, ps, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpClass {
    Decreasing,
    ZigZag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpShape {
    pub classification: EpClass,
    /// Interior minimum before the cutoff (zig-zag only).
    pub p_underline: Option<f64>,
    /// Equals `p*` (zig-zag only).
    pub p_peak: Option<f64>,
    /// `(1 - a(z*)) p* - 2 (v* - u) / c`; positive means zig-zag when mixing.
    pub criterion: f64,
}

/// Zig-zag iff the agent mixes and `(1 - a*) p* > 2 (v* - u) / c`.
pub fn classify_ep_shape(eq: &Equilibrium) -> EpShape {
    let g = &eq.params;
    let ag = &eq.agent;
    let slack = ag.point(ag.z_star).ln_slack.exp();
    let criterion = slack * eq.p_star - 2.0 * (ag.v_star - g.u) / g.c;
    let zigzag = ag.regime == Regime::HumpShaped && criterion > 0.0;
    if !zigzag {
        return EpShape {
            classification: EpClass::Decreasing,
            p_underline: None,
            p_peak: None,
            criterion,
        };
    }
    let p_l = eq.p_l.unwrap_or(0.0);
    let p_under = golden_section_min(|p| ep_at_z(eq, logit(p)), p_l, eq.p_star, 1e-7);
    EpShape {
        classification: EpClass::ZigZag,
        p_underline: Some(p_under),
        p_peak: Some(eq.p_star),
        criterion,
    }
}

/// Check the segment structure of EP on `n` interior beliefs.
///
/// Decreasing: strictly decreasing throughout. Zig-zag: decreasing up to
/// `p_underline`, increasing up to `p*`, decreasing after. Beliefs within
/// `tol` of a turning point are skipped. Returns the first offending belief.
pub fn verify_ep_segments(eq: &Equilibrium, shape: &EpShape, n: usize, tol: f64) -> std::result::Result<(), f64> {
    let ps = linspace(0.0, 1.0, n + 2);
    let ps = &ps[1..=n];
    let ep: Vec<f64> = ps.iter().map(|&p| ep_at_z(eq, logit(p))).collect();
    let turns: Vec<f64> = match shape.classification {
        EpClass::Decreasing => Vec::new(),
        EpClass::ZigZag => vec![shape.p_underline.unwrap_or(0.0), eq.p_star],
    };
    for i in 0..n - 1 {
        let (p0, p1) = (ps[i], ps[i + 1]);
        if turns.iter().any(|&t| p0 - tol <= t && t <= p1 + tol) {
            continue;
        }
        let rising = match shape.classification {
            EpClass::Decreasing => false,
            EpClass::ZigZag => p0 > turns[0] && p1 < turns[1],
        };
        let ok = if rising { ep[i + 1] > ep[i] } else { ep[i + 1] < ep[i] };
        if !ok {
            return Err(p0);
        }
    }
    Ok(())
}

/// One parameter point of a sweep; failed points carry `error` and NaNs.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub p_star: f64,
    pub probe_p: f64,
    pub w_probe: f64,
    pub w_under: f64,
    pub w_over: f64,
    pub gap_under: f64,
    pub gap_over: f64,
    pub a_at_pstar: f64,
    /// `ln(1 - a)` at the cutoff, informative once `a` rounds to 1.
    pub ln_slack_at_pstar: f64,
    pub error: Option<String>,
    /// Wall-clock seconds; kept out of serialized output.
    #[serde(skip)]
    pub runtime: f64,
}

fn sweep_row(value: f64, probe_p: f64, solved: Result<Equilibrium>, runtime: f64) -> SweepRow {
    match solved {
        Ok(eq) => {
            let (w_under, w_over) = benchmark_values(probe_p, &eq.params).unwrap_or((f64::NAN, f64::NAN));
            let w_probe = eq.principal_value(probe_p);
            let pt = eq.agent.point(eq.agent.z_star);
            SweepRow {
                value,
                p_star: eq.p_star,
                probe_p,
                w_probe,
                w_under,
                w_over,
                gap_under: w_probe - w_under,
                gap_over: w_over - w_probe,
                a_at_pstar: pt.a,
                ln_slack_at_pstar: pt.ln_slack,
                error: None,
                runtime,
            }
        }
        Err(e) => SweepRow {
            value,
            p_star: f64::NAN,
            probe_p,
            w_probe: f64::NAN,
            w_under: f64::NAN,
            w_over: f64::NAN,
            gap_under: f64::NAN,
            gap_over: f64::NAN,
            a_at_pstar: f64::NAN,
            ln_slack_at_pstar: f64::NAN,
            error: Some(e.to_string()),
            runtime,
        },
    }
}

fn check_sorted(what: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Config(format!("{what} is empty")));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

/// Equilibrium at each signal-to-noise ratio in `psi_list` (ascending).
pub fn sweep_psi(params: &GameParams, numerics: &Numerics, psi_list: &[f64], probe_p: f64) -> Result<Vec<SweepRow>> {
    check_sorted("psi list", psi_list)?;
    if !(probe_p > 0.0 && probe_p < 1.0) {
        return Err(Error::Config(format!("probe belief must lie in (0, 1), got {probe_p}")));
    }
    Ok(psi_list
        .iter()
        .map(|&psi| {
            let start = Instant::now();
            let solved = solve_equilibrium(&params.with_psi(psi), numerics);
            sweep_row(psi, probe_p, solved, start.elapsed().as_secs_f64())
        })
        .collect())
}

/// Same as [`sweep_psi`] over the arrival rate.
pub fn sweep_lambda(params: &GameParams, numerics: &Numerics, lambda_list: &[f64], probe_p: f64) -> Result<Vec<SweepRow>> {
    check_sorted("lambda list", lambda_list)?;
    if !(probe_p > 0.0 && probe_p < 1.0) {
        return Err(Error::Config(format!("probe belief must lie in (0, 1), got {probe_p}")));
    }
    Ok(lambda_list
        .iter()
        .map(|&lambda| {
            let start = Instant::now();
            let solved = solve_equilibrium(&params.with_lambda(lambda), numerics);
            sweep_row(lambda, probe_p, solved, start.elapsed().as_secs_f64())
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PatienceRow {
    pub scale: f64,
    pub r1: f64,
    pub r2: f64,
    pub grid_n: usize,
    pub p_star: f64,
    /// Sup over the grid of `|W - max(0, R)|`.
    pub sup_gap: f64,
    pub probe_low: f64,
    pub v_low: f64,
    pub probe_high: f64,
    pub v_high: f64,
    pub a_at_pstar: f64,
    pub warning: Option<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub runtime: f64,
}

/// Grid size for rate scale `s`: the base size over `sqrt(s)`, kept odd.
pub fn patience_grid(base: usize, scale: f64) -> usize {
    let n = (base as f64 / scale.sqrt()).ceil() as usize;
    n | 1
}

/// Equilibria with `r1 = s r1`, `r2 = chi s r1` for each `s` (descending).
pub fn sweep_patience(
    params: &GameParams,
    numerics: &Numerics,
    scale_list: &[f64],
    chi: f64,
    probes: (f64, f64),
) -> Result<Vec<PatienceRow>> {
    if scale_list.is_empty() || scale_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("scale list must be non-empty and strictly decreasing".into()));
    }
    if scale_list.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config("scales must be positive and finite".into()));
    }
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::Config(format!("chi must be positive and finite, got {chi}")));
    }
    let (lo, hi) = probes;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Config("need 0 < low probe < high probe < 1".into()));
    }
    let mut rows = Vec::with_capacity(scale_list.len());
    for &s in scale_list {
        let start = Instant::now();
        let r1 = s * params.r1;
        let g = params.with_rates(r1, chi * r1);
        let nm = Numerics {
            grid_n: patience_grid(numerics.grid_n, s),
            ..*numerics
        };
        let row = match solve_equilibrium(&g, &nm) {
            Ok(eq) => {
                let sup_gap = eq
                    .w
                    .states
                    .iter()
                    .zip(&eq.w.values)
                    .map(|(&p, &w)| (w - termination_payoff(p, &g).unwrap_or(f64::NAN).max(0.0)).abs())
                    .fold(0.0, f64::max);
                let a_star = eq.agent.a_star;
                let warning = (a_star > 1.0 - 1e-3)
                    .then(|| format!("a(z*) = {a_star:.6} leaves little diffusion at the cutoff; refine the grid"));
                PatienceRow {
                    scale: s,
                    r1: g.r1,
                    r2: g.r2,
                    grid_n: nm.grid_n,
                    p_star: eq.p_star,
                    sup_gap,
                    probe_low: lo,
                    v_low: eq.agent_value(lo),
                    probe_high: hi,
                    v_high: eq.agent_value(hi),
                    a_at_pstar: a_star,
                    warning,
                    error: None,
                    runtime: 0.0,
                }
            }
            Err(e) => PatienceRow {
                scale: s,
                r1: g.r1,
                r2: g.r2,
                grid_n: nm.grid_n,
                p_star: f64::NAN,
                sup_gap: f64::NAN,
                probe_low: lo,
                v_low: f64::NAN,
                probe_high: hi,
                v_high: f64::NAN,
                a_at_pstar: f64::NAN,
                warning: None,
                error: Some(e.to_string()),
                runtime: 0.0,
            },
        };
        rows.push(PatienceRow {
            runtime: start.elapsed().as_secs_f64(),
            ..row
        });
    }
    Ok(rows)
}

/// Arrival rate at which `r*` equals `psi^2`; above it `r* > psi^2`.
pub fn lambda_one(params: &GameParams) -> Result<f64> {
    let target = params.psi * params.psi;
    let gap = |lambda: f64| solve_r_star(&params.with_lambda(lambda)) - target;
    let (mut lo, mut hi) = (1.0, 1.0);
    for _ in 0..1000 {
        if gap(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..1000 {
        if gap(lo) <= 0.0 {
            break;
        }
        lo *= 0.5;
    }
    bisect("lambda_1", gap, lo, hi, 1e-14 * hi, 400)
}
