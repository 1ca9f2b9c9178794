//! Monte Carlo simulation of the on-path log-odds process with Poisson
//! stopping opportunities.
//!
//! On path, log-odds move as a Brownian motion with drift +-1/2 run on the
//! clock `ds = psi^2 (1 - a)^2 dt`. Steps are exact Gaussian moves in that
//! clock; only the map back to calendar time is integrated, which keeps the
//! kinks of the policy from biasing the law of the path. Steps lengthen where
//! the agent does not mix and the stopping rule cannot change within reach.
//! Arrival times are exact exponentials and the belief at an arrival is drawn
//! from the Brownian bridge across the step.

use rand::rngs::SmallRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agent::AgentSolution;
use crate::error::{Error, Result};
use crate::model::{logistic, logit, GameParams};
use crate::principal::Equilibrium;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentType {
    /// noninvestible, strategic
    Ni,
    /// investible, passive
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Base time step; must satisfy `dt <= 0.01 / max(1, psi^2)`.
    pub dt: f64,
    pub horizon: f64,
    /// Paths per agent type.
    pub n_paths: usize,
    pub seed: u64,
    /// Paths are absorbed once log-odds fall below `-z_cap`.
    pub z_cap: f64,
    pub p0: f64,
    pub noise: Noise,
}

/// Source of the Brownian moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// A fresh Gaussian draw per step.
    #[default]
    Independent,
    /// Each path is driven by a fixed Brownian function of the clock, so runs
    /// that differ only in `dt` follow the same noise path.
    Coupled,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 2e-3,
            horizon: 40.0,
            n_paths: 10_000,
            seed: 20240917,
            z_cap: 12.0,
            p0: 0.3,
            noise: Noise::Independent,
        }
    }
}

impl SimConfig {
    /// Largest base step allowed at signal-to-noise ratio `psi`.
    pub fn max_dt(psi: f64) -> f64 {
        0.01 / psi.powi(2).max(1.0)
    }

    pub fn validate(&self, params: &GameParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= Self::max_dt(params.psi) * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "dt = {} must lie in (0, {}]",
                self.dt,
                Self::max_dt(params.psi)
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive and finite".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::Config("n_paths must be at least 2".into()));
        }
        if !(self.z_cap >= 12.0) {
            return Err(Error::Config(format!("z_cap must be at least 12, got {}", self.z_cap)));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1), got {}", self.p0)));
        }
        Ok(())
    }
}

/// `ln(1 - a)` tabulated on the mixing region, linear in between nodes.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    z_star: f64,
    /// mixing region, absent when the agent never mixes
    region: Option<(f64, f64)>,
    left: Vec<f64>,
    right: Vec<f64>,
    h_left: f64,
    h_right: f64,
}

const TABLE_NODES: usize = 4096;
/// Largest change of `ln(1 - a)` and of `z` across a lengthened step.
const MAX_LN_SLACK_STEP: f64 = 0.05;
const MAX_Z_STEP: f64 = 0.01;

impl PolicyTable {
    pub fn new(agent: &AgentSolution) -> Self {
        let z_star = agent.z_star;
        match (agent.z_l, agent.z_r) {
            (Some(zl), Some(zr)) => {
                let h_left = (z_star - zl) / (TABLE_NODES - 1) as f64;
                let h_right = (zr - z_star) / (TABLE_NODES - 1) as f64;
                let left = (0..TABLE_NODES)
                    .map(|i| agent.point(zl + i as f64 * h_left).ln_slack)
                    .collect();
                let right = (0..TABLE_NODES)
                    .map(|i| agent.point(z_star + i as f64 * h_right).ln_slack)
                    .collect();
                PolicyTable {
                    z_star,
                    region: Some((zl, zr)),
                    left,
                    right,
                    h_left,
                    h_right,
                }
            }
            _ => PolicyTable {
                z_star,
                region: None,
                left: Vec::new(),
                right: Vec::new(),
                h_left: 1.0,
                h_right: 1.0,
            },
        }
    }

    fn lookup(table: &[f64], x0: f64, h: f64, z: f64) -> f64 {
        let s = ((z - x0) / h).max(0.0);
        let i = (s as usize).min(table.len() - 2);
        let t = (s - i as f64).min(1.0);
        table[i] + t * (table[i + 1] - table[i])
    }

    /// `ln(1 - a(z))`.
    pub fn ln_slack(&self, z: f64) -> f64 {
        match self.region {
            Some((zl, zr)) if z > zl && z < zr => {
                if z <= self.z_star {
                    Self::lookup(&self.left, zl, self.h_left, z)
                } else {
                    Self::lookup(&self.right, self.z_star, self.h_right, z)
                }
            }
            _ => 0.0,
        }
    }

    /// Slope of `ln(1 - a)` in log-odds.
    fn ln_slack_slope(&self, z: f64) -> f64 {
        let slope = |table: &[f64], x0: f64, h: f64| {
            let i = (((z - x0) / h).max(0.0) as usize).min(table.len() - 2);
            (table[i + 1] - table[i]) / h
        };
        match self.region {
            Some((zl, zr)) if z > zl && z < zr => {
                if z <= self.z_star {
                    slope(&self.left, zl, self.h_left)
                } else {
                    slope(&self.right, self.z_star, self.h_right)
                }
            }
            _ => 0.0,
        }
    }

    /// `1 - a(z)`.
    pub fn slack(&self, z: f64) -> f64 {
        self.ln_slack(z).exp()
    }

    /// Distance to the nearest point where the coefficients can change,
    /// or `None` inside the mixing region.
    fn calm_distance(&self, z: f64) -> Option<f64> {
        match self.region {
            Some((zl, zr)) => {
                if z < zl {
                    Some(zl - z)
                } else if z > zr {
                    Some(z - zr)
                } else {
                    None
                }
            }
            None => Some((z - self.z_star).abs()),
        }
    }
}

/// What happened on one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub agent_type: AgentType,
    /// Stop time, if the principal stopped.
    pub stop_time: Option<f64>,
    pub censored: bool,
    /// Discounted flow payoff of the noninvestible agent while alive.
    pub agent_payoff: f64,
    pub discount_r1: f64,
    pub discount_r2: f64,
    /// `e^{-r2 T}` times the lump sum for this type.
    pub principal_payoff: f64,
    /// Belief at `min(t_probe, T)`.
    pub probe_belief: f64,
    /// `r1 * integral e^{-r1 t} 1{a <= 1 - eps} dt` while alive.
    pub low_mimic: f64,
    /// Bound on the discounted payoff lost to censoring, relative to scale.
    pub censored_mass: f64,
}

/// Per-path RNG: ChaCha keyed by the seed with the path as stream, so draws
/// do not depend on the order in which paths are run.
fn path_rng(seed: u64, agent_type: AgentType, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = match agent_type {
        AgentType::Ni => 0,
        AgentType::I => 1,
    };
    rng.set_stream(2 * path_index + lane);
    rng
}

/// Brownian motion on `[0, inf)` as a fixed function of its argument: unit
/// increments and dyadic bridge midpoints are drawn from generators keyed
/// by their position, then linear below the finest level. Lookups may come
/// in any order.
struct BrownianTree {
    key: u64,
    /// values at the integers
    knots: Vec<f64>,
    /// last descent: per level `(lo, hi, b(lo), b(hi))`, all inside `[k, k + 1]`
    trail: Vec<(f64, f64, f64, f64)>,
    trail_k: usize,
}

const TREE_DEPTH: u32 = 24;
const TREE_SALT: u64 = 0x5d58_8b65_6c07_8965;

impl BrownianTree {
    fn new(seed: u64, agent_type: AgentType, path_index: u64) -> Self {
        BrownianTree {
            key: path_rng(seed ^ TREE_SALT, agent_type, path_index).next_u64(),
            knots: vec![0.0],
            trail: Vec::new(),
            trail_k: usize::MAX,
        }
    }

    fn keyed_normal(&self, k: usize, level: u32, index: u64) -> f64 {
        let packed = ((k as u64) << 29) | (u64::from(level) << 24) | index;
        let mut rng = SmallRng::seed_from_u64(self.key ^ packed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        StandardNormal.sample(&mut rng)
    }

    fn at(&mut self, s: f64) -> f64 {
        let k = s.max(0.0).floor() as usize;
        while self.knots.len() <= k + 1 {
            let j = self.knots.len() - 1;
            let next = self.knots[j] + self.keyed_normal(j, 0, 0);
            self.knots.push(next);
        }
        if self.trail_k != k {
            self.trail.clear();
            self.trail.push((k as f64, (k + 1) as f64, self.knots[k], self.knots[k + 1]));
            self.trail_k = k;
        }
        // keep the deepest cached interval that still holds s
        let keep = self.trail.iter().take_while(|(lo, hi, ..)| *lo <= s && s <= *hi).count().max(1);
        self.trail.truncate(keep);
        while self.trail.len() <= TREE_DEPTH as usize {
            let level = self.trail.len() as u32;
            let (lo, hi, blo, bhi) = *self.trail.last().expect("root interval");
            let mid = 0.5 * (lo + hi);
            let index = ((mid - k as f64) * f64::from(1u32 << level)) as u64;
            let bmid = 0.5 * (blo + bhi) + (0.25 * (hi - lo)).sqrt() * self.keyed_normal(k, level, index);
            self.trail.push(if s <= mid { (lo, mid, blo, bmid) } else { (mid, hi, bmid, bhi) });
        }
        let (lo, hi, blo, bhi) = *self.trail.last().expect("leaf interval");
        blo + (s - lo) / (hi - lo) * (bhi - blo)
    }
}

/// Stopping behaviour of a simulated path.
#[derive(Debug, Clone, Copy)]
enum Exit {
    /// Principal stops at arrivals when `z >= z*`.
    Poisson,
    /// No stopping opportunities; stop on leaving `(lo, hi)` in log-odds.
    Interval(f64, f64),
}

struct Stepper<'a> {
    params: &'a GameParams,
    table: &'a PolicyTable,
    z_star: f64,
    cfg: &'a SimConfig,
    eps: f64,
    t_probe: f64,
}

impl Stepper<'_> {
    fn run(&self, agent_type: AgentType, path_index: u64, exit: Exit) -> PathRecord {
        let g = self.params;
        let cfg = self.cfg;
        let mut rng = path_rng(cfg.seed, agent_type, path_index);
        let arrivals = Exp::new(g.lambda).expect("positive rate");
        let sign = match agent_type {
            AgentType::Ni => 1.0,
            AgentType::I => -1.0,
        };
        let lump = match agent_type {
            AgentType::Ni => g.w_ni,
            AgentType::I => g.w_i,
        };
        let scale = (g.u + g.c).max(g.w_ni.abs()).max(g.w_i.abs());
        let psi2 = g.psi * g.psi;
        let mut t = 0.0;
        let mut z = logit(cfg.p0);
        let mut ln_sl = self.table.ln_slack(z);
        let mut next_arrival = match exit {
            Exit::Poisson => arrivals.sample(&mut rng),
            Exit::Interval(..) => f64::INFINITY,
        };
        let mut probe = if self.t_probe > 0.0 { None } else { Some(cfg.p0) };
        let mut tree = match cfg.noise {
            Noise::Independent => None,
            Noise::Coupled => Some(BrownianTree::new(cfg.seed, agent_type, path_index)),
        };
        // clock position and the tree's value there
        let (mut clock, mut b_here) = (0.0, 0.0);
        let mut record = PathRecord {
            agent_type,
            stop_time: None,
            censored: false,
            agent_payoff: 0.0,
            discount_r1: 0.0,
            discount_r2: 0.0,
            principal_payoff: 0.0,
            probe_belief: f64::NAN,
            low_mimic: 0.0,
            censored_mass: 0.0,
        };
        loop {
            if let Exit::Interval(lo, hi) = exit {
                if z <= lo || z >= hi {
                    record.stop_time = Some(t);
                    record.discount_r1 = (-g.r1 * t).exp();
                    record.discount_r2 = (-g.r2 * t).exp();
                    break;
                }
            }
            if t >= cfg.horizon {
                record.censored = true;
                record.censored_mass = (-g.r1.min(g.r2) * t).exp();
                break;
            }
            if z <= -cfg.z_cap {
                // far below the cutoff: the remaining flow is u + c up to a
                // term that decays like the chance of ever climbing back
                record.censored = true;
                let disc1 = (-g.r1 * t).exp();
                if agent_type == AgentType::Ni {
                    record.agent_payoff += (g.u + g.c) * disc1;
                    record.low_mimic += disc1;
                }
                let back = (-(cfg.z_cap + self.z_star)).exp();
                record.censored_mass = ((-g.r2 * t).exp() * back * scale).max(disc1 * g.c * back) / scale;
                break;
            }
            // z is a unit Brownian motion with drift +-1/2 on the clock
            // ds = psi^2 (1 - a)^2 dt, so its step is exact and only the clock
            // is integrated
            // the calendar step is at most dt unless z would barely move
            let rate = psi2 * (2.0 * ln_sl).exp();
            let mut span = cfg.horizon - t + cfg.dt;
            if let Exit::Poisson = exit {
                // a handful of arrivals per step at most
                span = span.min(1.0 / g.lambda);
            }
            let floor = match self.table.calm_distance(z) {
                Some(dist) => (dist / 8.0).powi(2).min(dist / 2.0),
                None => (MAX_LN_SLACK_STEP / self.table.ln_slack_slope(z).abs()).min(MAX_Z_STEP).powi(2),
            };
            let ds = (rate * cfg.dt).max(floor.min(rate * span));
            let (z1, b_next) = match tree.as_mut() {
                None => (z + sign * 0.5 * ds + ds.sqrt() * normal(&mut rng), 0.0),
                Some(b) => {
                    let b1 = b.at(clock + ds);
                    (z + sign * 0.5 * ds + (b1 - b_here), b1)
                }
            };
            let ln_sl1 = self.table.ln_slack(z1);
            // ln(1 - a) is close to linear in s across the step
            let dt_step = ds / psi2 * log_mean(-2.0 * ln_sl, -2.0 * ln_sl1);
            let slack_time = ds / psi2 * log_mean(-ln_sl, -ln_sl1);
            let mean_slack = slack_time / dt_step;
            // share of the step with 1 - a >= eps, reading ln(1 - a) as linear
            let (lo_sl, hi_sl) = (ln_sl.min(ln_sl1), ln_sl.max(ln_sl1));
            let ln_eps = self.eps.ln();
            let low = if lo_sl >= ln_eps {
                1.0
            } else if hi_sl <= ln_eps {
                0.0
            } else {
                (hi_sl - ln_eps) / (hi_sl - lo_sl)
            };

            // events inside the step, sampled on the Brownian bridge
            let (mut th0, mut zb0) = (0.0, z);
            let mut end = dt_step;
            let mut stopped = false;
            loop {
                let te = if probe.is_none() { next_arrival.min(self.t_probe) } else { next_arrival };
                if te > t + dt_step {
                    break;
                }
                let th = ((te - t) / dt_step).clamp(th0, 1.0);
                let zb = if th >= 1.0 {
                    z1
                } else if let Some(b) = tree.as_mut() {
                    z + sign * 0.5 * th * ds + (b.at(clock + th * ds) - b_here)
                } else {
                    let w = (th - th0) / (1.0 - th0);
                    let sd = ((th - th0) * (1.0 - th) / (1.0 - th0) * ds).max(0.0).sqrt();
                    zb0 + w * (z1 - zb0) + sd * normal(&mut rng)
                };
                th0 = th;
                zb0 = zb;
                if probe.is_none() && self.t_probe <= next_arrival {
                    probe = Some(logistic(zb));
                    continue;
                }
                if zb >= self.z_star {
                    end = te - t;
                    stopped = true;
                    break;
                }
                next_arrival += arrivals.sample(&mut rng);
            }

            // exact discounting over the step
            let disc1 = (-g.r1 * t).exp() * -(-g.r1 * end).exp_m1();
            if agent_type == AgentType::Ni {
                record.agent_payoff += (g.u + mean_slack * g.c) * disc1;
            }
            record.low_mimic += low * disc1;
            if stopped {
                t = next_arrival;
                record.stop_time = Some(t);
                record.discount_r1 = (-g.r1 * t).exp();
                record.discount_r2 = (-g.r2 * t).exp();
                record.principal_payoff = record.discount_r2 * lump;
                z = zb0;
                break;
            }
            t += dt_step;
            z = z1;
            ln_sl = ln_sl1;
            clock += ds;
            b_here = b_next;
        }
        record.probe_belief = probe.unwrap_or_else(|| logistic(z));
        record
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `(e^x - e^y) / (x - y)`, the mean of `e^s` for `s` linear between `x` and `y`.
fn log_mean(x: f64, y: f64) -> f64 {
    let d = x - y;
    if d.abs() < 1e-8 {
        (0.5 * (x + y)).exp() * (1.0 + d * d / 24.0)
    } else {
        y.exp() * d.exp_m1() / d
    }
}

/// Simulate one on-path history of the given type.
///
/// Builds the policy table on every call; use [`Simulator`] for many paths.
pub fn simulate_path(eq: &Equilibrium, agent_type: AgentType, cfg: &SimConfig, path_index: u64) -> Result<PathRecord> {
    Ok(Simulator::new(eq, cfg)?.path(agent_type, path_index))
}

/// An equilibrium, its tabulated policy and a validated configuration.
pub struct Simulator<'a> {
    eq: &'a Equilibrium,
    table: PolicyTable,
    cfg: SimConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(eq: &'a Equilibrium, cfg: &SimConfig) -> Result<Self> {
        cfg.validate(&eq.params)?;
        Ok(Simulator {
            eq,
            table: PolicyTable::new(&eq.agent),
            cfg: *cfg,
        })
    }

    pub fn path(&self, agent_type: AgentType, path_index: u64) -> PathRecord {
        stepper(self.eq, &self.table, &self.cfg, 0.0, 0.0).run(agent_type, path_index, Exit::Poisson)
    }
}

fn stepper<'a>(eq: &'a Equilibrium, table: &'a PolicyTable, cfg: &'a SimConfig, eps: f64, t_probe: f64) -> Stepper<'a> {
    Stepper {
        params: &eq.params,
        table,
        z_star: eq.agent.z_star,
        cfg,
        eps,
        t_probe,
    }
}

/// Mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Running sums; merging two accumulators is exact and order-free.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn estimate(&self) -> Estimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Estimate {
            mean,
            se: (var / n).sqrt(),
            n: self.n,
        }
    }
}

/// Weighted combination of independent estimates.
fn mix(w: f64, a: Estimate, b: Estimate) -> Estimate {
    Estimate {
        mean: w * a.mean + (1.0 - w) * b.mean,
        se: (w * w * a.se * a.se + (1.0 - w) * (1.0 - w) * b.se * b.se).sqrt(),
        n: a.n + b.n,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub t_probe: f64,
    /// Type-mixture mean of the belief at `min(t_probe, T)`.
    pub mixture: Estimate,
    pub ni: Estimate,
    pub i: Estimate,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub p0: f64,
    pub dt: f64,
    pub n_paths_per_type: usize,
    /// Discounted payoff of the noninvestible agent.
    pub agent_value: Estimate,
    /// Principal's discounted payoff under the prior mixture.
    pub principal_value: Estimate,
    pub discount_r1_ni: Estimate,
    pub discount_r2_ni: Estimate,
    pub discount_r1_i: Estimate,
    pub discount_r2_i: Estimate,
    pub martingale: MartingaleReport,
    /// Discounted time with `a <= 1 - eps` for the noninvestible agent.
    pub low_mimic: Estimate,
    pub low_mimic_eps: f64,
    pub censored_paths: usize,
    pub censored_mass: f64,
}

/// Aggregate `n_paths` histories of each type, stratified by type.
pub fn estimate_values(eq: &Equilibrium, cfg: &SimConfig, t_probe: f64, eps: f64) -> Result<SimReport> {
    cfg.validate(&eq.params)?;
    if !(t_probe >= 0.0 && t_probe <= cfg.horizon) {
        return Err(Error::Config(format!("t_probe must lie in [0, horizon], got {t_probe}")));
    }
    let table = PolicyTable::new(&eq.agent);
    let st = stepper(eq, &table, cfg, eps, t_probe);
    let mut agent = Moments::default();
    let mut principal = [Moments::default(); 2];
    let mut d1 = [Moments::default(); 2];
    let mut d2 = [Moments::default(); 2];
    let mut probe = [Moments::default(); 2];
    let mut low = Moments::default();
    let mut censored = 0usize;
    let mut censored_mass = 0.0;
    for (k, ty) in [AgentType::Ni, AgentType::I].into_iter().enumerate() {
        for i in 0..cfg.n_paths {
            let r = st.run(ty, i as u64, Exit::Poisson);
            if ty == AgentType::Ni {
                agent.push(r.agent_payoff);
                low.push(r.low_mimic);
            }
            principal[k].push(r.principal_payoff);
            d1[k].push(r.discount_r1);
            d2[k].push(r.discount_r2);
            probe[k].push(r.probe_belief);
            if r.censored {
                censored += 1;
                censored_mass += r.censored_mass;
            }
        }
    }
    let p0 = cfg.p0;
    let ni = probe[0].estimate();
    let i = probe[1].estimate();
    let mixture = mix(p0, ni, i);
    Ok(SimReport {
        seed: cfg.seed,
        p0,
        dt: cfg.dt,
        n_paths_per_type: cfg.n_paths,
        agent_value: agent.estimate(),
        principal_value: mix(p0, principal[0].estimate(), principal[1].estimate()),
        discount_r1_ni: d1[0].estimate(),
        discount_r2_ni: d2[0].estimate(),
        discount_r1_i: d1[1].estimate(),
        discount_r2_i: d2[1].estimate(),
        martingale: MartingaleReport {
            t_probe,
            mixture,
            ni,
            i,
            gap: (mixture.mean - p0).abs(),
        },
        low_mimic: low.estimate(),
        low_mimic_eps: eps,
        censored_paths: censored,
        censored_mass: censored_mass / (2 * cfg.n_paths) as f64,
    })
}

/// `|E[p_{t ^ T}] - p0|` under the type mixture, with its standard error.
pub fn martingale_check(eq: &Equilibrium, cfg: &SimConfig, t_probe: f64) -> Result<MartingaleReport> {
    Ok(estimate_values(eq, cfg, t_probe, 0.5)?.martingale)
}

/// Discounted time the noninvestible agent spends mixing little before his
/// belief leaves `(belief_lo, belief_hi)`, ignoring stopping opportunities.
/// `belief_lo = 0` stops only on reaching `belief_hi`.
pub fn learning_diagnostic(
    eq: &Equilibrium,
    cfg: &SimConfig,
    eps: f64,
    belief_lo: f64,
    belief_hi: f64,
) -> Result<Estimate> {
    cfg.validate(&eq.params)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1], got {eps}")));
    }
    if !(0.0 <= belief_lo && belief_lo < cfg.p0 && cfg.p0 < belief_hi && belief_hi < 1.0) {
        return Err(Error::Config("need 0 <= belief_lo < p0 < belief_hi < 1".into()));
    }
    let table = PolicyTable::new(&eq.agent);
    let st = stepper(eq, &table, cfg, eps, 0.0);
    // a lower edge of 0 never binds; such paths end at the log-odds floor
    let lo = if belief_lo > 0.0 { logit(belief_lo) } else { f64::NEG_INFINITY };
    let exit = Exit::Interval(lo, logit(belief_hi));
    let mut m = Moments::default();
    for i in 0..cfg.n_paths {
        m.push(st.run(AgentType::Ni, i as u64, exit).low_mimic);
    }
    Ok(m.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::build_agent_solution;
    use crate::model::Numerics;
    use crate::principal::solve_equilibrium;

    fn fig_eq() -> Equilibrium {
        solve_equilibrium(&GameParams::figure(), &Numerics { grid_n: 1001, ..Numerics::default() }).unwrap()
    }

    #[test]
    fn table_matches_closed_form() {
        let eq = fig_eq();
        let table = PolicyTable::new(&eq.agent);
        for i in 0..2000 {
            let z = eq.agent.z_star - 3.0 + i as f64 * 0.003;
            let a = eq.agent.policy(z);
            assert!((1.0 - a - table.slack(z)).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_belief_limit() {
        let g = GameParams { r1: 10.0, psi: 1e-6, ..GameParams::figure() };
        let agent = build_agent_solution(&g, logit(0.5)).unwrap();
        let mut eq = fig_eq();
        eq.params = g;
        eq.agent = agent;
        let cfg = SimConfig { p0: 0.3, n_paths: 200, ..SimConfig::default() };
        let rep = estimate_values(&eq, &cfg, 1.0, 0.5).unwrap();
        // below the cutoff the belief cannot reach it: never stopped
        assert_eq!(rep.discount_r1_ni.mean, 0.0);
        assert!((rep.agent_value.mean - (g.u + g.c)).abs() < 1e-6);
        let cfg = SimConfig { p0: 0.7, ..cfg };
        let r = simulate_path(&eq, AgentType::Ni, &cfg, 3).unwrap();
        let first = Exp::new(g.lambda).unwrap().sample(&mut path_rng(cfg.seed, AgentType::Ni, 3));
        assert_eq!(r.stop_time, Some(first));
    }

    #[test]
    fn same_seed_same_report() {
        let eq = fig_eq();
        let cfg = SimConfig { n_paths: 300, ..SimConfig::default() };
        let a = serde_json::to_string(&estimate_values(&eq, &cfg, 1.0, 0.1).unwrap()).unwrap();
        let b = serde_json::to_string(&estimate_values(&eq, &cfg, 1.0, 0.1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stops_only_at_or_above_cutoff() {
        let eq = fig_eq();
        let cfg = SimConfig { n_paths: 50, p0: 0.5, ..SimConfig::default() };
        for i in 0..50 {
            let r = simulate_path(&eq, AgentType::Ni, &cfg, i).unwrap();
            assert!(r.stop_time.is_some() || r.censored);
        }
    }

    #[test]
    fn discount_factor_ordering() {
        let g = GameParams { r2: 0.3, ..GameParams::figure() };
        let eq = solve_equilibrium(&g, &Numerics { grid_n: 1001, ..Numerics::default() }).unwrap();
        let cfg = SimConfig { n_paths: 400, p0: 0.5, ..SimConfig::default() };
        let rep = estimate_values(&eq, &cfg, 1.0, 0.1).unwrap();
        let x1 = rep.discount_r1_ni.mean;
        let x2 = rep.discount_r2_ni.mean;
        assert!(x1 <= x2 && x2 <= x1.powf(g.r2 / g.r1));
    }

    #[test]
    fn separating_diagnostic_is_discounted_exit_time() {
        let g = GameParams { r1: 3.0, ..GameParams::figure() };
        let eq = solve_equilibrium(&g, &Numerics { grid_n: 1001, ..Numerics::default() }).unwrap();
        let cfg = SimConfig { n_paths: 400, ..SimConfig::default() };
        let sim = Simulator::new(&eq, &cfg).unwrap();
        let st = stepper(eq_ref(&sim), &sim.table, &sim.cfg, 0.1, 0.0);
        let exit = Exit::Interval(logit(0.05), logit(0.45));
        let mut gap: f64 = 0.0;
        for i in 0..400 {
            let r = st.run(AgentType::Ni, i, exit);
            gap = gap.max((r.low_mimic - (1.0 - r.discount_r1)).abs());
        }
        assert!(gap < 1e-9, "{gap}");
    }

    fn eq_ref<'a>(sim: &Simulator<'a>) -> &'a Equilibrium {
        sim.eq
    }

    #[test]
    fn full_threshold_never_counts_mixing_states() {
        let eq = fig_eq();
        let (zl, zr) = (eq.agent.z_l.unwrap(), eq.agent.z_r.unwrap());
        let (lo, hi) = (logistic(zl + 0.1), logistic(zr - 0.1));
        let cfg = SimConfig { n_paths: 200, p0: logistic(eq.agent.z_star), ..SimConfig::default() };
        let est = learning_diagnostic(&eq, &cfg, 1.0, lo, hi).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn standard_error_scales_with_paths() {
        let eq = fig_eq();
        let cfg = SimConfig { n_paths: 2000, p0: 0.5, ..SimConfig::default() };
        let a = estimate_values(&eq, &cfg, 1.0, 0.1).unwrap();
        let b = estimate_values(&eq, &SimConfig { n_paths: 4000, ..cfg }, 1.0, 0.1).unwrap();
        let ratio = b.agent_value.se / a.agent_value.se;
        assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn log_mean_limits() {
        assert!((log_mean(0.3, 0.3) - 0.3f64.exp()).abs() < 1e-15);
        assert!((log_mean(1.0, 0.0) - (1f64.exp() - 1.0)).abs() < 1e-15);
        assert!((log_mean(1e-9, 0.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_coarse_steps() {
        let eq = fig_eq();
        let cfg = SimConfig { dt: 0.01, ..SimConfig::default() };
        assert!(matches!(estimate_values(&eq, &cfg, 1.0, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn tree_lookups_ignore_order() {
        let mut a = BrownianTree::new(5, AgentType::Ni, 3);
        let mut b = BrownianTree::new(5, AgentType::Ni, 3);
        let pts = [0.1, 2.7, 0.35, 0.3500001, 7.25, 0.0, 2.69];
        let fwd: Vec<f64> = pts.iter().map(|&s| a.at(s)).collect();
        let back: Vec<f64> = pts.iter().rev().map(|&s| b.at(s)).collect();
        for (x, y) in fwd.iter().zip(back.iter().rev()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.at(0.0), 0.0);
    }

    #[test]
    fn tree_increments_have_brownian_variance() {
        let n = 4000;
        let (mut unit, mut quarter, mut cross) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let mut t = BrownianTree::new(11, AgentType::I, i);
            let d1 = t.at(1.3) - t.at(0.3);
            let d2 = t.at(2.55) - t.at(2.3);
            unit += d1 * d1;
            quarter += d2 * d2;
            cross += d1 * d2;
        }
        let n = n as f64;
        // sample variances within about four standard errors
        assert!((unit / n - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "{}", unit / n);
        assert!((quarter / n - 0.25).abs() < 4.0 * 0.25 * (2.0 / n).sqrt(), "{}", quarter / n);
        assert!((cross / n).abs() < 4.0 * 0.5 / n.sqrt());
    }

    #[test]
    fn halving_dt_moves_estimates_under_one_se() {
        let eq = fig_eq();
        for p0 in [0.2, 0.4, 0.6] {
            let cfg = |dt: f64| SimConfig { dt, n_paths: 1500, p0, noise: Noise::Coupled, ..SimConfig::default() };
            let a = estimate_values(&eq, &cfg(2e-3), 1.0, 0.1).unwrap();
            let b = estimate_values(&eq, &cfg(1e-3), 1.0, 0.1).unwrap();
            let dv = (a.agent_value.mean - b.agent_value.mean).abs() / a.agent_value.se;
            let dw = (a.principal_value.mean - b.principal_value.mean).abs() / a.principal_value.se;
            assert!(dv < 1.0 && dw < 1.0, "p0 {p0}: {dv} {dw}");
            // the coupled noise has the right law
            let v = (b.agent_value.mean - eq.agent_value(p0)) / b.agent_value.se;
            let w = (b.principal_value.mean - eq.principal_value(p0)) / b.principal_value.se;
            assert!(v.abs() < 3.0 && w.abs() < 3.0, "p0 {p0}: {v} {w}");
        }
    }

    #[test]
    fn censoring_is_negligible() {
        let eq = fig_eq();
        let g = eq.params;
        for p0 in [0.2, 0.6] {
            let cfg = SimConfig {
                n_paths: 4000,
                p0,
                horizon: 20.0 / g.r1.min(g.r2),
                ..SimConfig::default()
            };
            let rep = estimate_values(&eq, &cfg, 1.0, 0.1).unwrap();
            assert!(rep.censored_mass < 1e-4, "{}", rep.censored_mass);
        }
    }
}
