//! Command-line runner: configuration, commands and serialized outputs.
//!
//! Every output starts with the tool version and the fully resolved
//! configuration, so a run can be repeated from its own output. Timings go
//! to standard error only, which keeps outputs byte-stable.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::solve_r_star;
use crate::analysis::{
    classify_ep_shape, expected_performance_curve, sweep_patience, sweep_psi, verify_ep_segments, PatienceRow,
    SweepRow,
};
use crate::error::Error;
use crate::model::{benchmark_values, logit, myopic_cutoffs, termination_payoff, GameParams, Numerics};
use crate::numeric::linspace;
use crate::oracle::{compare_with_closed_form, discrete_equilibrium, multi_start_spread, DiscreteGame};
use crate::principal::{solve_equilibrium, Equilibrium};
use crate::sim::{estimate_values, learning_diagnostic, Noise, SimConfig};

pub const TOOL: &str = "repstop";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: GameParams,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub command: CommandBlocks,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: GameParams::figure(),
            numerics: Numerics::default(),
            command: CommandBlocks::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandBlocks {
    pub solve: SolveBlock,
    pub simulate: SimulateBlock,
    pub sweep_psi: SweepPsiBlock,
    pub sweep_patience: PatienceBlock,
    pub ep: EpBlock,
    pub oracle_check: OracleBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveBlock {
    /// Evenly spaced beliefs in the curve files.
    pub curve_points: usize,
}

impl Default for SolveBlock {
    fn default() -> Self {
        SolveBlock { curve_points: 401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBlock {
    pub p0_list: Vec<f64>,
    /// Paths per agent type and prior.
    pub n_paths: usize,
    pub dt: f64,
    /// `null` means `20 / min(r1, r2)`.
    pub horizon: Option<f64>,
    pub z_cap: f64,
    pub t_probe: f64,
    /// Threshold of the low-mimicking indicator in the report.
    pub eps: f64,
    pub noise: Noise,
    pub learning: LearningBlock,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            p0_list: vec![0.2, 0.4, 0.6],
            n_paths: 100_000,
            dt: 2e-3,
            horizon: None,
            z_cap: 12.0,
            t_probe: 1.0,
            eps: 0.1,
            noise: Noise::Independent,
            learning: LearningBlock::default(),
        }
    }
}

/// Low-mimicking time along a signal-to-noise sweep. Each point uses the
/// smaller of the simulate block's `dt` and the largest step allowed there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningBlock {
    /// Empty skips the sweep.
    pub psi_list: Vec<f64>,
    pub p0: f64,
    /// 0 exits only through the upper edge.
    pub belief_lo: f64,
    pub belief_hi: f64,
    pub eps: f64,
    pub n_paths: usize,
}

impl Default for LearningBlock {
    fn default() -> Self {
        LearningBlock {
            psi_list: vec![2.0, 5.0, 10.0, 20.0],
            p0: 0.3,
            belief_lo: 0.0,
            belief_hi: 0.6,
            eps: 0.1,
            n_paths: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPsiBlock {
    pub psi_list: Vec<f64>,
    pub probe_p: f64,
}

impl Default for SweepPsiBlock {
    fn default() -> Self {
        SweepPsiBlock {
            psi_list: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            probe_p: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatienceBlock {
    pub scale_list: Vec<f64>,
    pub chi: f64,
    pub probes: [f64; 2],
}

impl Default for PatienceBlock {
    fn default() -> Self {
        PatienceBlock {
            scale_list: vec![1.0, 0.3, 0.1, 0.03],
            chi: 1.0,
            probes: [0.3, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpBlock {
    pub grid_points: usize,
    /// Beliefs this close to a turning point are not checked.
    pub turn_tol: f64,
}

impl Default for EpBlock {
    fn default() -> Self {
        EpBlock {
            grid_points: 2000,
            turn_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    pub dt: f64,
    pub z_max: f64,
    pub damping: f64,
    pub max_rounds: usize,
    pub tol: f64,
    /// Random initial conjectures for the uniqueness check; 0 skips it.
    pub starts: usize,
    pub spread_tol: f64,
}

impl Default for OracleBlock {
    fn default() -> Self {
        let dg = DiscreteGame::default();
        OracleBlock {
            dt: dg.dt,
            z_max: dg.z_max,
            damping: dg.damping,
            max_rounds: dg.max_rounds,
            tol: dg.tol,
            starts: 3,
            spread_tol: 1e-4,
        }
    }
}

impl OracleBlock {
    pub fn game(&self) -> DiscreteGame {
        DiscreteGame {
            dt: self.dt,
            z_max: self.z_max,
            damping: self.damping,
            max_rounds: self.max_rounds,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Equilibrium summary and curves for a(p), v(p), W(p)
    Solve,
    /// Monte Carlo values, martingale check and learning diagnostic
    Simulate,
    /// Equilibria along a signal-to-noise sweep
    SweepPsi,
    /// Equilibria as both players grow patient
    SweepPatience,
    /// Expected-performance curve and its shape
    Ep,
    /// Compare the discrete-time oracle with the closed-form solution
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::SweepPsi => "sweep-psi",
            Command::SweepPatience => "sweep-patience",
            Command::Ep => "ep",
            Command::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "repstop", version, about = "Equilibrium of a reputation stopping game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; defaults to the figure parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a configuration entry by dotted path, e.g. params.psi=2.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed for Monte Carlo work.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Principal grid size.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Oracle period length.
    #[arg(long, global = true)]
    delta: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 1.
    Invalid(String),
    /// Solver failure: exit code 2.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Parse a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
}

/// Set `key.path=value` inside the configuration. The value is read as JSON
/// when possible and as a string otherwise.
pub fn apply_override(config: &RunConfig, assignment: &str) -> Result<RunConfig, CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut doc = serde_json::to_value(config).map_err(|e| invalid(e.to_string()))?;
    let mut node = &mut doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(invalid(format!("override `{key}`: unknown key `{part}`")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value.clone());
            break;
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    serde_json::from_value(doc).map_err(|e| invalid(format!("override `{assignment}`: {e}")))
}

/// Resolve the configuration from a file, overrides and flags, in that order.
pub fn resolve_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    grid: Option<usize>,
    delta: Option<f64>,
) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        config = apply_override(&config, o)?;
    }
    if let Some(s) = seed {
        config.numerics.seed = s;
    }
    if let Some(n) = grid {
        config.numerics.grid_n = n;
    }
    if let Some(d) = delta {
        config.command.oracle_check.dt = d;
    }
    config.params.validate()?;
    config.numerics.validate()?;
    Ok(config)
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn config_line(config: &RunConfig) -> String {
    serde_json::to_value(config).expect("config serializes").to_string()
}

/// CSV text with the header block, `\n` line endings.
pub fn csv_text(config: &RunConfig, header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut out = format!("# tool: {TOOL} {VERSION}\n# config: {}\n", config_line(config));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| invalid(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("utf-8 csv"));
    Ok(out)
}

/// Pretty JSON with sorted keys and the header fields.
pub fn json_text(config: &RunConfig, body: Value) -> String {
    let mut doc = json!({
        "tool": TOOL,
        "version": VERSION,
        "config": serde_json::to_value(config).expect("config serializes"),
    });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let mut s = serde_json::to_string_pretty(&doc).expect("json serializes");
    s.push('\n');
    s
}

/// Recover the configuration from the header of an emitted file.
pub fn config_from_output(text: &str) -> Result<RunConfig, CliError> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix("# config: ")) {
        return parse_config(line);
    }
    let doc: Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    let cfg = doc.get("config").ok_or_else(|| invalid("no config header"))?;
    serde_json::from_value(cfg.clone()).map_err(|e| invalid(e.to_string()))
}

/// Files produced by a command, as (file name, contents).
pub type Outputs = Vec<(String, String)>;

/// Outputs of a command that ran to completion. A failed check still
/// writes its report and sets `failure`.
#[derive(Debug)]
pub struct Run {
    pub files: Outputs,
    pub failure: Option<CliError>,
}

impl From<Outputs> for Run {
    fn from(files: Outputs) -> Self {
        Run { files, failure: None }
    }
}

/// Run one command and return its outputs without touching the disk.
pub fn execute(command: Command, config: &RunConfig) -> Result<Run, CliError> {
    match command {
        Command::Solve => cmd_solve(config).map(Run::from),
        Command::Simulate => cmd_simulate(config).map(Run::from),
        Command::SweepPsi => cmd_sweep_psi(config).map(Run::from),
        Command::SweepPatience => cmd_sweep_patience(config).map(Run::from),
        Command::Ep => cmd_ep(config).map(Run::from),
        Command::OracleCheck => cmd_oracle(config),
    }
}

fn solve(config: &RunConfig) -> Result<Equilibrium, CliError> {
    let start = Instant::now();
    let eq = solve_equilibrium(&config.params, &config.numerics)?;
    eprintln!("solved equilibrium in {:.3} s", start.elapsed().as_secs_f64());
    Ok(eq)
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn cmd_solve(config: &RunConfig) -> Result<Outputs, CliError> {
    let eq = solve(config)?;
    let g = &config.params;
    let (p_zero, p_high) = myopic_cutoffs(g);
    let ag = &eq.agent;
    let body = json!({
        "regime": format!("{:?}", eq.regime()),
        "p_star": eq.p_star,
        "p_L": opt_num(eq.p_l),
        "p_R": opt_num(eq.p_r),
        "z_star": ag.z_star,
        "z_L": opt_num(ag.z_l),
        "z_R": opt_num(ag.z_r),
        "p_zero": p_zero,
        "p_H": p_high,
        "r_star": solve_r_star(g),
        "v_star": ag.v_star,
        "v_L": ag.v_l,
        "v_R": ag.v_r,
        "a_star": ag.a_star,
        "ln_slack_star": ag.point(ag.z_star).ln_slack,
        "diagnostics": serde_json::to_value(&eq.diagnostics).expect("diagnostics serialize"),
    });
    let p_min = config.numerics.p_min;
    let ps = linspace(p_min, 1.0 - p_min, config.command.solve.curve_points.max(2));
    let mut policy = Vec::new();
    let mut value = Vec::new();
    let mut principal = Vec::new();
    for &p in &ps {
        let z = logit(p);
        let pt = ag.point(z);
        policy.push(vec![fmt_num(p), fmt_num(z), fmt_num(pt.a), fmt_num(pt.ln_slack)]);
        value.push(vec![fmt_num(p), fmt_num(z), fmt_num(pt.v)]);
        let (under, over) = benchmark_values(p, g)?;
        principal.push(vec![
            fmt_num(p),
            fmt_num(eq.principal_value(p)),
            fmt_num(under),
            fmt_num(over),
            fmt_num(termination_payoff(p, g)?),
        ]);
    }
    Ok(vec![
        ("equilibrium.json".into(), json_text(config, body)),
        ("policy.csv".into(), csv_text(config, &["p", "z", "a", "ln_slack"], &policy)?),
        ("agent_value.csv".into(), csv_text(config, &["p", "z", "v"], &value)?),
        (
            "principal_value.csv".into(),
            csv_text(config, &["p", "W", "W_under", "W_over", "R"], &principal)?,
        ),
    ])
}

fn cmd_simulate(config: &RunConfig) -> Result<Outputs, CliError> {
    let eq = solve(config)?;
    let g = &config.params;
    let b = &config.command.simulate;
    let horizon = b.horizon.unwrap_or(20.0 / g.r1.min(g.r2));
    let mut reports = Vec::new();
    for &p0 in &b.p0_list {
        let start = Instant::now();
        let cfg = SimConfig {
            dt: b.dt,
            horizon,
            n_paths: b.n_paths,
            seed: config.numerics.seed,
            z_cap: b.z_cap,
            p0,
            noise: b.noise,
        };
        let rep = estimate_values(&eq, &cfg, b.t_probe, b.eps)?;
        eprintln!("simulated p0 = {p0} in {:.2} s", start.elapsed().as_secs_f64());
        let v = eq.agent_value(p0);
        let w = eq.principal_value(p0);
        reports.push(json!({
            "p0": p0,
            "v_closed_form": v,
            "w_closed_form": w,
            "v_deviation_se": (rep.agent_value.mean - v) / rep.agent_value.se,
            "w_deviation_se": (rep.principal_value.mean - w) / rep.principal_value.se,
            "martingale_gap_se": rep.martingale.gap / rep.martingale.mixture.se,
            "report": serde_json::to_value(&rep).expect("report serializes"),
        }));
    }
    let mut outputs = vec![("simulate.json".to_string(), json_text(config, json!({ "runs": reports })))];
    let lb = &b.learning;
    if !lb.psi_list.is_empty() {
        let mut rows = Vec::new();
        for &psi in &lb.psi_list {
            let gp = g.with_psi(psi);
            let eqp = solve_equilibrium(&gp, &config.numerics)?;
            let cfg = SimConfig {
                dt: b.dt.min(SimConfig::max_dt(psi)),
                horizon,
                n_paths: lb.n_paths,
                seed: config.numerics.seed,
                z_cap: b.z_cap,
                p0: lb.p0,
                noise: b.noise,
            };
            let est = learning_diagnostic(&eqp, &cfg, lb.eps, lb.belief_lo, lb.belief_hi)?;
            rows.push(vec![fmt_num(psi), fmt_num(est.mean), fmt_num(est.se), est.n.to_string()]);
        }
        outputs.push((
            "learning.csv".into(),
            csv_text(config, &["psi", "low_mimic", "se", "n_paths"], &rows)?,
        ));
    }
    Ok(outputs)
}

fn sweep_fields(r: &SweepRow) -> Vec<String> {
    vec![
        fmt_num(r.value),
        fmt_num(r.p_star),
        fmt_num(r.w_probe),
        fmt_num(r.gap_under),
        fmt_num(r.gap_over),
        fmt_num(r.a_at_pstar),
        fmt_num(r.ln_slack_at_pstar),
        fmt_num(r.probe_p),
        fmt_num(r.w_under),
        fmt_num(r.w_over),
        r.error.clone().unwrap_or_default(),
    ]
}

fn cmd_sweep_psi(config: &RunConfig) -> Result<Outputs, CliError> {
    let b = &config.command.sweep_psi;
    let rows = sweep_psi(&config.params, &config.numerics, &b.psi_list, b.probe_p)?;
    for r in &rows {
        eprintln!("psi = {}: {:.3} s", r.value, r.runtime);
    }
    let body: Vec<Vec<String>> = rows.iter().map(sweep_fields).collect();
    let header = [
        "psi",
        "p_star",
        "W_probe",
        "gap_under",
        "gap_over",
        "a_at_pstar",
        "ln_slack_at_pstar",
        "probe_p",
        "W_under",
        "W_over",
        "error",
    ];
    Ok(vec![("sweep_psi.csv".into(), csv_text(config, &header, &body)?)])
}

fn patience_fields(r: &PatienceRow) -> Vec<String> {
    vec![
        fmt_num(r.scale),
        fmt_num(r.r1),
        fmt_num(r.r2),
        r.grid_n.to_string(),
        fmt_num(r.p_star),
        fmt_num(r.sup_gap),
        fmt_num(r.probe_low),
        fmt_num(r.v_low),
        fmt_num(r.probe_high),
        fmt_num(r.v_high),
        fmt_num(r.a_at_pstar),
        r.warning.clone().unwrap_or_default(),
        r.error.clone().unwrap_or_default(),
    ]
}

fn cmd_sweep_patience(config: &RunConfig) -> Result<Outputs, CliError> {
    let b = &config.command.sweep_patience;
    let rows = sweep_patience(
        &config.params,
        &config.numerics,
        &b.scale_list,
        b.chi,
        (b.probes[0], b.probes[1]),
    )?;
    for r in &rows {
        eprintln!("scale = {}: {:.3} s", r.scale, r.runtime);
        if let Some(w) = &r.warning {
            eprintln!("warning at scale {}: {w}", r.scale);
        }
    }
    let body: Vec<Vec<String>> = rows.iter().map(patience_fields).collect();
    let header = [
        "scale", "r1", "r2", "grid_n", "p_star", "sup_gap", "probe_low", "V_low", "probe_high", "V_high",
        "a_at_pstar", "warning", "error",
    ];
    Ok(vec![("sweep_patience.csv".into(), csv_text(config, &header, &body)?)])
}

fn cmd_ep(config: &RunConfig) -> Result<Outputs, CliError> {
    let eq = solve(config)?;
    let b = &config.command.ep;
    let shape = classify_ep_shape(&eq);
    let verified = verify_ep_segments(&eq, &shape, b.grid_points.max(3), b.turn_tol);
    let curve = expected_performance_curve(&eq, b.grid_points)?;
    let rows: Vec<Vec<String>> = curve
        .states
        .iter()
        .zip(&curve.values)
        .map(|(&p, &e)| vec![fmt_num(p), fmt_num(e)])
        .collect();
    let body = json!({
        "shape": serde_json::to_value(shape).expect("shape serializes"),
        "segments_verified": verified.is_ok(),
        "first_violation": verified.err(),
        "p_star": eq.p_star,
    });
    Ok(vec![
        ("ep_shape.json".into(), json_text(config, body)),
        ("ep.csv".into(), csv_text(config, &["p", "ep"], &rows)?),
    ])
}

/// Thresholds of the oracle comparison, as fractions of the payoff scales.
pub const ORACLE_V_FRACTION: f64 = 0.02;
pub const ORACLE_W_FRACTION: f64 = 0.02;
pub const ORACLE_P_GAP: f64 = 0.02;

fn cmd_oracle(config: &RunConfig) -> Result<Run, CliError> {
    let g = &config.params;
    let eq = solve(config)?;
    let b = &config.command.oracle_check;
    let dg = b.game();
    let start = Instant::now();
    let dp = discrete_equilibrium(g, &dg)?;
    eprintln!("oracle solved in {:.2} s ({} rounds)", start.elapsed().as_secs_f64(), dp.rounds);
    let gaps = compare_with_closed_form(&eq, &dp);
    let v_limit = ORACLE_V_FRACTION * (g.u + g.c);
    let w_limit = ORACLE_W_FRACTION * g.w_ni;
    let (cuts, spread) = if b.starts > 0 {
        multi_start_spread(g, &dg, b.starts, config.numerics.seed)?
    } else {
        (Vec::new(), 0.0)
    };
    let pass = gaps.v_gap <= v_limit
        && gaps.w_gap <= w_limit
        && gaps.p_star_gap <= ORACLE_P_GAP
        && spread <= b.spread_tol;
    let body = json!({
        "gaps": serde_json::to_value(gaps).expect("gaps serialize"),
        "limits": { "v": v_limit, "w": w_limit, "p_star": ORACLE_P_GAP, "spread": b.spread_tol },
        "rounds": dp.rounds,
        "last_change": dp.last_change,
        "multi_start_cutoffs": cuts,
        "multi_start_spread": spread,
        "pass": pass,
    });
    let files = vec![("oracle_check.json".into(), json_text(config, body))];
    let failure = (!pass).then(|| {
        CliError::Numerical(format!(
            "oracle gaps exceed limits: v {:.3e}, W {:.3e}, p* {:.3e}, spread {:.3e}",
            gaps.v_gap, gaps.w_gap, gaps.p_star_gap, spread
        ))
    });
    Ok(Run { files, failure })
}

fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| invalid(format!("cannot create {}: {e}", dir.display())))?;
    for (name, text) in outputs {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// Parse arguments, run, write outputs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let config = match resolve_config(cli.config.as_deref(), &cli.set, cli.seed, cli.grid, cli.delta) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let run = match execute(cli.command, &config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", cli.command.name());
            return e.exit_code();
        }
    };
    if let Err(e) = write_outputs(&cli.out, &run.files) {
        eprintln!("{e}");
        return e.exit_code();
    }
    match run.failure {
        Some(e) => {
            eprintln!("{}: {e}", cli.command.name());
            e.exit_code()
        }
        None => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let text = r#"{"params":{"r1":0.5,"r2":0.5,"lambda":2.0,"psi":1.5,"u":1.0,"c":1.0,"w_NI":1.0,"w_I":-1.0}}"#;
        assert_eq!(parse_config(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut doc = serde_json::to_value(RunConfig::default()).unwrap();
        doc["command"]["solve"]["extra"] = json!(1);
        let err = parse_config(&doc.to_string()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(parse_config(r#"{"numerics":{}}"#).is_err());
    }

    #[test]
    fn overrides_by_dotted_path() {
        let cfg = RunConfig::default();
        let c = apply_override(&cfg, "params.psi=2.5").unwrap();
        assert_eq!(c.params.psi, 2.5);
        let c = apply_override(&c, "command.simulate.horizon=30").unwrap();
        assert_eq!(c.command.simulate.horizon, Some(30.0));
        let c = apply_override(&c, "command.sweep_psi.psi_list=[1,2]").unwrap();
        assert_eq!(c.command.sweep_psi.psi_list, vec![1.0, 2.0]);
        assert!(apply_override(&cfg, "params.nope=1").is_err());
        assert!(apply_override(&cfg, "params.psi").is_err());
        assert!(apply_override(&cfg, "params.psi=abc").is_err());
        assert!(apply_override(&cfg, "params.psi.x=1").is_err());
    }

    #[test]
    fn flags_take_precedence_and_are_validated() {
        let c = resolve_config(None, &["numerics.seed=5".into()], Some(9), Some(801), Some(2e-3)).unwrap();
        assert_eq!(c.numerics.seed, 9);
        assert_eq!(c.numerics.grid_n, 801);
        assert_eq!(c.command.oracle_check.dt, 2e-3);
        let err = resolve_config(None, &["params.r1=-1".into()], None, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = resolve_config(Some(Path::new("/nonexistent/cfg.json")), &[], None, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_num(-2.0), "-2.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn outputs_carry_their_config() {
        let cfg = apply_override(&RunConfig::default(), "params.lambda=1.5").unwrap();
        let run = execute(Command::Solve, &cfg).unwrap();
        assert!(run.failure.is_none());
        for (name, text) in &run.files {
            assert_eq!(config_from_output(text).unwrap(), cfg, "{name}");
            assert!(!text.contains('\r'));
            assert!(text.ends_with('\n'));
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = RunConfig::default();
        for cmd in [Command::Solve, Command::SweepPsi, Command::Ep] {
            let a = execute(cmd, &cfg).unwrap().files;
            let b = execute(cmd, &cfg).unwrap().files;
            assert_eq!(a, b, "{}", cmd.name());
        }
    }

    #[test]
    fn numerical_errors_map_to_exit_two() {
        let e: CliError = Error::NonConvergence { what: "x", iterations: 3, residual: 1.0 }.into();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn run_reports_usage_errors() {
        assert_eq!(run(["repstop", "frob"]), 1);
        assert_eq!(run(["repstop", "--help"]), 0);
        assert_eq!(run(["repstop", "solve", "--set", "params.psi=0"]), 1);
    }

    #[test]
    fn run_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "repstop".into(),
            "sweep-psi".into(),
            "--out".into(),
            out.clone().into_os_string(),
            "--set".into(),
            "command.sweep_psi.psi_list=[1,2]".into(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(out.join("sweep_psi.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 1 + 2);
    }
}
