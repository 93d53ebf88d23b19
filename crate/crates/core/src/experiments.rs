//! Scenario files, sweeps and tabular output for the command-line runner.
//!
//! A scenario is a flat `key = value` file; `#` starts a comment. Missing
//! keys take the reference values. Every emitted table carries the resolved
//! configuration as `#` comment lines, so a result file can be re-run from
//! its own header.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::equilibrium::{
    mse_reward_published, pareto_grid_scan, pse_reward_published, satisfaction_region, solve_ese,
    solve_mse, solve_pse, RegionAxis,
};
use crate::error::{Error, Result};
use crate::learning::{run_coupled_with, LearnOptions, RateSchedule, Schedules, SourceRule};
use crate::model::{
    expected_relay_utility_mixed, expected_source_utility_mixed, ContactModel, EnergyModel,
    GameParams,
};
use crate::montecarlo::{estimate_delivery, estimate_relay_utility, ContactMode};
use crate::output::{escape_field, format_number};

/// Identifies the producing library in every output header.
pub const BUILD_ID: &str = concat!("dtnse-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    SolvePse,
    SolveMse,
    #[default]
    SolveEse,
    Region,
    Learn,
    Simulate,
    ParetoGrid,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::SolvePse,
        Mode::SolveMse,
        Mode::SolveEse,
        Mode::Region,
        Mode::Learn,
        Mode::Simulate,
        Mode::ParetoGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SolvePse => "solve-pse",
            Mode::SolveMse => "solve-mse",
            Mode::SolveEse => "solve-ese",
            Mode::Region => "region",
            Mode::Learn => "learn",
            Mode::Simulate => "simulate",
            Mode::ParetoGrid => "pareto-grid",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Tau,
    Lambda,
    N,
    Delta,
    P,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Tau => "tau",
            SweepVar::Lambda => "lambda",
            SweepVar::N => "n",
            SweepVar::Delta => "delta",
            SweepVar::P => "p",
        }
    }

    /// Grid used when `sweep.start` / `sweep.stop` are omitted.
    fn default_range(self) -> (f64, f64) {
        match self {
            SweepVar::Tau => (1.0, 500.0),
            SweepVar::Lambda => (0.005, 0.05),
            SweepVar::N => (1.0, 30.0),
            SweepVar::Delta => (0.02, 0.85),
            SweepVar::P => (0.0, 1.0),
        }
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            SweepVar::Tau,
            SweepVar::Lambda,
            SweepVar::N,
            SweepVar::Delta,
            SweepVar::P,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown sweep variable `{s}` (expected tau|lambda|n|delta|p)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub var: SweepVar,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    pub const DEFAULT_POINTS: usize = 50;

    /// Evenly spaced, both endpoints included.
    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i == self.points - 1 {
                    self.stop
                } else {
                    self.start + (self.stop - self.start) * i as f64 / last
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    /// `scale / (k + 1)`
    #[default]
    Harmonic,
    Constant,
}

/// Learning knobs exposed in scenario files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub horizon: u64,
    pub step_mode: StepMode,
    pub step_scale: f64,
    /// `L` for both actions.
    pub strategy_rate: f64,
    /// Exponent of `M_k = (1 + k)^-exponent` for both actions.
    pub estimate_exponent: f64,
    pub source_rule: SourceRule,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            horizon: 5000,
            step_mode: StepMode::Harmonic,
            step_scale: 1.0,
            strategy_rate: 0.1,
            estimate_exponent: 0.6,
            source_rule: SourceRule::Feedback,
        }
    }
}

impl LearnConfig {
    pub fn schedules(&self) -> Schedules {
        let m = RateSchedule::Power {
            scale: 1.0,
            exponent: self.estimate_exponent,
        };
        let l = RateSchedule::Constant(self.strategy_rate);
        Schedules {
            epsilon: match self.step_mode {
                StepMode::Harmonic => RateSchedule::Harmonic {
                    scale: self.step_scale,
                },
                StepMode::Constant => RateSchedule::Constant(self.step_scale),
            },
            m_accept: m,
            m_reject: m,
            l_accept: l,
            l_reject: l,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: GameParams,
    pub sweep: Option<Sweep>,
    pub mode: Mode,
    pub trials: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub contact_mode: ContactMode,
    /// Acceptance probability for region and simulate modes.
    pub p: Option<f64>,
    /// Reward for simulate mode.
    pub alpha: Option<f64>,
    /// Points per axis of the Pareto grid.
    pub grid_points: usize,
    pub learn: LearnConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            params: GameParams::reference(),
            sweep: None,
            mode: Mode::default(),
            trials: 100_000,
            seed: 0,
            output: None,
            contact_mode: ContactMode::ModelConsistent,
            p: None,
            alpha: None,
            grid_points: 101,
            learn: LearnConfig::default(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "lambda",
    "tau",
    "n",
    "delta",
    "sigma",
    "gamma",
    "e",
    "e_r",
    "e_t",
    "alpha_max",
    "sweep.var",
    "sweep.start",
    "sweep.stop",
    "sweep.points",
    "trials",
    "seed",
    "out",
    "contact_mode",
    "p",
    "alpha",
    "grid.points",
    "learn.horizon",
    "learn.step_mode",
    "learn.step_scale",
    "learn.strategy_rate",
    "learn.estimate_exponent",
    "learn.source_rule",
];

struct Entries {
    values: HashMap<String, (String, usize)>,
}

impl Entries {
    fn line_of(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(_, l)| *l)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse::<T>().map(Some).map_err(|e| Error::Config {
                line: *line,
                message: format!("`{key}`: invalid value `{raw}`: {e}"),
            }),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn fail(&self, key: &str, message: impl fmt::Display) -> Error {
        Error::Config {
            line: self.line_of(key),
            message: format!("`{key}`: {message}"),
        }
    }
}

fn tokenize(source: &str) -> Result<Entries> {
    let mut values = HashMap::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let Some((key, value)) = text.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected `key = value`, found `{text}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::Config {
                line,
                message: format!("`{key}`: missing value"),
            });
        }
        if let Some((_, first)) = values.insert(key.to_string(), (value.to_string(), line)) {
            return Err(Error::Config {
                line,
                message: format!("`{key}`: duplicate key (first set on line {first})"),
            });
        }
    }
    Ok(Entries { values })
}

/// Parse and validate a scenario file. Errors carry the offending line and
/// key; line 0 means the problem involves a default value.
pub fn parse_config(source: &str) -> Result<ScenarioConfig> {
    let entries = tokenize(source)?;
    let defaults = ScenarioConfig::default();
    let reference = defaults.params;

    let params = build_params(&entries, &reference)?;

    let sweep = match entries.get::<SweepVar>("sweep.var")? {
        None => {
            for key in ["sweep.start", "sweep.stop", "sweep.points"] {
                if entries.values.contains_key(key) {
                    return Err(entries.fail(key, "given without `sweep.var`"));
                }
            }
            None
        }
        Some(var) => {
            let (lo, hi) = var.default_range();
            let sweep = Sweep {
                var,
                start: entries.get_or("sweep.start", lo)?,
                stop: entries.get_or("sweep.stop", hi)?,
                points: entries.get_or("sweep.points", Sweep::DEFAULT_POINTS)?,
            };
            if sweep.points < 2 {
                return Err(entries.fail("sweep.points", "must be >= 2"));
            }
            if !(sweep.start.is_finite() && sweep.stop.is_finite() && sweep.start < sweep.stop) {
                return Err(entries.fail("sweep.stop", "sweep requires finite start < stop"));
            }
            if var == SweepVar::N {
                for v in sweep.values() {
                    if v < 1.0 || (v - v.round()).abs() > 1e-9 {
                        return Err(
                            entries.fail("sweep.points", "n sweep must land on integers >= 1")
                        );
                    }
                }
            }
            Some(sweep)
        }
    };

    let trials: u64 = entries.get_or("trials", defaults.trials)?;
    if trials == 0 {
        return Err(entries.fail("trials", "must be >= 1"));
    }
    let p: Option<f64> = entries.get("p")?;
    if let Some(p) = p {
        if !(0.0..=1.0).contains(&p) {
            return Err(entries.fail("p", format!("{p} not in [0, 1]")));
        }
    }
    let alpha: Option<f64> = entries.get("alpha")?;
    if let Some(a) = alpha {
        if !(a >= 0.0 && a <= params.alpha_max()) {
            return Err(entries.fail("alpha", format!("{a} not in [0, alpha_max]")));
        }
    }
    let grid_points: usize = entries.get_or("grid.points", defaults.grid_points)?;
    if grid_points < 2 {
        return Err(entries.fail("grid.points", "must be >= 2"));
    }

    let learn = build_learn(&entries)?;

    Ok(ScenarioConfig {
        params,
        sweep,
        mode: entries.get_or("mode", defaults.mode)?,
        trials,
        seed: entries.get_or("seed", defaults.seed)?,
        output: entries.get::<PathBuf>("out")?,
        contact_mode: entries.get_or("contact_mode", defaults.contact_mode)?,
        p,
        alpha,
        grid_points,
        learn,
    })
}

fn build_params(entries: &Entries, reference: &GameParams) -> Result<GameParams> {
    let energy = reference.energy();
    // range errors name the field; map them back to the key's line
    let located = |err: Error| match err {
        Error::OutOfRange {
            name,
            value,
            expected,
        } => entries.fail(name, format!("{value} out of range ({expected})")),
        other => other,
    };
    let contact = ContactModel::new(
        entries.get_or("lambda", reference.lambda())?,
        entries.get_or("tau", reference.tau())?,
    )
    .map_err(located)?;
    let energy = EnergyModel::new(
        entries.get_or("e", energy.e_store)?,
        entries.get_or("e_r", energy.e_receive)?,
        entries.get_or("e_t", energy.e_transmit)?,
    )
    .map_err(located)?;
    GameParams::new(
        contact,
        energy,
        entries.get_or("n", reference.n())?,
        entries.get_or("sigma", reference.sigma())?,
        entries.get_or("gamma", reference.gamma())?,
        entries.get_or("delta", reference.delta())?,
        entries.get_or("alpha_max", reference.alpha_max())?,
    )
    .map_err(located)
}

fn build_learn(entries: &Entries) -> Result<LearnConfig> {
    let d = LearnConfig::default();
    let step_mode = match entries.get::<String>("learn.step_mode")?.as_deref() {
        None => d.step_mode,
        Some("harmonic") => StepMode::Harmonic,
        Some("constant") => StepMode::Constant,
        Some(other) => {
            return Err(entries.fail(
                "learn.step_mode",
                format!("`{other}` (expected harmonic|constant)"),
            ))
        }
    };
    let source_rule = match entries.get::<String>("learn.source_rule")?.as_deref() {
        None => d.source_rule,
        Some("feedback") => SourceRule::Feedback,
        Some("verbatim") => SourceRule::Verbatim,
        Some(other) => {
            return Err(entries.fail(
                "learn.source_rule",
                format!("`{other}` (expected feedback|verbatim)"),
            ))
        }
    };
    let learn = LearnConfig {
        horizon: entries.get_or("learn.horizon", d.horizon)?,
        step_mode,
        step_scale: entries.get_or("learn.step_scale", d.step_scale)?,
        strategy_rate: entries.get_or("learn.strategy_rate", d.strategy_rate)?,
        estimate_exponent: entries.get_or("learn.estimate_exponent", d.estimate_exponent)?,
        source_rule,
    };
    if let Err(Error::InvalidSchedule(msg)) = learn.schedules().validate() {
        let key = if msg.starts_with("epsilon") {
            "learn.step_scale"
        } else if msg.starts_with("m_") {
            "learn.estimate_exponent"
        } else if msg.starts_with("l_") {
            "learn.strategy_rate"
        } else {
            "learn.horizon"
        };
        return Err(entries.fail(key, msg));
    }
    Ok(learn)
}

fn step_mode_name(m: StepMode) -> &'static str {
    match m {
        StepMode::Harmonic => "harmonic",
        StepMode::Constant => "constant",
    }
}

fn source_rule_name(r: SourceRule) -> &'static str {
    match r {
        SourceRule::Feedback => "feedback",
        SourceRule::Verbatim => "verbatim",
    }
}

impl ScenarioConfig {
    /// Resolved configuration as `(key, value)` pairs in a fixed order.
    /// Floats use the shortest exact representation, so the echo parses
    /// back to the same configuration. The output path is not echoed.
    pub fn echo(&self) -> Vec<(String, String)> {
        let p = &self.params;
        let en = p.energy();
        let mut out: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("lambda", p.lambda().to_string()),
            ("tau", p.tau().to_string()),
            ("n", p.n().to_string()),
            ("delta", p.delta().to_string()),
            ("sigma", p.sigma().to_string()),
            ("gamma", p.gamma().to_string()),
            ("e", en.e_store.to_string()),
            ("e_r", en.e_receive.to_string()),
            ("e_t", en.e_transmit.to_string()),
            ("alpha_max", p.alpha_max().to_string()),
        ];
        if let Some(s) = &self.sweep {
            out.push(("sweep.var", s.var.name().to_string()));
            out.push(("sweep.start", s.start.to_string()));
            out.push(("sweep.stop", s.stop.to_string()));
            out.push(("sweep.points", s.points.to_string()));
        }
        out.push(("trials", self.trials.to_string()));
        out.push(("seed", self.seed.to_string()));
        out.push(("contact_mode", self.contact_mode.to_string()));
        if let Some(v) = self.p {
            out.push(("p", v.to_string()));
        }
        if let Some(v) = self.alpha {
            out.push(("alpha", v.to_string()));
        }
        out.push(("grid.points", self.grid_points.to_string()));
        let l = &self.learn;
        out.push(("learn.horizon", l.horizon.to_string()));
        out.push(("learn.step_mode", step_mode_name(l.step_mode).to_string()));
        out.push(("learn.step_scale", l.step_scale.to_string()));
        out.push(("learn.strategy_rate", l.strategy_rate.to_string()));
        out.push(("learn.estimate_exponent", l.estimate_exponent.to_string()));
        out.push((
            "learn.source_rule",
            source_rule_name(l.source_rule).to_string(),
        ));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_config_string(&self) -> String {
        self.echo()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Emitted as `# key = value` lines ahead of the header.
    pub metadata: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            ..Self::default()
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        let header: Vec<String> = self.columns.iter().map(|c| escape_field(c)).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()
    }
}

/// Write `table` to `path`, replacing any existing file.
pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let io_err = |e: io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    table.write_csv(BufWriter::new(file)).map_err(io_err)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Parameters and acceptance probability at one sweep value.
fn apply_sweep(
    base: &GameParams,
    p: Option<f64>,
    var: SweepVar,
    value: f64,
) -> Result<(GameParams, Option<f64>)> {
    Ok(match var {
        SweepVar::Tau => (base.with_tau(value)?, p),
        SweepVar::Lambda => (base.with_lambda(value)?, p),
        SweepVar::N => (base.with_n(value.round() as u32)?, p),
        SweepVar::Delta => (base.with_delta(value)?, p),
        SweepVar::P => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange {
                    name: "p",
                    value,
                    expected: "in [0, 1]",
                });
            }
            (*base, Some(value))
        }
    })
}

/// Evaluate `point` at each sweep value (or once without a sweep) and
/// stack the rows in grid order, prefixing the swept value.
fn sweep_rows<F>(config: &ScenarioConfig, columns: &[&str], point: F) -> Result<ResultTable>
where
    F: Fn(&GameParams, Option<f64>) -> Result<Vec<Vec<f64>>> + Sync,
{
    let mut header: Vec<String> = Vec::new();
    if let Some(s) = &config.sweep {
        header.push(s.var.name().to_string());
    }
    header.extend(columns.iter().map(|c| c.to_string()));
    let mut table = ResultTable::new(header);
    match &config.sweep {
        None => {
            for row in point(&config.params, config.p)? {
                table.push_row(row);
            }
        }
        Some(s) => {
            let blocks: Vec<Vec<Vec<f64>>> = s
                .values()
                .into_par_iter()
                .map(|v| {
                    let (params, p) = apply_sweep(&config.params, config.p, s.var, v)?;
                    Ok(point(&params, p)?
                        .into_iter()
                        .map(|row| std::iter::once(v).chain(row).collect())
                        .collect())
                })
                .collect::<Result<_>>()?;
            for row in blocks.into_iter().flatten() {
                table.push_row(row);
            }
        }
    }
    Ok(table)
}

fn reject_sweep_var(config: &ScenarioConfig, vars: &[SweepVar]) -> Result<()> {
    match &config.sweep {
        Some(s) if vars.contains(&s.var) => Err(Error::ConfigValue {
            key: "sweep.var".into(),
            message: format!("`{}` cannot be swept in mode {}", s.var.name(), config.mode),
        }),
        _ => Ok(()),
    }
}

/// Run the configured mode.
///
/// Columns by mode (a sweep prepends the swept variable):
/// - `solve-pse`: n_a_min, n_active, alpha_star, alpha_published, clamped, selected_cohort, selected_reward
/// - `solve-mse`: p_min, z_star, feasible, alpha_star, alpha_published, clamped
/// - `solve-ese`: feasible, p_star, alpha_star, delivery, clamped
/// - `region`: delivery, satisfied (default sweep: tau over [1, 500], 500 points)
/// - `learn`: k, alpha, u_s_est, p_1..p_n, n_accept, delivered
/// - `simulate`: p, alpha, trials, delivery_mean, delivery_se, delivery_expected,
///   relay_utility_mean, relay_utility_se, relay_utility_expected
/// - `pareto-grid`: p, alpha, source_gain, relay_gain, dominates
pub fn run_scenario(config: &ScenarioConfig) -> Result<ResultTable> {
    let mode = config.mode;
    let mut table = dispatch(config).map_err(|e| Error::Scenario {
        mode: mode.name(),
        source: Box::new(e),
    })?;
    let mut metadata = vec![("build".to_string(), BUILD_ID.to_string())];
    metadata.extend(config.echo());
    metadata.append(&mut table.metadata);
    table.metadata = metadata;
    Ok(table)
}

fn dispatch(config: &ScenarioConfig) -> Result<ResultTable> {
    if config.trials == 0 {
        return Err(Error::ConfigValue {
            key: "trials".into(),
            message: "must be >= 1".into(),
        });
    }
    match config.mode {
        Mode::SolvePse => run_pse(config),
        Mode::SolveMse => run_mse(config),
        Mode::SolveEse => run_ese(config),
        Mode::Region => run_region(config),
        Mode::Learn => run_learn(config),
        Mode::Simulate => run_simulate(config),
        Mode::ParetoGrid => run_pareto(config),
    }
}

fn run_pse(config: &ScenarioConfig) -> Result<ResultTable> {
    reject_sweep_var(config, &[SweepVar::P])?;
    let cols = [
        "n_a_min",
        "n_active",
        "alpha_star",
        "alpha_published",
        "clamped",
        "selected_cohort",
        "selected_reward",
    ];
    sweep_rows(config, &cols, |params, _| {
        let sol = solve_pse(params)?;
        let (sc, sr) = sol
            .selected
            .map_or((f64::NAN, f64::NAN), |s| (s.cohort as f64, s.reward));
        sol.entries
            .iter()
            .map(|e| {
                Ok(vec![
                    sol.n_a_min as f64,
                    e.n_active as f64,
                    e.alpha_star,
                    pse_reward_published(params, e.n_active)?,
                    flag(e.clamped),
                    sc,
                    sr,
                ])
            })
            .collect()
    })
}

fn run_mse(config: &ScenarioConfig) -> Result<ResultTable> {
    reject_sweep_var(config, &[SweepVar::P])?;
    let cols = [
        "p_min",
        "z_star",
        "feasible",
        "alpha_star",
        "alpha_published",
        "clamped",
    ];
    sweep_rows(config, &cols, |params, _| {
        let sol = solve_mse(params)?;
        let published = if sol.feasible {
            mse_reward_published(params, sol.p_min)?
        } else {
            f64::NAN
        };
        Ok(vec![vec![
            sol.p_min,
            sol.z_star,
            flag(sol.feasible),
            sol.alpha_star.unwrap_or(f64::NAN),
            published,
            flag(sol.clamped),
        ]])
    })
}

fn run_ese(config: &ScenarioConfig) -> Result<ResultTable> {
    reject_sweep_var(config, &[SweepVar::P])?;
    let cols = ["feasible", "p_star", "alpha_star", "delivery", "clamped"];
    sweep_rows(config, &cols, |params, _| {
        let row = match solve_ese(params) {
            Ok(ese) => vec![
                1.0,
                ese.p_star,
                ese.alpha_star,
                ese.binding_delivery,
                flag(ese.clamped),
            ],
            Err(Error::Infeasible(_)) => {
                let p_min = solve_mse(params)?.p_min;
                vec![
                    0.0,
                    p_min,
                    f64::NAN,
                    expected_source_utility_mixed(1.0, params)?,
                    0.0,
                ]
            }
            Err(e) => return Err(e),
        };
        Ok(vec![row])
    })
}

fn run_region(config: &ScenarioConfig) -> Result<ResultTable> {
    let mut config = config.clone();
    let sweep = *config.sweep.get_or_insert(Sweep {
        var: SweepVar::Tau,
        start: 1.0,
        stop: 500.0,
        points: 500,
    });
    let mut table = sweep_rows(&config, &["delivery", "satisfied"], |params, p| {
        let delivery = expected_source_utility_mixed(p.unwrap_or(1.0), params)?;
        Ok(vec![vec![delivery, flag(delivery >= params.delta())]])
    })?;
    let axis = match sweep.var {
        SweepVar::Tau => Some(RegionAxis::Tau),
        SweepVar::Lambda => Some(RegionAxis::Lambda),
        _ => None,
    };
    if let Some(axis) = axis {
        let threshold = satisfaction_region(
            &config.params,
            axis,
            (sweep.start, sweep.stop),
            config.p.unwrap_or(1.0),
        )?;
        table.metadata.push((
            "threshold".into(),
            threshold.map_or("none".into(), format_number),
        ));
    }
    Ok(table)
}

fn run_learn(config: &ScenarioConfig) -> Result<ResultTable> {
    reject_sweep_var(config, &[SweepVar::N, SweepVar::P])?;
    let schedules = config.learn.schedules();
    let options = LearnOptions {
        contact_mode: config.contact_mode,
        source_rule: config.learn.source_rule,
        ..LearnOptions::default()
    };
    let n = config.params.n();
    let mut cols: Vec<String> = vec!["k".into(), "alpha".into(), "u_s_est".into()];
    cols.extend((1..=n).map(|i| format!("p_{i}")));
    cols.push("n_accept".into());
    cols.push("delivered".into());
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    sweep_rows(config, &cols, |params, _| {
        let traj = run_coupled_with(params, &schedules, config.seed, &options)?;
        Ok(traj
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.k as f64, r.alpha, r.u_s_est];
                row.extend(&r.accept_probs);
                row.push(r.n_accept as f64);
                row.push(flag(r.delivered));
                row
            })
            .collect())
    })
}

fn run_simulate(config: &ScenarioConfig) -> Result<ResultTable> {
    let cols = [
        "p",
        "alpha",
        "trials",
        "delivery_mean",
        "delivery_se",
        "delivery_expected",
        "relay_utility_mean",
        "relay_utility_se",
        "relay_utility_expected",
    ];
    sweep_rows(config, &cols, |params, p| {
        // unspecified operating points default to the efficient equilibrium
        let (p, alpha) = match (p, config.alpha) {
            (Some(p), Some(a)) => (p, a),
            (p, a) => {
                let ese = solve_ese(params)?;
                (
                    p.unwrap_or(ese.p_star),
                    a.unwrap_or(ese.alpha_star.clamp(0.0, params.alpha_max())),
                )
            }
        };
        let delivery =
            estimate_delivery(params, p, config.trials, config.seed, config.contact_mode)?;
        let utility = estimate_relay_utility(
            params,
            p,
            alpha,
            config.trials,
            config.seed,
            config.contact_mode,
        )?;
        Ok(vec![vec![
            p,
            alpha,
            config.trials as f64,
            delivery.mean,
            delivery.std_error,
            expected_source_utility_mixed(p, params)?,
            utility.mean,
            utility.std_error,
            expected_relay_utility_mixed(p, alpha, params)?,
        ]])
    })
}

fn run_pareto(config: &ScenarioConfig) -> Result<ResultTable> {
    if config.sweep.is_some() {
        return Err(Error::ConfigValue {
            key: "sweep.var".into(),
            message: "pareto-grid does not take a sweep".into(),
        });
    }
    let ese = solve_ese(&config.params)?;
    let grid = pareto_grid_scan(&ese, &config.params, config.grid_points)?;
    let mut table = ResultTable::new(
        ["p", "alpha", "source_gain", "relay_gain", "dominates"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut dominating = 0usize;
    for c in &grid {
        dominating += usize::from(c.dominance.dominates);
        table.push_row(vec![
            c.p,
            c.alpha,
            c.dominance.source_gain,
            c.dominance.relay_gain,
            flag(c.dominance.dominates),
        ]);
    }
    table
        .metadata
        .push(("ese.p_star".into(), format_number(ese.p_star)));
    table
        .metadata
        .push(("ese.alpha_star".into(), format_number(ese.alpha_star)));
    table
        .metadata
        .push(("dominating_points".into(), dominating.to_string()));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_reference() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.params, GameParams::reference());
        let cfg = parse_config("# just a comment\n\n   \n").unwrap();
        assert_eq!(cfg.params, GameParams::reference());
    }

    #[test]
    fn reads_values_and_comments() {
        let cfg = parse_config("n = 3\nlambda = 0.015 # rate\ntau=100\ndelta = 0.48\n").unwrap();
        assert_eq!(cfg.params.n(), 3);
        assert_eq!(cfg.params.delta(), 0.48);
        assert_eq!(cfg.params.lambda(), 0.015);
        assert_eq!(cfg.params.tau(), 100.0);
    }

    #[test]
    fn range_errors_name_key_and_line() {
        let err = parse_config("n = 3\ndelta = 1.5\n").unwrap_err();
        match &err {
            Error::Config { line, message } => {
                assert_eq!(*line, 2);
                assert!(message.contains("delta"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_config("\n\ne_r = -1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            parse_config("tau 100").unwrap_err(),
            Error::Config { line: 1, .. }
        ));
        let err = parse_config("tau = 100\nwibble = 2").unwrap_err();
        assert!(matches!(&err, Error::Config { line: 2, message } if message.contains("wibble")));
        let err = parse_config("tau = 1\ntau = 2").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = parse_config("n = 2.5").unwrap_err();
        assert!(matches!(&err, Error::Config { line: 1, message } if message.contains("`n`")));
        assert!(parse_config("tau =").is_err());
        assert!(parse_config("mode = fly").is_err());
        assert!(parse_config("contact_mode = teleport").is_err());
    }

    #[test]
    fn sweep_validation() {
        let cfg = parse_config("sweep.var = tau\nsweep.points = 5").unwrap();
        let s = cfg.sweep.unwrap();
        assert_eq!(s.values(), vec![1.0, 125.75, 250.5, 375.25, 500.0]);
        assert!(parse_config("sweep.var = sigma").is_err());
        assert!(parse_config("sweep.var = tau\nsweep.points = 1").is_err());
        assert!(parse_config("sweep.start = 3").is_err());
        assert!(parse_config("sweep.var = tau\nsweep.start = 9\nsweep.stop = 2").is_err());
        assert!(
            parse_config("sweep.var = n\nsweep.start = 1\nsweep.stop = 4\nsweep.points = 3")
                .is_err()
        );
        assert!(
            parse_config("sweep.var = n\nsweep.start = 1\nsweep.stop = 30\nsweep.points = 30")
                .is_ok()
        );
    }

    #[test]
    fn other_validation() {
        assert!(parse_config("trials = 0").is_err());
        assert!(parse_config("p = 1.2").is_err());
        assert!(parse_config("alpha = 6").is_err());
        assert!(parse_config("grid.points = 1").is_err());
        assert!(parse_config("learn.strategy_rate = 0").is_err());
        assert!(parse_config("learn.horizon = 0").is_err());
        assert!(parse_config("learn.step_mode = cosine").is_err());
        let cfg = parse_config(
            "learn.step_mode = constant\nlearn.step_scale = 0.05\nlearn.source_rule = verbatim",
        )
        .unwrap();
        assert_eq!(cfg.learn.schedules().epsilon, RateSchedule::Constant(0.05));
        assert_eq!(cfg.learn.source_rule, SourceRule::Verbatim);
    }

    #[test]
    fn echo_round_trips() {
        let text = "mode = simulate\nn = 4\nlambda = 0.0123456789\nsweep.var = p\nsweep.points = 7\n\
                    p = 0.3\nalpha = 1.25\nseed = 99\ncontact_mode = physical\nlearn.horizon = 77\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, again);
        let d = ScenarioConfig::default();
        assert_eq!(parse_config(&d.to_config_string()).unwrap(), d);
    }

    #[test]
    fn table_csv_layout() {
        let mut t = ResultTable::new(vec!["x".into(), "y".into()]);
        t.metadata.push(("seed".into(), "3".into()));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed = 3\nx,y\n");
        t.push_row(vec![0.5, 1.0 / 3.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# seed = 3\nx,y\n0.5,0.333333333333\n"
        );
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn ragged_rows_rejected() {
        let mut t = ResultTable::new(vec!["x".into()]);
        t.push_row(vec![1.0, 2.0]);
    }

    #[test]
    fn ese_sweep_over_delta() {
        let mut cfg = parse_config(
            "n = 3\nsweep.var = delta\nsweep.start = 0.02\nsweep.stop = 0.85\nsweep.points = 4",
        )
        .unwrap();
        cfg.mode = Mode::SolveEse;
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(t.columns[0], "delta");
        let p = t.column("p_star").unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(t.meta("build"), Some(BUILD_ID));
        assert_eq!(t.meta("n"), Some("3"));
    }

    #[test]
    fn pse_rows_per_cohort() {
        let cfg = ScenarioConfig {
            mode: Mode::SolvePse,
            ..ScenarioConfig::default()
        };
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.column("selected_cohort").unwrap()[0], 3.0);
    }

    #[test]
    fn region_threshold_metadata() {
        let cfg = ScenarioConfig {
            mode: Mode::Region,
            ..ScenarioConfig::default()
        };
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(t.rows.len(), 500);
        let thr: f64 = t.meta("threshold").unwrap().parse().unwrap();
        // first satisfied grid value sits within one grid step above the threshold
        let tau = t.column("tau").unwrap();
        let sat = t.column("satisfied").unwrap();
        let first = tau.iter().zip(&sat).find(|(_, s)| **s == 1.0).unwrap().0;
        assert!(*first >= thr - 1e-6 && first - thr <= 1.0);
    }

    #[test]
    fn sweep_rejections() {
        let cfg = parse_config("mode = solve-ese\nsweep.var = p").unwrap();
        assert!(matches!(
            run_scenario(&cfg),
            Err(Error::Scenario {
                mode: "solve-ese",
                ..
            })
        ));
        let cfg = parse_config(
            "mode = learn\nsweep.var = n\nsweep.start = 1\nsweep.stop = 2\nsweep.points = 2",
        )
        .unwrap();
        assert!(run_scenario(&cfg).is_err());
        let cfg = parse_config("mode = pareto-grid\nsweep.var = tau").unwrap();
        assert!(run_scenario(&cfg).is_err());
    }

    #[test]
    fn zero_trials_rejected_at_run() {
        let cfg = ScenarioConfig {
            mode: Mode::Simulate,
            trials: 0,
            ..ScenarioConfig::default()
        };
        assert!(run_scenario(&cfg).is_err());
    }

    #[test]
    fn simulate_defaults_to_ese() {
        let cfg = ScenarioConfig {
            mode: Mode::Simulate,
            trials: 2000,
            ..ScenarioConfig::default()
        };
        let t = run_scenario(&cfg).unwrap();
        let ese = solve_ese(&GameParams::reference()).unwrap();
        assert_eq!(t.column("p").unwrap()[0], ese.p_star);
        assert_eq!(
            t.column("delivery_expected").unwrap()[0],
            ese.binding_delivery
        );
    }

    #[test]
    fn learn_table_matches_trajectory() {
        let cfg = parse_config("mode = learn\nn = 2\nlearn.horizon = 10\nseed = 4").unwrap();
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(
            t.columns,
            [
                "k",
                "alpha",
                "u_s_est",
                "p_1",
                "p_2",
                "n_accept",
                "delivered"
            ]
        );
        assert_eq!(t.rows.len(), 10);
    }

    #[test]
    fn emit_reports_path() {
        let t = ResultTable::new(vec!["x".into()]);
        let err = emit_csv(&t, Path::new("/nonexistent-dir/out.csv")).unwrap_err();
        assert!(matches!(&err, Error::Io { path, .. } if path.contains("nonexistent-dir")));
    }
}
