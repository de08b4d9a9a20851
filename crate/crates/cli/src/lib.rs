//! Command implementations behind the `wcet` binary: CFG/DOT emission, WCET
//! computation with a JSON report, the stack analyser, and a deterministic
//! concrete simulation. All outputs are byte-stable for identical inputs;
//! only `wall_time_ms` in the WCET report varies.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use wcet_core::cfgbuild::{emit_dot, CfgError};
use wcet_core::config::{ConfigError, ToolConfig};
use wcet_core::explore::{
    concrete_trace, explore, ConcreteInput, ExploreError, ExploreOptions, WcetResult,
};
use wcet_core::graph::GraphError;
use wcet_core::hw::{run_trace, DurationChoice, HwError};
use wcet_core::isa::StepError;
use wcet_core::listing::{validate_assumptions, ParseError};
use wcet_core::pipeline::{analyze, Analysis, AnalyzeError};
use wcet_core::slice::{initial_state, SliceSimError};

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the listing or a configuration file does not parse.
    Parse(String),
    /// Exit 2: CFG reconstruction failed structurally.
    CfgResolution(String),
    /// Exit 3: file system trouble.
    Io(String),
    /// Exit 4: the state budget ran out.
    Budget(String),
    /// Exit 5: an analysis assumption (A1–A4) is violated.
    Assumption(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::CfgResolution(_) => 2,
            CliError::Io(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Assumption(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Parse(m)
            | CliError::CfgResolution(m)
            | CliError::Io(m)
            | CliError::Budget(m)
            | CliError::Assumption(m) => m,
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Parse(e.to_string())
    }
}

fn sim_error(e: SliceSimError) -> CliError {
    match e {
        SliceSimError::NonTerminatingSlice { .. }
        | SliceSimError::BotStackPointer(_)
        | SliceSimError::BotBranchTarget(_) => CliError::Assumption(e.to_string()),
        SliceSimError::Step(s) => CliError::Assumption(s.to_string()),
        SliceSimError::Graph(g) => CliError::CfgResolution(g.to_string()),
    }
}

impl From<AnalyzeError> for CliError {
    fn from(e: AnalyzeError) -> Self {
        match e {
            AnalyzeError::Parse(p) => p.into(),
            AnalyzeError::Cfg(c) => match c {
                CfgError::BotBranchTarget(_) => CliError::Assumption(c.to_string()),
                CfgError::Sim(s) => sim_error(s),
                CfgError::BadBranchTarget { .. } | CfgError::NoProgress => {
                    CliError::CfgResolution(c.to_string())
                }
                CfgError::Graph(g) => CliError::CfgResolution(g.to_string()),
            },
            AnalyzeError::Graph(g) => CliError::CfgResolution(g.to_string()),
        }
    }
}

impl From<ExploreError> for CliError {
    fn from(e: ExploreError) -> Self {
        match e {
            ExploreError::StateBudgetExceeded { .. } => CliError::Budget(e.to_string()),
            ExploreError::CycleDetected { .. }
            | ExploreError::BotBranchTarget(_)
            | ExploreError::InputDependent(_) => CliError::Assumption(e.to_string()),
            ExploreError::Step(StepError::UndefinedMemoryBase(_)) => {
                CliError::Assumption(e.to_string())
            }
            ExploreError::Step(s) => CliError::Assumption(s.to_string()),
            ExploreError::Hw(HwError::InvalidGeometry(_)) => CliError::Parse(e.to_string()),
            ExploreError::Hw(h) => CliError::CfgResolution(h.to_string()),
            ExploreError::Internal(_) => CliError::CfgResolution(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::CfgResolution(e.to_string())
    }
}

pub fn read_file(path: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))
}

pub fn write_file(path: &str, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| CliError::Io(format!("{path}: {e}")))
}

/// Load the tool configuration, defaulting when no file is given.
pub fn load_config(hw_path: Option<&str>) -> Result<ToolConfig, CliError> {
    match hw_path {
        None => Ok(ToolConfig::default()),
        Some(p) => {
            let text = read_file(p)?;
            let cfg = ToolConfig::parse(&text)?;
            cfg.hw.validate().map_err(|e| CliError::Parse(e.to_string()))?;
            Ok(cfg)
        }
    }
}

fn analyze_listing(text: &str, cfg: &ToolConfig) -> Result<Analysis, CliError> {
    Ok(analyze(text, cfg)?)
}

/// Outputs of `wcet cfg`.
pub struct CfgOutput {
    pub dot: String,
    /// `abs simulated/total` summary line.
    pub summary: String,
    pub warnings: Vec<String>,
}

pub fn cmd_cfg(listing: &str, cfg: &ToolConfig, mark_slice: bool) -> Result<CfgOutput, CliError> {
    let analysis = analyze_listing(listing, cfg)?;
    let warnings = validate_assumptions(&analysis.prog)
        .into_iter()
        .map(|w| w.to_string())
        .collect();
    let simulated = mark_slice.then_some(&analysis.ap.simulated);
    let dot = emit_dot(&analysis.built.cfg, &analysis.prog, simulated);
    let (num, den) = analysis.ap.abs_ratio();
    Ok(CfgOutput { dot, summary: format!("abs {num}/{den}"), warnings })
}

#[derive(Debug, Serialize)]
pub struct WitnessEntry {
    pub addr: u32,
    pub executed: bool,
    pub addrs: Vec<u32>,
    pub duration: u32,
}

#[derive(Debug, Serialize)]
pub struct WcetReport {
    pub wcet_lower: u64,
    pub wcet_upper: u64,
    pub witness: Vec<WitnessEntry>,
    pub states_explored: u64,
    pub configs_memoized: u64,
    pub abs_ratio: String,
    pub wall_time_ms: u64,
}

pub struct WcetOutput {
    pub report: WcetReport,
    pub result: WcetResult,
}

pub fn cmd_wcet(listing: &str, cfg: &ToolConfig, jobs: usize) -> Result<WcetOutput, CliError> {
    let started = Instant::now();
    let analysis = analyze_listing(listing, cfg)?;
    let init = initial_state(analysis.prog.entry, cfg.init_sp);
    let opts = ExploreOptions { jobs: jobs.max(1), state_budget: cfg.state_budget, ..Default::default() };
    let result = explore(&analysis.ap, &analysis.built.cfg, &cfg.hw, &init, &opts)?;
    let (num, den) = analysis.ap.abs_ratio();
    let report = WcetReport {
        wcet_lower: result.wcet_lower,
        wcet_upper: result.wcet_upper,
        witness: result
            .witness
            .iter()
            .map(|w| WitnessEntry {
                addr: w.addr,
                executed: w.executed,
                addrs: w.addrs.clone(),
                duration: w.duration,
            })
            .collect(),
        states_explored: result.states_explored,
        configs_memoized: result.configs_memoized,
        abs_ratio: format!("{num}/{den}"),
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    Ok(WcetOutput { report, result })
}

/// `--check K`: is a final configuration with elapsed ≥ K reachable?
pub fn cmd_check(listing: &str, cfg: &ToolConfig, jobs: usize, k: u64) -> Result<bool, CliError> {
    let out = cmd_wcet(listing, cfg, jobs)?;
    Ok(out.result.wcet_upper >= k)
}

#[derive(Debug, Serialize)]
pub struct StackNodeReport {
    pub addr: u32,
    pub sp: Vec<u32>,
}

#[derive(Debug, Serialize)]
pub struct StackReport {
    /// Bytes between the initial sp and the deepest referenced stack cell.
    pub max_depth: u32,
    pub init_sp: u32,
    pub nodes: Vec<StackNodeReport>,
}

pub fn cmd_stack(listing: &str, cfg: &ToolConfig) -> Result<StackReport, CliError> {
    let analysis = analyze_listing(listing, cfg)?;
    let mut deepest: Option<u32> = None;
    for (&node, sps) in &analysis.sp().values {
        if let Some(instr) = analysis.prog.instr(node) {
            if wcet_core::isa::is_stack_ref(instr) {
                for &sp in sps {
                    if let Some(addrs) = wcet_core::slice::effective_addrs(instr, sp) {
                        for a in addrs {
                            deepest = Some(deepest.map_or(a, |d| d.min(a)));
                        }
                    }
                }
            }
        }
    }
    let max_depth = deepest.map_or(0, |d| cfg.init_sp.saturating_sub(d));
    let nodes = analysis
        .sp()
        .values
        .iter()
        .map(|(addr, sps)| StackNodeReport { addr: *addr, sp: sps.iter().copied().collect() })
        .collect();
    Ok(StackReport { max_depth, init_sp: cfg.init_sp, nodes })
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub instructions: usize,
    pub cycles_min_durations: u64,
    pub cycles_max_durations: u64,
}

/// Deterministically execute the program from the default initial state and
/// time the resulting trace under both duration policies.
pub fn cmd_simulate(listing: &str, cfg: &ToolConfig) -> Result<SimulateReport, CliError> {
    let analysis = analyze_listing(listing, cfg)?;
    let init = initial_state(analysis.prog.entry, cfg.init_sp);
    let trace = concrete_trace(&analysis.prog, &init, &ConcreteInput::default(), cfg.sim_step_budget)?;
    let lo = run_trace(&cfg.hw, &trace, DurationChoice::Min)
        .map_err(|e| CliError::CfgResolution(e.to_string()))?;
    let hi = run_trace(&cfg.hw, &trace, DurationChoice::Max)
        .map_err(|e| CliError::CfgResolution(e.to_string()))?;
    Ok(SimulateReport {
        instructions: trace.len(),
        cycles_min_durations: lo,
        cycles_max_durations: hi,
    })
}

/// Stable JSON encoding: struct field order, two-space indentation.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report serialization");
    out.push('\n');
    out
}

/// The set of fixture addresses a report mentions, for quick assertions.
pub fn witness_addrs(report: &WcetReport) -> BTreeSet<u32> {
    report.witness.iter().map(|w| w.addr).collect()
}
