//! Exhaustive longest-path exploration of the sliced program composed with
//! the hardware model.
//!
//! A configuration is (sliced program state, pending trace element, hardware
//! state). Branch points are ⊥-condition forks when a trace element is
//! emitted and E-stage duration forks for data-dependent instructions. The
//! search memoizes the maximal remaining cycle count per configuration, so
//! shared suffixes are explored once; a configuration repeating on one path
//! means the program cannot terminate on its own.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;
use thiserror::Error;

use crate::graph::{Cfg, Node, END};
use crate::hw::{self, HwConfig, HwError, HwInstr, HwState, TickOutcome};
use crate::isa::{
    self, eval_cond, exec_body, trace_triple, PcEffect, StepError, SymState, TraceTriple, Trit,
    Value, Var,
};
use crate::listing::{Body, Cond, MemOffset, MultiMode, Program, Reg, PC};
use crate::slice::AbstractProgram;

#[derive(Debug, Error)]
pub enum ExploreError {
    /// A configuration repeated on the current search path (violates A1).
    #[error("configuration repeats at pc {pc}: the program cannot terminate")]
    CycleDetected { pc: u32 },
    #[error("state budget of {budget} configurations exceeded")]
    StateBudgetExceeded { budget: u64 },
    /// A simulated branch target evaluated to ⊥.
    #[error("node {0}: branch target depends on input data")]
    BotBranchTarget(Node),
    /// The fixed input data does not determine the path (concrete runs only).
    #[error("node {0}: condition undetermined under the given input")]
    InputDependent(Node),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("internal invariant broken: {0}")]
    Internal(&'static str),
}

/// Program-side state of the product: the canonicalized symbolic state plus a
/// flag set once the final trace element has been emitted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ProgPoint {
    state: SymState,
    done: bool,
}

/// One node of the search space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    prog: ProgPoint,
    pending: VecDeque<HwInstr>,
    hw: HwState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessStep {
    pub addr: u32,
    pub executed: bool,
    pub addrs: Vec<u32>,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WcetResult {
    /// Maximal completion time with every data-dependent duration at its
    /// minimum.
    pub wcet_lower: u64,
    /// Maximal completion time over the full nondeterministic duration range.
    pub wcet_upper: u64,
    pub witness: Vec<WitnessStep>,
    pub states_explored: u64,
    pub configs_memoized: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationMode {
    /// Fork over the whole [min,max] range.
    Range,
    /// Pin every duration to its minimum.
    Min,
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    pub memoize: bool,
    pub jobs: usize,
    pub state_budget: u64,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { memoize: true, jobs: 1, state_budget: 50_000_000 }
    }
}

/// The α(P) stepper: simulated instructions run with full semantics on the
/// tracked variables, everything else follows its unique CFG edge.
struct Alpha<'a> {
    ap: &'a AbstractProgram,
    cfg: &'a Cfg,
    tracked_regs: u16,
    tracked_flags: [bool; 4],
    tracked_cells: BTreeSet<u32>,
}

impl<'a> Alpha<'a> {
    fn new(ap: &'a AbstractProgram, cfg: &'a Cfg) -> Alpha<'a> {
        let mut tracked_regs: u16 = 1 << PC.0;
        let mut tracked_flags = [false; 4];
        let mut tracked_cells = BTreeSet::new();
        for v in &ap.tracked_vars {
            match v {
                Var::Reg(r) => tracked_regs |= 1 << r.0,
                Var::Flag(f) => tracked_flags[*f as usize] = true,
                Var::StackCell(k) => {
                    tracked_cells.insert(*k);
                }
                Var::Stack => {}
            }
        }
        Alpha { ap, cfg, tracked_regs, tracked_flags, tracked_cells }
    }

    /// Forget everything outside the tracked variables.
    fn canonicalize(&self, s: &mut SymState) {
        for r in 0..16u8 {
            if self.tracked_regs & (1 << r) == 0 {
                s.regs[r as usize] = Value::Bot;
            }
        }
        for (i, keep) in self.tracked_flags.iter().enumerate() {
            if !keep {
                s.flags[i] = Trit::Bot;
            }
        }
        s.stack.retain(|k, _| self.tracked_cells.contains(k));
    }

    /// Base-register value implied by statically resolved addresses, for
    /// executing a stack access whose sp is not tracked.
    fn implied_base(&self, body: &Body, addrs: &[u32]) -> Option<u32> {
        match body {
            Body::Ldr { offset: MemOffset::Imm(o), .. }
            | Body::Str { offset: MemOffset::Imm(o), .. } => {
                Some(addrs.first()?.wrapping_sub(*o as u32))
            }
            Body::Multi { mode, .. } => {
                let first = *addrs.first()?;
                let last = *addrs.last()?;
                Some(match mode {
                    MultiMode::Ia => first,
                    MultiMode::Db => last.wrapping_add(4),
                    MultiMode::Da => last,
                })
            }
            _ => None,
        }
    }

    /// Emit the trace element(s) at the current program point, advancing it.
    /// Forks (two results) when a simulated condition is ⊥.
    fn emit(&self, p: &ProgPoint) -> Result<Vec<(ProgPoint, HwInstr)>, ExploreError> {
        debug_assert!(!p.done);
        let node = match p.state.pc() {
            Value::Known(n) => n,
            Value::Bot => return Err(ExploreError::Internal("program point lost its pc")),
        };
        let instr = self
            .ap
            .base
            .instr(node)
            .ok_or(ExploreError::Internal("pc outside the program"))?;

        if !self.ap.is_simulated(node) {
            debug_assert_eq!(instr.cond, Cond::Al, "conditional instructions are simulated");
            let succs = self.cfg.succ_nodes(node);
            if succs.len() != 1 {
                return Err(ExploreError::Internal("nop node without a unique successor"));
            }
            let next = succs[0];
            let addrs: Vec<u32> = if isa::is_memory(instr) {
                self.ap
                    .static_addrs
                    .get(&node)
                    .cloned()
                    .ok_or(ExploreError::Internal("unresolved addresses on a nop node"))?
            } else {
                Vec::new()
            };
            let mut state = p.state.clone();
            let done = next == END;
            state.set_pc(Value::Known(next));
            let hwi = HwInstr {
                addr: node,
                executed: true,
                is_last: done,
                addrs,
                timing: hw::InstrTiming::of(instr),
            };
            return Ok(vec![(ProgPoint { state, done }, hwi)]);
        }

        let cond = eval_cond(&p.state.flags, instr.cond);
        let branches: &[bool] = match cond {
            Trit::True => &[true],
            Trit::False => &[false],
            Trit::Bot => &[true, false],
        };
        let fall = node.wrapping_add(4);
        let mut out = Vec::new();
        for &executed in branches {
            let mut state = p.state.clone();
            let mut addrs: Vec<u32> = Vec::new();
            let mut done = false;
            if executed {
                if isa::is_memory(instr) && state.reg(base_reg(instr).unwrap_or(PC)).is_bot() {
                    if let (Some(st), Some(base)) = (
                        self.ap.static_addrs.get(&node),
                        base_reg(instr),
                    ) {
                        if let Some(v) = self.implied_base(&instr.body, st) {
                            state.set_reg(base, Value::Known(v));
                        }
                    }
                }
                let eff = exec_body(&mut state, instr)?;
                addrs = eff.addrs.iter().copied().collect();
                match eff.pc {
                    PcEffect::Sequential => state.set_pc(Value::Known(fall)),
                    PcEffect::Jump(t) => {
                        if t == END || self.cfg.has_edge(node, t) || self.ap.base.instr(t).is_some()
                        {
                            state.set_pc(Value::Known(t));
                        } else {
                            return Err(ExploreError::Internal("jump to unknown target"));
                        }
                    }
                    PcEffect::Indirect(v) => match v {
                        Value::Known(t) if t == crate::cfgbuild::BETA => {
                            done = true;
                            state.set_pc(Value::Known(END));
                        }
                        Value::Known(t) if self.ap.base.instr(t).is_some() => {
                            state.set_pc(Value::Known(t))
                        }
                        Value::Known(_) | Value::Bot => {
                            return Err(ExploreError::BotBranchTarget(node))
                        }
                    },
                }
            } else {
                state.set_pc(Value::Known(fall));
            }
            if !done {
                if let Value::Known(next) = state.pc() {
                    if next == END || self.ap.base.instr(next).is_none() {
                        done = true;
                        state.set_pc(Value::Known(END));
                    }
                }
            }
            self.canonicalize(&mut state);
            let hwi = HwInstr {
                addr: node,
                executed,
                is_last: done,
                addrs,
                timing: hw::InstrTiming::of(instr),
            };
            out.push((ProgPoint { state, done }, hwi));
        }
        Ok(out)
    }
}

fn base_reg(i: &crate::listing::LabeledInstruction) -> Option<Reg> {
    match &i.body {
        Body::Ldr { base, .. } | Body::Str { base, .. } => Some(*base),
        Body::Multi { base, .. } => Some(*base),
        _ => None,
    }
}

struct Search<'a> {
    alpha: Alpha<'a>,
    hwcfg: &'a HwConfig,
    mode: DurationMode,
    memoize: bool,
    jobs: usize,
    budget: u64,
    memo: DashMap<Configuration, u64>,
    explored: AtomicU64,
}

impl<'a> Search<'a> {
    /// All configurations one cycle after `c`, each with its tick events.
    fn expand(&self, c: &Configuration) -> Result<Vec<(Configuration, TickOutcome)>, ExploreError> {
        let attempt = |choice: Option<u32>| -> Result<Result<(Configuration, TickOutcome), (u32, u32)>, ExploreError> {
            let mut child = c.clone();
            let mut used = false;
            let mut pick = |_a: u32, min: u32, _max: u32| -> Option<u32> {
                used = true;
                match self.mode {
                    DurationMode::Min => Some(min),
                    DurationMode::Range => choice,
                }
            };
            match child.hw.tick(self.hwcfg, &mut child.pending, &mut pick) {
                Ok(out) => Ok(Ok((child, out))),
                Err(HwError::NeedDuration { min, max, .. }) => Ok(Err((min, max))),
                Err(e) => Err(ExploreError::Hw(e)),
            }
        };

        let ticked: Vec<(Configuration, TickOutcome)> = match attempt(None)? {
            Ok(one) => vec![one],
            Err((min, max)) => {
                let mut v = Vec::with_capacity((max - min + 1) as usize);
                for d in min..=max {
                    match attempt(Some(d))? {
                        Ok(one) => v.push(one),
                        Err(_) => return Err(ExploreError::Internal("duration re-requested")),
                    }
                }
                v
            }
        };

        // Refill the pending queue after a consume; emitting the next trace
        // element is where ⊥ conditions fork.
        let mut out = Vec::new();
        for (child, events) in ticked {
            if events.consumed.is_some() && !child.prog.done && child.pending.is_empty() {
                for (point, hwi) in self.alpha.emit(&child.prog)? {
                    let mut forked = child.clone();
                    forked.prog = point;
                    forked.pending.push_back(hwi);
                    out.push((forked, events.clone()));
                }
            } else {
                out.push((child, events));
            }
        }
        Ok(out)
    }

    /// Longest remaining cycle count from `c`, memoized.
    fn search(&self, c: Configuration, path: &mut HashSet<Configuration>) -> Result<u64, ExploreError> {
        let mut chain: Vec<Configuration> = Vec::new();
        let mut cur = c;
        let base: u64;
        loop {
            if cur.hw.completed {
                base = 0;
                break;
            }
            if self.memoize {
                if let Some(v) = self.memo.get(&cur) {
                    base = *v;
                    break;
                }
            }
            if !path.insert(cur.clone()) {
                let pc = cur.prog.state.pc().known().unwrap_or(END);
                return Err(ExploreError::CycleDetected { pc });
            }
            let n = self.explored.fetch_add(1, Ordering::Relaxed) + 1;
            if n > self.budget {
                return Err(ExploreError::StateBudgetExceeded { budget: self.budget });
            }
            let mut children = self.expand(&cur)?;
            if children.is_empty() {
                return Err(ExploreError::Internal("live configuration with no successor"));
            }
            if children.len() == 1 {
                let (next, _) = children.pop().unwrap();
                chain.push(cur);
                cur = next;
                continue;
            }
            let best = if self.jobs > 1 {
                use rayon::prelude::*;
                children
                    .into_par_iter()
                    .map(|(ch, _)| self.search(ch, &mut path.clone()))
                    .try_reduce(|| 0, |a, b| Ok(a.max(b)))?
            } else {
                let mut best = 0u64;
                for (ch, _) in children {
                    best = best.max(self.search(ch, path)?);
                }
                best
            };
            let v = 1 + best;
            if self.memoize {
                self.memo.insert(cur.clone(), v);
            }
            path.remove(&cur);
            base = v;
            break;
        }
        let mut v = base;
        for cfg in chain.into_iter().rev() {
            v += 1;
            if self.memoize {
                self.memo.insert(cfg.clone(), v);
            }
            path.remove(&cfg);
        }
        Ok(v)
    }

    fn value_of(&self, c: &Configuration) -> Option<u64> {
        if c.hw.completed {
            return Some(0);
        }
        self.memo.get(c).map(|v| *v)
    }

    /// Rebuild the optimal trace by walking argmax children through the memo.
    fn witness_walk(&self, root: Configuration) -> Result<Vec<WitnessStep>, ExploreError> {
        let mut steps: Vec<WitnessStep> = Vec::new();
        if let Some(first) = root.pending.front() {
            steps.push(WitnessStep {
                addr: first.addr,
                executed: first.executed,
                addrs: first.addrs.clone(),
                duration: 0,
            });
        }
        let mut dur_cursor = 0usize;
        let mut cur = root;
        while !cur.hw.completed {
            let children = self.expand(&cur)?;
            let mut best: Option<(u64, Configuration, TickOutcome)> = None;
            for (ch, ev) in children {
                let v = self
                    .value_of(&ch)
                    .ok_or(ExploreError::Internal("witness walk left the explored region"))?;
                if best.as_ref().map(|(bv, _, _)| v > *bv).unwrap_or(true) {
                    best = Some((v, ch, ev));
                }
            }
            let (_, next, events) = best.ok_or(ExploreError::Internal("no witness successor"))?;
            if let Some(hwi) = &events.consumed {
                // The consumed element is already recorded; record what the
                // refill put into pending instead.
                let _ = hwi;
                if let Some(p) = next.pending.front() {
                    steps.push(WitnessStep {
                        addr: p.addr,
                        executed: p.executed,
                        addrs: p.addrs.clone(),
                        duration: 0,
                    });
                }
            }
            if let Some((addr, dur)) = events.entered_e {
                while dur_cursor < steps.len() && steps[dur_cursor].addr != addr {
                    dur_cursor += 1;
                }
                if dur_cursor < steps.len() {
                    steps[dur_cursor].duration = dur;
                    dur_cursor += 1;
                }
            }
            cur = next;
        }
        Ok(steps)
    }
}

fn build_roots(
    alpha: &Alpha<'_>,
    hwcfg: &HwConfig,
    init: &SymState,
) -> Result<Vec<Configuration>, ExploreError> {
    let mut init = init.clone();
    alpha.canonicalize(&mut init);
    let hw = HwState::new(hwcfg)?;
    let mut roots = Vec::new();
    for (point, hwi) in alpha.emit(&ProgPoint { state: init, done: false })? {
        roots.push(Configuration { prog: point, pending: VecDeque::from([hwi]), hw: hw.clone() });
    }
    Ok(roots)
}

/// Explore the full configuration space of α(P) on the hardware and return
/// the WCET interval with a witness for the upper bound.
pub fn explore(
    ap: &AbstractProgram,
    g: &Cfg,
    hwcfg: &HwConfig,
    init: &SymState,
    opts: &ExploreOptions,
) -> Result<WcetResult, ExploreError> {
    hwcfg.validate().map_err(ExploreError::Hw)?;

    let pass = |mode: DurationMode| -> Result<(u64, u64, u64, Vec<WitnessStep>), ExploreError> {
        let alpha = Alpha::new(ap, g);
        let search = Search {
            alpha,
            hwcfg,
            mode,
            memoize: opts.memoize,
            jobs: opts.jobs,
            budget: opts.state_budget,
            memo: DashMap::new(),
            explored: AtomicU64::new(0),
        };
        let roots = build_roots(&search.alpha, hwcfg, init)?;
        let run_roots = |search: &Search<'_>| -> Result<(u64, Option<Configuration>), ExploreError> {
            let mut best: u64 = 0;
            let mut best_root = None;
            for root in &roots {
                let v = search.search(root.clone(), &mut HashSet::new())?;
                if best_root.is_none() || v > best {
                    best = v;
                    best_root = Some(root.clone());
                }
            }
            Ok((best, best_root))
        };
        let (value, best_root) = if opts.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs)
                .build()
                .map_err(|_| ExploreError::Internal("thread pool"))?;
            pool.install(|| run_roots(&search))?
        } else {
            run_roots(&search)?
        };
        let witness = match (mode, best_root) {
            (DurationMode::Range, Some(root)) if opts.memoize => search.witness_walk(root)?,
            _ => Vec::new(),
        };
        Ok((
            value,
            search.explored.load(Ordering::Relaxed),
            search.memo.len() as u64,
            witness,
        ))
    };

    let (upper, states, memoized, witness) = pass(DurationMode::Range)?;
    let (lower, _, _, _) = pass(DurationMode::Min)?;
    Ok(WcetResult {
        wcet_lower: lower,
        wcet_upper: upper,
        witness,
        states_explored: states,
        configs_memoized: memoized,
    })
}

/// The reachability query (R): can a final configuration have elapsed ≥ K?
pub fn check_reachability(
    ap: &AbstractProgram,
    g: &Cfg,
    hwcfg: &HwConfig,
    init: &SymState,
    opts: &ExploreOptions,
    k: u64,
) -> Result<bool, ExploreError> {
    Ok(explore(ap, g, hwcfg, init, opts)?.wcet_upper >= k)
}

/// A concrete input assignment: register values plus initialized stack cells.
#[derive(Debug, Clone, Default)]
pub struct ConcreteInput {
    pub regs: Vec<(Reg, u32)>,
    pub stack: Vec<(u32, u32)>,
}

/// Run the full (unsliced) program on one concrete input and return its
/// trace. The input must determine every condition and address.
pub fn concrete_trace(
    prog: &Program,
    init: &SymState,
    input: &ConcreteInput,
    max_steps: u64,
) -> Result<Vec<TraceTriple>, ExploreError> {
    let mut s = init.clone();
    for (r, v) in &input.regs {
        s.set_reg(*r, Value::Known(*v));
    }
    for (a, v) in &input.stack {
        s.stack_write(*a, Value::Known(*v));
    }
    let mut trace = Vec::new();
    let mut steps = 0u64;
    loop {
        let pc = match s.pc() {
            Value::Known(p) => p,
            Value::Bot => return Err(ExploreError::Internal("concrete run lost its pc")),
        };
        if pc == crate::cfgbuild::BETA {
            break;
        }
        let Some(instr) = prog.instr(pc) else {
            return Err(ExploreError::Internal("concrete run left the program"));
        };
        let triple = match trace_triple(&s, instr) {
            Ok(t) => t,
            Err(StepError::UnresolvedCondition(a)) => return Err(ExploreError::InputDependent(a)),
            Err(e) => return Err(ExploreError::Step(e)),
        };
        trace.push(triple);
        let succ = isa::step(&s, instr)?;
        if succ.len() != 1 {
            return Err(ExploreError::InputDependent(pc));
        }
        s = succ.into_iter().next().unwrap();
        steps += 1;
        if steps > max_steps {
            return Err(ExploreError::Internal("concrete run exceeded the step budget"));
        }
    }
    Ok(trace)
}

/// Independent lower-bound oracle: the worst observed time over a finite set
/// of concrete inputs, each replayed deterministically with maximal
/// durations. By over-approximation this never exceeds `explore`'s upper
/// bound on the same hardware.
pub fn brute_force_wcet(
    prog: &Program,
    hwcfg: &HwConfig,
    init: &SymState,
    inputs: &[ConcreteInput],
    max_steps: u64,
) -> Result<u64, ExploreError> {
    let mut worst = 0u64;
    for input in inputs {
        let trace = concrete_trace(prog, init, input, max_steps)?;
        let t = hw::run_trace(hwcfg, &trace, hw::DurationChoice::Max)?;
        worst = worst.max(t);
    }
    Ok(worst)
}

/// Every trace α(P) can emit, by exhaustive resolution of ⊥ conditions.
///
/// Intended for small fixtures: errors out beyond `max_traces` complete
/// traces or `max_len` elements per trace.
pub fn enumerate_alpha_traces(
    ap: &AbstractProgram,
    g: &Cfg,
    init: &SymState,
    max_traces: usize,
    max_len: usize,
) -> Result<Vec<Vec<TraceTriple>>, ExploreError> {
    let alpha = Alpha::new(ap, g);
    let mut init = init.clone();
    alpha.canonicalize(&mut init);
    let mut done: Vec<Vec<TraceTriple>> = Vec::new();
    let mut stack: Vec<(ProgPoint, Vec<TraceTriple>)> =
        vec![(ProgPoint { state: init, done: false }, Vec::new())];
    while let Some((point, trace)) = stack.pop() {
        if point.done {
            done.push(trace);
            if done.len() > max_traces {
                return Err(ExploreError::Internal("trace enumeration exceeded its bound"));
            }
            continue;
        }
        if trace.len() > max_len {
            return Err(ExploreError::Internal("trace enumeration exceeded max length"));
        }
        for (next, hwi) in alpha.emit(&point)? {
            let instr = ap
                .base
                .instr(hwi.addr)
                .ok_or(ExploreError::Internal("emitted address unknown"))?;
            let mut t = trace.clone();
            t.push(TraceTriple {
                instr: instr.clone(),
                addrs: hwi.addrs.iter().copied().collect(),
                executed: hwi.executed,
            });
            stack.push((next, t));
        }
    }
    Ok(done)
}

/// Every trace the full program emits from `init` under the extended
/// semantics, enumerated directly over the instruction semantics (no CFG, no
/// slicing) — the independent side of the trace-preservation check.
pub fn enumerate_full_traces(
    prog: &Program,
    init: &SymState,
    max_traces: usize,
    max_len: usize,
) -> Result<Vec<Vec<TraceTriple>>, ExploreError> {
    let mut done = Vec::new();
    let mut stack: Vec<(SymState, Vec<TraceTriple>)> = vec![(init.clone(), Vec::new())];
    while let Some((s, trace)) = stack.pop() {
        let pc = match s.pc() {
            Value::Known(p) => p,
            Value::Bot => return Err(ExploreError::Internal("run lost its pc")),
        };
        if pc == crate::cfgbuild::BETA || prog.instr(pc).is_none() {
            done.push(trace);
            if done.len() > max_traces {
                return Err(ExploreError::Internal("trace enumeration exceeded its bound"));
            }
            continue;
        }
        if trace.len() > max_len {
            return Err(ExploreError::Internal("trace enumeration exceeded max length"));
        }
        let instr = prog.instr(pc).unwrap();
        let succs = isa::step(&s, instr)?;
        if succs.len() == 1 {
            let mut t = trace;
            t.push(trace_triple(&s, instr)?);
            stack.push((succs.into_iter().next().unwrap(), t));
        } else {
            // ⊥ condition: step returns the taken successor first.
            for (i, next) in succs.into_iter().enumerate() {
                let executed = i == 0;
                let mut t = trace.clone();
                t.push(isa::trace_triple_resolved(&s, instr, executed)?);
                stack.push((next, t));
            }
        }
    }
    Ok(done)
}

/// Deterministically replay an explorer witness; reproduces `wcet_upper`.
pub fn replay_witness(
    prog: &Program,
    hwcfg: &HwConfig,
    witness: &[WitnessStep],
) -> Result<u64, ExploreError> {
    let mut trace = Vec::with_capacity(witness.len());
    let mut durations = Vec::new();
    for step in witness {
        let instr = prog
            .instr(step.addr)
            .ok_or(ExploreError::Internal("witness references unknown address"))?;
        let timing = hw::InstrTiming::of(instr);
        if step.executed && timing.dur != hw::DurClass::Unit {
            durations.push(step.duration);
        }
        trace.push(TraceTriple {
            instr: instr.clone(),
            addrs: step.addrs.iter().copied().collect(),
            executed: step.executed,
        });
    }
    Ok(hw::run_trace_scripted(hwcfg, &trace, &durations)?)
}
