//! Program slicing and the WCET-equivalent abstraction.
//!
//! Slices are Weiser-style closures over data dependence (reaching
//! definitions) and control dependence (post-dominance frontiers). Step 1
//! computes the possible stack-pointer values per stack-referencing
//! instruction by simulating an sp slice; those values refine the coarse
//! `stack` variable into concrete cells. Step 2 builds the slice that keeps
//! exactly the instructions whose semantics the trace language needs: address
//! producers for memory transactions and the condition web of every
//! conditional instruction. Everything else becomes a nop with unchanged
//! syntax.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::cfgbuild::BETA;
use crate::graph::{control_dependence, reaching_defs, Cfg, GraphError, Node, END};
use crate::isa::{
    self, cond_flags, eval_cond, exec_body, ref_def, PcEffect, RefDef, StepError, SymState, Trit,
    Value, Var,
};
use crate::listing::{Body, Cond, LabeledInstruction, MemOffset, Program, PC, SP};

/// Per-node REF/DEF attributes plus statically resolved effective addresses.
#[derive(Debug, Clone, Default)]
pub struct Attrs {
    pub map: BTreeMap<Node, RefDef>,
    /// Memory nodes whose referenced addresses are compile-time constants
    /// (singleton sp value, or pc-relative with an immediate offset).
    pub static_addrs: BTreeMap<Node, Vec<u32>>,
}

impl Attrs {
    pub fn refdef(&self, n: Node) -> Option<&RefDef> {
        self.map.get(&n)
    }

    /// The refs the slicer follows for dependences: pc is structural and the
    /// address registers of statically resolved memory nodes carry no
    /// run-time information.
    pub fn slicing_refs(&self, prog: &Program, n: Node) -> BTreeSet<Var> {
        let Some(rd) = self.map.get(&n) else { return BTreeSet::new() };
        let mut refs: BTreeSet<Var> = rd.refs.iter().copied().collect();
        refs.remove(&Var::Reg(PC));
        if self.static_addrs.contains_key(&n) {
            if let Some(i) = prog.instr(n) {
                for r in isa::address_regs(i) {
                    refs.remove(&Var::Reg(r));
                }
            }
        }
        refs
    }
}

/// Effective word addresses of a memory instruction given a base-register
/// value, when they are computable from the immediate operands alone.
pub fn effective_addrs(i: &LabeledInstruction, base_value: u32) -> Option<Vec<u32>> {
    match &i.body {
        Body::Ldr { offset: MemOffset::Imm(o), .. } | Body::Str { offset: MemOffset::Imm(o), .. } => {
            Some(vec![base_value.wrapping_add(*o as u32)])
        }
        Body::Ldr { .. } | Body::Str { .. } => None,
        Body::Multi { mode, regs, .. } => {
            Some(isa::multi_addresses(*mode, base_value, regs.len() as u32))
        }
        _ => None,
    }
}

/// Coarse attributes (the un-refined `stack` variable) for the given nodes.
/// pc-relative loads are statically resolved here already.
pub fn coarse_attrs<'a>(prog: &Program, nodes: impl Iterator<Item = &'a Node>) -> Attrs {
    let mut attrs = Attrs::default();
    for &n in nodes {
        let Some(i) = prog.instr(n) else { continue };
        attrs.map.insert(n, ref_def(i));
        if let Body::Ldr { base, offset: MemOffset::Imm(o), .. } = &i.body {
            if *base == PC {
                attrs
                    .static_addrs
                    .insert(n, vec![n.wrapping_add(8).wrapping_add(*o as u32)]);
            }
        }
    }
    attrs
}

/// A slice criterion: per instruction, the variables to preserve.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceCriterion {
    pub targets: BTreeMap<Node, BTreeSet<Var>>,
}

impl SliceCriterion {
    pub fn single(node: Node, vars: impl IntoIterator<Item = Var>) -> SliceCriterion {
        let mut targets = BTreeMap::new();
        targets.insert(node, vars.into_iter().collect());
        SliceCriterion { targets }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceResult {
    pub in_slice: BTreeSet<Node>,
    pub tracked_vars: BTreeSet<Var>,
}

/// Branch-decision refs of a controlling node: its condition flags, plus the
/// target register when the node is an indirect branch with several resolved
/// successors (switch-style control flow).
fn decision_refs(g: &Cfg, i: &LabeledInstruction) -> BTreeSet<Var> {
    let mut vars: BTreeSet<Var> = cond_flags(i.cond).iter().map(|f| Var::Flag(*f)).collect();
    let succ_count = g.succ_nodes(i.address).len();
    if succ_count > 1 {
        match &i.body {
            Body::Bx { rm } => {
                if i.cond == Cond::Al {
                    vars.insert(Var::Reg(*rm));
                }
            }
            Body::Ldr { rd, .. } if *rd == PC => {
                // target produced by the load; its address web is pulled
                // through the memory criterion instead
            }
            _ => {}
        }
    }
    vars
}

/// Weiser slice: smallest fixpoint containing the criterion, closed under data
/// and control dependence.
pub fn slice(
    g: &Cfg,
    prog: &Program,
    attrs: &Attrs,
    criterion: &SliceCriterion,
) -> Result<SliceResult, GraphError> {
    let rdefs = reaching_defs(g, &attrs.map);
    let cd = control_dependence(g)?;

    let mut in_slice: BTreeSet<Node> = BTreeSet::new();
    let mut tracked: BTreeSet<Var> = BTreeSet::new();
    let mut queued: HashSet<(Node, Var)> = HashSet::new();
    let mut full_refs_done: BTreeSet<Node> = BTreeSet::new();
    let mut work: VecDeque<(Node, Var)> = VecDeque::new();

    let enqueue = |work: &mut VecDeque<(Node, Var)>,
                       queued: &mut HashSet<(Node, Var)>,
                       tracked: &mut BTreeSet<Var>,
                       n: Node,
                       v: Var| {
        tracked.insert(v);
        if queued.insert((n, v)) {
            work.push_back((n, v));
        }
    };

    // Joining the slice pulls the node's controllers (with their decision
    // variables) transitively.
    fn control_pull(
        n: Node,
        g: &Cfg,
        prog: &Program,
        cd: &BTreeMap<Node, BTreeSet<Node>>,
        in_slice: &mut BTreeSet<Node>,
        pending: &mut Vec<(Node, Var)>,
    ) {
        let Some(controllers) = cd.get(&n) else { return };
        for &c in controllers {
            if c == END || !in_slice.insert(c) {
                continue;
            }
            if let Some(i) = prog.instr(c) {
                for v in decision_refs(g, i) {
                    pending.push((c, v));
                }
            }
            control_pull(c, g, prog, cd, in_slice, pending);
        }
    }

    let join = |n: Node,
                    in_slice: &mut BTreeSet<Node>,
                    work: &mut VecDeque<(Node, Var)>,
                    queued: &mut HashSet<(Node, Var)>,
                    tracked: &mut BTreeSet<Var>| {
        if in_slice.insert(n) {
            let mut pending = Vec::new();
            control_pull(n, g, prog, &cd, in_slice, &mut pending);
            for (c, v) in pending {
                enqueue(work, queued, tracked, c, v);
            }
        }
    };

    for (&n, vars) in &criterion.targets {
        if vars.is_empty() {
            continue;
        }
        join(n, &mut in_slice, &mut work, &mut queued, &mut tracked);
        for &v in vars {
            enqueue(&mut work, &mut queued, &mut tracked, n, v);
        }
    }

    while let Some((n, v)) = work.pop_front() {
        for d in rdefs.reaching(n, v) {
            join(d, &mut in_slice, &mut work, &mut queued, &mut tracked);
            if full_refs_done.insert(d) {
                for r in attrs.slicing_refs(prog, d) {
                    enqueue(&mut work, &mut queued, &mut tracked, d, r);
                }
            }
        }
    }

    // Tracked variables are everything the in-slice instructions read or
    // write, with structurally resolved address registers excluded.
    for &n in &in_slice {
        tracked.extend(attrs.slicing_refs(prog, n));
        if let Some(rd) = attrs.map.get(&n) {
            tracked.extend(rd.defs.iter().copied());
        }
    }
    Ok(SliceResult { in_slice, tracked_vars: tracked })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceSimError {
    /// A symbolic state repeated on the current path, or the step budget ran
    /// out: the slice does not terminate on its own (violates A1).
    #[error("slice simulation does not terminate (at node {node}): {reason}")]
    NonTerminatingSlice { node: Node, reason: &'static str },
    /// sp was unknown at a stack reference (violates A2).
    #[error("stack pointer is unknown at node {0}")]
    BotStackPointer(Node),
    /// A computed branch target was unknown (input-dependent control flow).
    #[error("branch target is unknown at node {0}")]
    BotBranchTarget(Node),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a slice simulation observes.
#[derive(Debug, Clone, Default)]
pub struct SimObservations {
    /// Known sp value per visited recorded node (pre-state).
    pub sp_values: BTreeMap<Node, BTreeSet<u32>>,
    /// Computed branch targets at recorded indirect nodes; β maps to END.
    pub indirect_targets: BTreeMap<Node, BTreeSet<u32>>,
    pub steps: u64,
}

/// Symbolic simulation of a slice over a (possibly partial) CFG.
///
/// In-slice nodes run with full semantics; out-of-slice nodes keep only their
/// position: single-successor nodes fall through, multi-successor ones jump to
/// their immediate post-dominator (no slice node can be control-dependent on
/// them). Paths end at END, at nodes without successors, and at recorded
/// indirect nodes.
pub struct SliceSim<'a> {
    pub prog: &'a Program,
    pub cfg: &'a Cfg,
    pub in_slice: &'a BTreeSet<Node>,
    /// Nodes whose pre-state sp value is recorded (error if sp is ⊥ there and
    /// the node references memory).
    pub record_sp: &'a BTreeSet<Node>,
    /// Indirect nodes whose computed target is recorded; paths stop there.
    pub record_targets: &'a BTreeSet<Node>,
    pub step_budget: u64,
}

impl<'a> SliceSim<'a> {
    pub fn run(&self, initial: SymState) -> Result<SimObservations, SliceSimError> {
        let ipdom = crate::graph::post_dominators(self.cfg)?;
        let mut obs = SimObservations::default();
        let mut visited: HashSet<SymState> = HashSet::new();
        let mut on_path: HashSet<SymState> = HashSet::new();

        struct Frame {
            state: SymState,
            succs: Vec<SymState>,
            idx: usize,
        }

        let expand = |state: &SymState, obs: &mut SimObservations| -> Result<Vec<SymState>, SliceSimError> {
            obs.steps += 1;
            let Some(pc) = state.pc().known() else { return Ok(vec![]) };
            if pc == END || pc == BETA || !self.cfg.contains(pc) {
                return Ok(vec![]);
            }
            let node = pc;
            let Some(instr) = self.prog.instr(node) else { return Ok(vec![]) };

            if self.record_sp.contains(&node) {
                match state.reg(SP) {
                    Value::Known(v) => {
                        obs.sp_values.entry(node).or_default().insert(v);
                    }
                    Value::Bot => {
                        if isa::is_memory(instr) {
                            return Err(SliceSimError::BotStackPointer(node));
                        }
                    }
                }
            }
            // The target register of a recorded `bx` is sampled whenever the
            // node is reached, like the sp values: a conditional exit whose
            // condition never fires still reports where it would go.
            if self.record_targets.contains(&node) {
                if let crate::listing::Body::Bx { rm } = &instr.body {
                    if let Value::Known(t) = state.reg(*rm) {
                        obs.indirect_targets.entry(node).or_default().insert(t);
                    }
                }
            }

            if !self.in_slice.contains(&node) {
                let succs = self.cfg.succ_nodes(node);
                let next = match succs.len() {
                    0 => return Ok(vec![]),
                    1 => succs[0],
                    _ => *ipdom.get(&node).unwrap_or(&END),
                };
                let mut s = state.clone();
                s.set_pc(Value::Known(next));
                return Ok(vec![s]);
            }

            // Full semantics; fork when the condition is unknown.
            let fall = node.wrapping_add(4);
            let mut out = Vec::new();
            let mut run_exec = |executed: bool| -> Result<(), SliceSimError> {
                let mut s = state.clone();
                if !executed {
                    s.set_pc(Value::Known(fall));
                    out.push(s);
                    return Ok(());
                }
                let eff = exec_body(&mut s, instr)?;
                match eff.pc {
                    PcEffect::Sequential => {
                        s.set_pc(Value::Known(fall));
                        out.push(s);
                    }
                    PcEffect::Jump(t) => {
                        s.set_pc(Value::Known(t));
                        out.push(s);
                    }
                    PcEffect::Indirect(v) => {
                        let t = match v {
                            Value::Known(t) => t,
                            Value::Bot => return Err(SliceSimError::BotBranchTarget(node)),
                        };
                        if self.record_targets.contains(&node) {
                            obs.indirect_targets.entry(node).or_default().insert(t);
                            // Resolution stops here; the edge does not exist yet.
                            return Ok(());
                        }
                        s.set_pc(Value::Known(t));
                        out.push(s);
                    }
                }
                Ok(())
            };
            match eval_cond(&state.flags, instr.cond) {
                Trit::True => run_exec(true)?,
                Trit::False => run_exec(false)?,
                Trit::Bot => {
                    run_exec(true)?;
                    run_exec(false)?;
                }
            }
            Ok(out)
        };

        visited.insert(initial.clone());
        on_path.insert(initial.clone());
        let succs = expand(&initial, &mut obs)?;
        let mut stack = vec![Frame { state: initial, succs, idx: 0 }];
        while let Some(frame) = stack.last_mut() {
            if obs.steps > self.step_budget {
                let node = frame.state.pc().known().unwrap_or(END);
                return Err(SliceSimError::NonTerminatingSlice { node, reason: "step budget exceeded" });
            }
            if frame.idx >= frame.succs.len() {
                on_path.remove(&frame.state);
                stack.pop();
                continue;
            }
            let next = frame.succs[frame.idx].clone();
            frame.idx += 1;
            if on_path.contains(&next) {
                let node = next.pc().known().unwrap_or(END);
                return Err(SliceSimError::NonTerminatingSlice {
                    node,
                    reason: "symbolic state revisited on the current path",
                });
            }
            if !visited.insert(next.clone()) {
                continue;
            }
            on_path.insert(next.clone());
            let succs = expand(&next, &mut obs)?;
            stack.push(Frame { state: next, succs, idx: 0 });
        }
        Ok(obs)
    }
}

/// The initial extended state s₀⊥: registers and flags known, memory unknown.
pub fn initial_state(entry: Node, init_sp: u32) -> SymState {
    let mut s = SymState::new();
    s.set_reg(SP, Value::Known(init_sp));
    s.set_reg(crate::listing::LR, Value::Known(BETA));
    s.set_pc(Value::Known(entry));
    s
}

/// Result of the Step-1 stack-pointer value analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpAnalysis {
    /// Possible sp values per sp-touching node (a superset of the values any
    /// concrete run produces).
    pub values: BTreeMap<Node, BTreeSet<u32>>,
}

impl SpAnalysis {
    pub fn singleton(&self, n: Node) -> Option<u32> {
        let set = self.values.get(&n)?;
        (set.len() == 1).then(|| *set.iter().next().unwrap())
    }
}

/// Criterion for the sp analysis: every instruction that reads or writes sp.
pub fn sp_criterion(attrs: &Attrs) -> SliceCriterion {
    let mut targets = BTreeMap::new();
    for (&n, rd) in &attrs.map {
        if rd.refs.contains(&Var::Reg(SP)) || rd.defs.contains(&Var::Reg(SP)) {
            targets.insert(n, BTreeSet::from([Var::Reg(SP)]));
        }
    }
    SliceCriterion { targets }
}

/// Step 1: compute the possible sp values at each sp-touching instruction by
/// slicing for sp and simulating the slice from s₀⊥.
pub fn sp_analysis(
    g: &Cfg,
    prog: &Program,
    attrs: &Attrs,
    init_sp: u32,
    step_budget: u64,
) -> Result<SpAnalysis, SliceSimError> {
    let criterion = sp_criterion(attrs);
    if criterion.targets.is_empty() {
        return Ok(SpAnalysis::default());
    }
    let sl = slice(g, prog, attrs, &criterion)?;
    let record: BTreeSet<Node> = criterion.targets.keys().copied().collect();
    let sim = SliceSim {
        prog,
        cfg: g,
        in_slice: &sl.in_slice,
        record_sp: &record,
        record_targets: &BTreeSet::new(),
        step_budget,
    };
    let obs = sim.run(initial_state(g.entry, init_sp))?;
    Ok(SpAnalysis { values: obs.sp_values })
}

/// Step-1 refinement: replace the coarse `stack` variable of each
/// stack-referencing node with the concrete cells it can touch. Refs keep sp.
/// Cells written under a non-singleton sp set are weak defs (no kill).
pub fn refine_refdef(prog: &Program, attrs: &Attrs, spa: &SpAnalysis) -> Attrs {
    let mut refined = attrs.clone();
    for (&n, rd) in &attrs.map {
        let Some(i) = prog.instr(n) else { continue };
        if !isa::is_stack_ref(i) {
            continue;
        }
        let Some(sps) = spa.values.get(&n) else { continue };
        let mut cells: BTreeSet<u32> = BTreeSet::new();
        let mut computable = true;
        for &sp in sps {
            match effective_addrs(i, sp) {
                Some(addrs) => cells.extend(addrs),
                None => {
                    computable = false;
                    break;
                }
            }
        }
        if !computable || sps.is_empty() {
            continue;
        }
        let strong = sps.len() == 1;
        let mut new_rd = rd.clone();
        if new_rd.refs.remove(&Var::Stack) {
            new_rd.refs.extend(cells.iter().map(|&k| Var::StackCell(k)));
        }
        if new_rd.defs.remove(&Var::Stack) {
            new_rd.weak_defs.remove(&Var::Stack);
            for &k in &cells {
                new_rd.defs.insert(Var::StackCell(k));
                if !strong {
                    new_rd.weak_defs.insert(Var::StackCell(k));
                }
            }
        }
        refined.map.insert(n, new_rd);
        if strong {
            let sp = *sps.iter().next().unwrap();
            refined.static_addrs.insert(n, effective_addrs(i, sp).unwrap());
        }
    }
    refined
}

/// The WCET-equivalent abstraction α(P): instructions in `simulated` keep full
/// semantics, all others keep their syntax but only advance along their unique
/// CFG edge.
#[derive(Debug, Clone)]
pub struct AbstractProgram {
    pub base: Program,
    pub simulated: BTreeSet<Node>,
    pub tracked_vars: BTreeSet<Var>,
    /// Statically known referenced addresses for memory nodes (every
    /// non-simulated memory node has an entry).
    pub static_addrs: BTreeMap<Node, Vec<u32>>,
}

impl AbstractProgram {
    pub fn is_simulated(&self, n: Node) -> bool {
        self.simulated.contains(&n)
    }

    /// The Abs ratio numerator/denominator: simulated / total instructions.
    pub fn abs_ratio(&self) -> (usize, usize) {
        (self.simulated.len(), self.base.len())
    }
}

/// The criterion C′ for the WCET-equivalent slice: memory-transaction
/// instructions with the registers that define their addresses, conditional
/// instructions with their condition flags, and multi-successor indirect
/// branches with their target register.
pub fn wcet_criterion(g: &Cfg, prog: &Program, attrs: &Attrs) -> SliceCriterion {
    let mut targets: BTreeMap<Node, BTreeSet<Var>> = BTreeMap::new();
    for n in g.instr_nodes() {
        let Some(i) = prog.instr(n) else { continue };
        let mut vars: BTreeSet<Var> = BTreeSet::new();
        if isa::is_memory(i) && !attrs.static_addrs.contains_key(&n) {
            vars.extend(isa::address_regs(i).into_iter().map(Var::Reg));
            vars.remove(&Var::Reg(PC));
        }
        if i.cond != Cond::Al {
            vars.extend(cond_flags(i.cond).iter().map(|f| Var::Flag(*f)));
        }
        // Computed branches that may execute with several outcomes (several
        // resolved targets, or a condition choosing whether to jump at all)
        // need their target web simulated.
        if i.writes_pc_explicitly()
            && !matches!(i.body, Body::B { .. })
            && (i.cond != Cond::Al || g.succ_nodes(n).len() > 1)
        {
            if let Body::Bx { rm } = &i.body {
                vars.insert(Var::Reg(*rm));
            } else {
                vars.extend(isa::address_regs(i).into_iter().map(Var::Reg));
            }
        }
        if !vars.is_empty() {
            targets.insert(n, vars);
        }
    }
    SliceCriterion { targets }
}

/// Step 2: build α(P) from the refined attributes.
pub fn wcet_abstraction(
    g: &Cfg,
    prog: &Program,
    refined: &Attrs,
) -> Result<AbstractProgram, GraphError> {
    let criterion = wcet_criterion(g, prog, refined);
    let sl = slice(g, prog, refined, &criterion)?;
    let ap = AbstractProgram {
        base: prog.clone(),
        simulated: sl.in_slice,
        tracked_vars: sl.tracked_vars,
        static_addrs: refined.static_addrs.clone(),
    };
    for n in g.instr_nodes() {
        let Some(i) = prog.instr(n) else { continue };
        debug_assert!(
            !isa::is_memory(i) || ap.is_simulated(n) || ap.static_addrs.contains_key(&n),
            "memory node {n} neither simulated nor statically resolved"
        );
    }
    Ok(ap)
}
