//! CFG reconstruction by iterated partial unfolding and slice-based
//! resolution of dynamically computed branch targets.
//!
//! Expand follows static successors; Resolve slices the partial CFG for the
//! target register of each indirect node and simulates the slice from s₀⊥
//! with lr seeded to the sentinel β. A computed target equal to β is an edge
//! to END: control returned to the program's caller.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::graph::{Cfg, EdgeKind, GraphError, Node, END};
use crate::isa::{self, Value, Var};
use crate::listing::{Body, Cond, LabeledInstruction, Program, PC};
use crate::slice::{
    self, coarse_attrs, initial_state, refine_refdef, sp_analysis, Attrs, SliceCriterion,
    SliceSim, SliceSimError, SpAnalysis,
};

/// The link-register sentinel: a word that is never an instruction address
/// (not a multiple of 4).
pub const BETA: u32 = 3;

/// The value seeded into lr before the entry instruction runs.
pub fn sentinel() -> Value {
    Value::Known(BETA)
}

#[derive(Debug, Error)]
pub enum CfgError {
    /// A simulated branch target was ⊥: control flow depends on input data.
    #[error("node {0}: branch target depends on input data")]
    BotBranchTarget(Node),
    /// A resolved target is neither β nor an instruction address.
    #[error("node {node}: resolved branch target {target} is not an instruction")]
    BadBranchTarget { node: Node, target: u32 },
    /// The resolution loop stopped adding edges while indirect nodes remain.
    #[error("CFG resolution made no progress")]
    NoProgress,
    #[error(transparent)]
    Sim(#[from] SliceSimError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A reconstructed CFG together with the stack-pointer analysis that the
/// construction already performed on the complete graph.
#[derive(Debug, Clone)]
pub struct BuiltCfg {
    pub cfg: Cfg,
    pub sp: SpAnalysis,
}

fn is_indirect(i: &LabeledInstruction) -> bool {
    match &i.body {
        Body::Bx { .. } => true,
        Body::B { .. } => false,
        _ => i.writes_pc_explicitly(),
    }
}

/// Static successors of an instruction,或 None when the taken side is
/// dynamically computed.
fn static_successors(prog: &Program, i: &LabeledInstruction) -> Vec<(Node, EdgeKind)> {
    let fall = i.address.wrapping_add(4);
    let fall_edge = |out: &mut Vec<(Node, EdgeKind)>| {
        if prog.instr(fall).is_some() {
            out.push((fall, EdgeKind::Fallthrough));
        } else {
            out.push((END, EdgeKind::Fallthrough));
        }
    };
    let mut out = Vec::new();
    match &i.body {
        Body::B { link, target } => {
            out.push((*target, if *link { EdgeKind::Call } else { EdgeKind::Taken }));
            if i.cond != Cond::Al {
                fall_edge(&mut out);
            }
        }
        _ if is_indirect(i) => {
            // Taken side resolved later.
            if i.cond != Cond::Al {
                fall_edge(&mut out);
            }
        }
        _ => fall_edge(&mut out),
    }
    out
}

/// The criterion variables for resolving one indirect node.
fn target_vars(i: &LabeledInstruction) -> BTreeSet<Var> {
    let mut vars = BTreeSet::new();
    match &i.body {
        Body::Bx { rm } => {
            vars.insert(Var::Reg(*rm));
        }
        Body::Ldr { .. } => {
            for r in isa::address_regs(i) {
                if r != PC {
                    vars.insert(Var::Reg(r));
                }
            }
            vars.insert(Var::Stack);
        }
        Body::Multi { .. } => {
            for r in isa::address_regs(i) {
                vars.insert(Var::Reg(r));
            }
            vars.insert(Var::Stack);
        }
        Body::Mov { op2, .. } | Body::Mvn { op2, .. } => {
            if let crate::listing::Op2::Reg(r) | crate::listing::Op2::ShiftedReg(r, _, _) = op2 {
                vars.insert(Var::Reg(*r));
            }
        }
        Body::Alu { rn, op2, .. } => {
            vars.insert(Var::Reg(*rn));
            if let crate::listing::Op2::Reg(r) | crate::listing::Op2::ShiftedReg(r, _, _) = op2 {
                vars.insert(Var::Reg(*r));
            }
        }
        _ => {}
    }
    vars
}

/// A copy of the working graph with END attached to every node that currently
/// has no successors, so post-dominance exists mid-construction.
fn with_temp_exits(cfg: &Cfg) -> Cfg {
    let mut g = cfg.clone();
    let dangling: Vec<Node> = g
        .instr_nodes()
        .filter(|&n| g.successors(n).is_empty())
        .collect();
    for n in dangling {
        g.add_edge(n, END, EdgeKind::Return);
    }
    g
}

/// Build the complete CFG of `prog` from its entry point.
///
/// `init_sp` seeds sp for the embedded value analysis; `step_budget` bounds
/// each symbolic simulation.
pub fn build_cfg(prog: &Program, init_sp: u32, step_budget: u64) -> Result<BuiltCfg, CfgError> {
    let mut cfg = Cfg::new(prog.entry);
    let mut expanded: BTreeSet<Node> = BTreeSet::new();
    let mut indirect: BTreeSet<Node> = BTreeSet::new();
    let mut queue: VecDeque<Node> = VecDeque::from([prog.entry]);

    let mut rounds = 0usize;
    loop {
        // Expand: follow static successors until only indirect nodes remain
        // unresolved.
        while let Some(n) = queue.pop_front() {
            if n == END || !expanded.insert(n) {
                continue;
            }
            let Some(i) = prog.instr(n) else {
                return Err(CfgError::BadBranchTarget { node: n, target: n });
            };
            cfg.add_node(n);
            if is_indirect(i) {
                indirect.insert(n);
            }
            for (dst, kind) in static_successors(prog, i) {
                if dst != END && prog.instr(dst).is_none() {
                    return Err(CfgError::BadBranchTarget { node: n, target: dst });
                }
                cfg.add_edge(n, dst, kind);
                queue.push_back(dst);
            }
        }

        let pending: Vec<Node> = indirect.iter().copied().collect();
        if pending.is_empty() {
            break;
        }

        // Resolve every indirect node against the current partial graph. The
        // sp-analysis runs on the same graph so the resolution slices can use
        // refined stack cells.
        let temp = with_temp_exits(&cfg);
        let attrs = coarse_attrs(prog, temp.instr_nodes().collect::<Vec<_>>().iter());
        let spa = sp_analysis(&temp, prog, &attrs, init_sp, step_budget)?;
        let refined = refine_refdef(prog, &attrs, &spa);

        let mut new_edges = false;
        for &node in &pending {
            let targets = resolve_indirect(prog, &temp, &refined, node, init_sp, step_budget)?;
            let instr = prog.instr(node).unwrap();
            let kind = match instr.body {
                Body::Bx { .. } => EdgeKind::Return,
                _ => EdgeKind::Indirect,
            };
            for t in targets {
                let dst = if t == BETA {
                    END
                } else if prog.instr(t).is_some() {
                    t
                } else {
                    return Err(CfgError::BadBranchTarget { node, target: t });
                };
                if cfg.add_edge(node, dst, kind) {
                    new_edges = true;
                    if dst != END {
                        queue.push_back(dst);
                    }
                }
            }
        }
        if !new_edges && queue.is_empty() {
            break;
        }
        rounds += 1;
        if rounds > indirect.len() + prog.len() {
            return Err(CfgError::NoProgress);
        }
    }

    // Semantically unreachable leftovers (e.g. an indirect branch only
    // reachable through an always-false condition) exit to END so that
    // post-dominance stays total.
    let dangling: Vec<Node> = cfg
        .instr_nodes()
        .filter(|&n| cfg.successors(n).is_empty())
        .collect();
    for n in dangling {
        cfg.add_edge(n, END, EdgeKind::Return);
    }
    crate::graph::post_dominators(&cfg)?;

    // Final sp analysis on the complete graph, shared with later stages.
    let attrs = coarse_attrs(prog, cfg.instr_nodes().collect::<Vec<_>>().iter());
    let sp = sp_analysis(&cfg, prog, &attrs, init_sp, step_budget)?;
    Ok(BuiltCfg { cfg, sp })
}

/// Slice for the target register of `node` and simulate, collecting every
/// value the register takes when the node is reached.
fn resolve_indirect(
    prog: &Program,
    temp: &Cfg,
    refined: &Attrs,
    node: Node,
    init_sp: u32,
    step_budget: u64,
) -> Result<BTreeSet<u32>, CfgError> {
    let instr = prog.instr(node).unwrap();
    let criterion = SliceCriterion::single(node, target_vars(instr));
    let sl = slice::slice(temp, prog, refined, &criterion)?;
    let record: BTreeSet<Node> = BTreeSet::from([node]);
    let sim = SliceSim {
        prog,
        cfg: temp,
        in_slice: &sl.in_slice,
        record_sp: &BTreeSet::new(),
        record_targets: &record,
        step_budget,
    };
    let obs = sim.run(initial_state(temp.entry, init_sp)).map_err(|e| match e {
        SliceSimError::BotBranchTarget(n) => CfgError::BotBranchTarget(n),
        other => CfgError::Sim(other),
    })?;
    Ok(obs.indirect_targets.get(&node).cloned().unwrap_or_default())
}

/// Deterministic DOT rendering of a CFG. Slice membership, when given, marks
/// the simulated nodes.
pub fn emit_dot(g: &Cfg, prog: &Program, simulated: Option<&BTreeSet<Node>>) -> String {
    let mut out = String::from("digraph cfg {\n  node [shape=box fontname=\"monospace\"];\n");
    for n in g.instr_nodes() {
        let label = match prog.instr(n) {
            Some(i) => format!("{n}: {}", i.text()),
            None => format!("{n}"),
        };
        let mark = match simulated {
            Some(s) if s.contains(&n) => " color=red style=bold",
            Some(_) => " color=gray50",
            None => "",
        };
        out.push_str(&format!("  \"{n}\" [label=\"{label}\"{mark}];\n"));
    }
    out.push_str("  \"END\" [shape=doublecircle label=\"END\"];\n");
    for (src, dst, kind) in g.edges() {
        let dst_name = if dst == END { "END".to_string() } else { dst.to_string() };
        out.push_str(&format!(
            "  \"{src}\" -> \"{dst_name}\" [label=\"{}\"];\n",
            kind.name()
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::listing::parse_listing;

    #[test]
    fn sentinel_is_three_and_unaligned() {
        assert_eq!(sentinel(), Value::Known(3));
        assert_ne!(BETA % 4, 0);
    }

    #[test]
    fn straight_line_bx_lr_resolves_to_end() {
        let prog = parse_listing("00000000 <main>:\n0: mov r0,#1\n4: bx lr\n").unwrap();
        let built = build_cfg(&prog, 0x1000, 100_000).unwrap();
        assert!(built.cfg.has_edge(4, END));
        assert_eq!(built.cfg.succ_nodes(4), vec![END]);
    }

    #[test]
    fn saved_lr_flows_through_register_move() {
        let prog = parse_listing("00000000 <main>:\n0: mov r5,lr\n4: bx r5\n").unwrap();
        let built = build_cfg(&prog, 0x1000, 100_000).unwrap();
        assert_eq!(built.cfg.succ_nodes(4), vec![END]);
    }

    #[test]
    fn one_instruction_dot() {
        let prog = parse_listing("00000000 <main>:\n0: bx lr\n").unwrap();
        let built = build_cfg(&prog, 0x1000, 100_000).unwrap();
        let dot = emit_dot(&built.cfg, &prog, None);
        assert!(dot.contains("\"0\" [label=\"0: bx lr\"]"));
        assert!(dot.contains("\"0\" -> \"END\""));
    }

    #[test]
    fn bad_direct_target_is_an_error() {
        let prog = parse_listing("00000000 <main>:\n0: b 100\n4: bx lr\n").unwrap();
        assert!(matches!(
            build_cfg(&prog, 0x1000, 100_000),
            Err(CfgError::BadBranchTarget { node: 0, target: 100 })
        ));
    }
}
