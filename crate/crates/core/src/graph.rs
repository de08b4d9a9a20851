//! Instruction-graph algorithms: post-dominators, post-dominance frontiers,
//! control dependence, and reaching definitions.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::isa::{RefDef, Var};

/// A CFG node: the instruction address, or [`END`].
pub type Node = u32;

/// The synthetic exit node aggregating all program-exit points.
pub const END: Node = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Call,
    Return,
    Indirect,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Fallthrough => "fallthrough",
            EdgeKind::Taken => "taken",
            EdgeKind::Call => "call",
            EdgeKind::Return => "return",
            EdgeKind::Indirect => "indirect",
        }
    }
}

/// Directed instruction graph with a single entry and the synthetic END exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub entry: Node,
    nodes: BTreeSet<Node>,
    succs: BTreeMap<Node, Vec<(Node, EdgeKind)>>,
    preds: BTreeMap<Node, Vec<Node>>,
}

impl Cfg {
    pub fn new(entry: Node) -> Cfg {
        let mut nodes = BTreeSet::new();
        nodes.insert(entry);
        nodes.insert(END);
        Cfg { entry, nodes, succs: BTreeMap::new(), preds: BTreeMap::new() }
    }

    pub fn add_node(&mut self, n: Node) {
        self.nodes.insert(n);
    }

    pub fn contains(&self, n: Node) -> bool {
        self.nodes.contains(&n)
    }

    /// Adds an edge if absent. Returns true when the edge is new.
    pub fn add_edge(&mut self, src: Node, dst: Node, kind: EdgeKind) -> bool {
        self.nodes.insert(src);
        self.nodes.insert(dst);
        let list = self.succs.entry(src).or_default();
        if list.iter().any(|(d, k)| *d == dst && *k == kind) {
            return false;
        }
        list.push((dst, kind));
        list.sort();
        let preds = self.preds.entry(dst).or_default();
        if !preds.contains(&src) {
            preds.push(src);
            preds.sort();
        }
        true
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.nodes.iter().copied()
    }

    /// Instruction nodes only, in address order.
    pub fn instr_nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.nodes.iter().copied().filter(|&n| n != END)
    }

    pub fn successors(&self, n: Node) -> &[(Node, EdgeKind)] {
        self.succs.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn succ_nodes(&self, n: Node) -> Vec<Node> {
        let mut v: Vec<Node> = self.successors(n).iter().map(|(d, _)| *d).collect();
        v.dedup();
        v
    }

    pub fn predecessors(&self, n: Node) -> &[Node] {
        self.preds.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn edge_count(&self) -> usize {
        self.succs.values().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Node, Node, EdgeKind)> + '_ {
        self.succs
            .iter()
            .flat_map(|(s, list)| list.iter().map(move |(d, k)| (*s, *d, *k)))
    }

    pub fn has_edge(&self, src: Node, dst: Node) -> bool {
        self.successors(src).iter().any(|(d, _)| *d == dst)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    /// A node cannot reach END, so post-dominance is undefined (violates A1).
    #[error("node {0} cannot reach the exit")]
    UnreachableExit(Node),
}

/// Immediate post-dominators, computed by the iterative dataflow algorithm on
/// the reverse graph. END has no entry; every other node maps to its unique
/// closest strict post-dominator.
pub fn post_dominators(g: &Cfg) -> Result<BTreeMap<Node, Node>, GraphError> {
    // Reverse post-order of the reverse graph, rooted at END.
    let mut order: Vec<Node> = Vec::new();
    let mut seen: BTreeSet<Node> = BTreeSet::new();
    // Iterative DFS with explicit stack; post-order accumulation.
    let mut stack: Vec<(Node, usize)> = vec![(END, 0)];
    seen.insert(END);
    while let Some((n, idx)) = stack.pop() {
        let preds = g.predecessors(n);
        if idx < preds.len() {
            stack.push((n, idx + 1));
            let p = preds[idx];
            if seen.insert(p) {
                stack.push((p, 0));
            }
        } else {
            order.push(n);
        }
    }
    for n in g.nodes() {
        if !seen.contains(&n) {
            return Err(GraphError::UnreachableExit(n));
        }
    }
    order.reverse(); // reverse post-order: END first
    let index: HashMap<Node, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    let mut ipdom: HashMap<Node, Node> = HashMap::new();
    ipdom.insert(END, END);
    let intersect = |ipdom: &HashMap<Node, Node>, mut a: Node, mut b: Node| -> Node {
        while a != b {
            while index[&a] > index[&b] {
                a = ipdom[&a];
            }
            while index[&b] > index[&a] {
                b = ipdom[&b];
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &n in order.iter().skip(1) {
            let mut new_ipdom: Option<Node> = None;
            for &s in g.succ_nodes(n).iter() {
                if !ipdom.contains_key(&s) {
                    continue;
                }
                new_ipdom = Some(match new_ipdom {
                    None => s,
                    Some(cur) => intersect(&ipdom, cur, s),
                });
            }
            if let Some(ni) = new_ipdom {
                if ipdom.get(&n) != Some(&ni) {
                    ipdom.insert(n, ni);
                    changed = true;
                }
            }
        }
    }
    Ok(ipdom
        .into_iter()
        .filter(|(n, _)| *n != END)
        .collect())
}

/// Post-dominance frontiers.
///
/// PDF(n) = { m : m has a successor post-dominated by n and m is not strictly
/// post-dominated by n }.
pub fn post_dominance_frontier(g: &Cfg) -> Result<BTreeMap<Node, BTreeSet<Node>>, GraphError> {
    let ipdom = post_dominators(g)?;
    let mut pdf: BTreeMap<Node, BTreeSet<Node>> = BTreeMap::new();
    for m in g.nodes() {
        let succs = g.succ_nodes(m);
        if succs.len() < 2 {
            continue;
        }
        let stop = ipdom.get(&m).copied();
        for s in succs {
            let mut runner = s;
            while Some(runner) != stop {
                pdf.entry(runner).or_default().insert(m);
                if runner == END {
                    break;
                }
                runner = ipdom[&runner];
            }
        }
    }
    Ok(pdf)
}

/// Control dependence: node -> the set of branch nodes controlling it.
pub fn control_dependence(g: &Cfg) -> Result<BTreeMap<Node, BTreeSet<Node>>, GraphError> {
    post_dominance_frontier(g)
}

/// Reaching definitions for every (node, referenced variable) pair.
///
/// Forward may-analysis. A definition of the coarse `stack` variable kills
/// nothing; `stack_k` definitions kill same-cell definitions only when they
/// are strong (singleton sp set at the defining node).
#[derive(Debug, Clone, Default)]
pub struct ReachingDefs {
    /// (use node, variable) -> defining nodes whose value may reach the use.
    pub at_use: BTreeMap<(Node, Var), BTreeSet<Node>>,
    /// node -> definitions flowing in (variable -> def nodes).
    pub inputs: BTreeMap<Node, BTreeMap<Var, BTreeSet<Node>>>,
}

impl ReachingDefs {
    pub fn reaching(&self, node: Node, var: Var) -> BTreeSet<Node> {
        self.at_use.get(&(node, var)).cloned().unwrap_or_default()
    }
}

pub fn reaching_defs(g: &Cfg, attrs: &BTreeMap<Node, RefDef>) -> ReachingDefs {
    type DefSet = BTreeMap<Var, BTreeSet<Node>>;
    let mut outs: BTreeMap<Node, DefSet> = BTreeMap::new();
    let mut ins: BTreeMap<Node, DefSet> = BTreeMap::new();

    let transfer = |n: Node, input: &DefSet| -> DefSet {
        let mut out = input.clone();
        if let Some(rd) = attrs.get(&n) {
            for d in &rd.defs {
                let slot = out.entry(*d).or_default();
                if !rd.weak_defs.contains(d) {
                    slot.clear();
                }
                slot.insert(n);
            }
        }
        out
    };

    let mut worklist: VecDeque<Node> = g.instr_nodes().collect();
    while let Some(n) = worklist.pop_front() {
        let mut input: DefSet = DefSet::new();
        for &p in g.predecessors(n) {
            if let Some(o) = outs.get(&p) {
                for (v, defs) in o {
                    input.entry(*v).or_default().extend(defs.iter().copied());
                }
            }
        }
        let out = transfer(n, &input);
        ins.insert(n, input);
        if outs.get(&n) != Some(&out) {
            outs.insert(n, out);
            for &(s, _) in g.successors(n) {
                if s != END {
                    worklist.push_back(s);
                }
            }
        }
    }

    let mut at_use = BTreeMap::new();
    for n in g.instr_nodes() {
        if let (Some(rd), Some(input)) = (attrs.get(&n), ins.get(&n)) {
            for v in &rd.refs {
                let defs = input.get(v).cloned().unwrap_or_default();
                at_use.insert((n, *v), defs);
            }
        }
    }
    ReachingDefs { at_use, inputs: ins }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Cfg {
        // a(0) -> b(4) -> c(8) -> END
        let mut g = Cfg::new(0);
        g.add_edge(0, 4, EdgeKind::Fallthrough);
        g.add_edge(4, 8, EdgeKind::Fallthrough);
        g.add_edge(8, END, EdgeKind::Return);
        g
    }

    fn diamond() -> Cfg {
        // a(0) -> {b(4), c(8)} -> d(12) -> END
        let mut g = Cfg::new(0);
        g.add_edge(0, 4, EdgeKind::Taken);
        g.add_edge(0, 8, EdgeKind::Fallthrough);
        g.add_edge(4, 12, EdgeKind::Fallthrough);
        g.add_edge(8, 12, EdgeKind::Fallthrough);
        g.add_edge(12, END, EdgeKind::Return);
        g
    }

    #[test]
    fn postdom_chain() {
        let ipdom = post_dominators(&chain()).unwrap();
        assert_eq!(ipdom[&0], 4);
        assert_eq!(ipdom[&4], 8);
        assert_eq!(ipdom[&8], END);
        assert!(!ipdom.contains_key(&END));
    }

    #[test]
    fn postdom_diamond_join() {
        let ipdom = post_dominators(&diamond()).unwrap();
        assert_eq!(ipdom[&0], 12);
        assert_eq!(ipdom[&4], 12);
        assert_eq!(ipdom[&8], 12);
    }

    #[test]
    fn unreachable_exit_detected() {
        let mut g = Cfg::new(0);
        g.add_edge(0, 4, EdgeKind::Fallthrough);
        // 4 -> 4 self loop, never reaches END
        g.add_edge(4, 4, EdgeKind::Taken);
        assert!(matches!(post_dominators(&g), Err(GraphError::UnreachableExit(_))));
    }

    #[test]
    fn pdf_diamond_and_chain() {
        let pdf = post_dominance_frontier(&diamond()).unwrap();
        assert_eq!(pdf.get(&4), Some(&BTreeSet::from([0])));
        assert_eq!(pdf.get(&8), Some(&BTreeSet::from([0])));
        assert_eq!(pdf.get(&12), None);

        let pdf = post_dominance_frontier(&chain()).unwrap();
        assert!(pdf.values().all(BTreeSet::is_empty) || pdf.is_empty());
    }

    #[test]
    fn control_dependence_diamond() {
        let cd = control_dependence(&diamond()).unwrap();
        assert_eq!(cd.get(&4), Some(&BTreeSet::from([0])));
        assert_eq!(cd.get(&8), Some(&BTreeSet::from([0])));
        // straight-line: empty everywhere
        let cd = control_dependence(&chain()).unwrap();
        assert!(cd.get(&0).is_none() && cd.get(&4).is_none());
    }
}
