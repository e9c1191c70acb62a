//! Branch-and-bound over include/exclude decisions taken in index order.
//!
//! A node at depth `d` has decided every index below `d`. It becomes a leaf when its
//! support is determined, either because `k` indices are already in or because all
//! undecided indices must be taken. Other nodes are first screened with the residual
//! over every allowed column (a bound that needs no eigenvalue computation), then
//! tested against the incumbent with one relaxation solve. A node is fathomed when its
//! bound reaches `incumbent - tol`.
//!
//! A visited node is one on which a bound or a leaf evaluation was performed. The root
//! counts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundConfig, BoundEngine, NodeProblem};
use crate::error::{Error, Result};
use crate::heuristics::{enhanced_from_covariance, forward_greedy, EnhancedConfig};
use crate::instance::Instance;
use crate::sdp::{self, SolverConfig};
use crate::subset_eval::{evaluate_unchecked, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeBound {
    Exact,
    Sdp,
    /// No bounding: plain enumeration of the tree.
    None,
}

impl std::str::FromStr for NodeBound {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "sdp" => Ok(Self::Sdp),
            "none" => Ok(Self::None),
            other => Err(Error::Parameter(format!("unknown bound engine '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchOrder {
    Dfs,
    BestFirst,
}

impl std::str::FromStr for SearchOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfs" => Ok(Self::Dfs),
            "best-first" => Ok(Self::BestFirst),
            other => Err(Error::Parameter(format!("unknown search order '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    pub bound_engine: NodeBound,
    pub search_order: SearchOrder,
    /// Seed the incumbent with forward greedy and enhanced randomization.
    pub heuristic_at_root: bool,
    /// Every this many visited nodes, complete the current node greedily (0 = never).
    pub heuristic_every_n_nodes: u64,
    pub node_budget: u64,
    /// Fathoming slack; `None` means `1e-9 (1 + y'y)`.
    pub tol: Option<f64>,
    pub initial_incumbent: Option<SupportSet>,
    /// Relaxation and enumeration settings used at nodes.
    pub bound: BoundConfig,
    pub enhanced: EnhancedConfig,
}

impl BnbConfig {
    pub fn new(bound_engine: NodeBound) -> Self {
        let mut bound = BoundConfig::new(BoundEngine::Sdp);
        bound.solver = SolverConfig::default().with_max_iterations(1000);
        Self {
            bound_engine,
            search_order: SearchOrder::Dfs,
            heuristic_at_root: true,
            heuristic_every_n_nodes: 0,
            node_budget: 10_000_000,
            tol: None,
            initial_incumbent: None,
            bound,
            enhanced: EnhancedConfig { num_samples: 100, ..EnhancedConfig::default() },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.node_budget == 0 {
            return Err(Error::Parameter("node_budget must be at least 1".into()));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Parameter(format!("tol must be non-negative and finite, got {t}")));
            }
        }
        Ok(())
    }
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self::new(NodeBound::Sdp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnbNode {
    pub forced_in: SupportSet,
    pub forced_out: SupportSet,
    /// Next index to branch on.
    pub depth: usize,
    pub lower_bound: f64,
    pub parent_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeAction {
    Branch,
    Fathom,
    Leaf,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEvent {
    pub node: u64,
    pub forced_in: SupportSet,
    pub forced_out: SupportSet,
    pub depth: usize,
    pub bound: f64,
    pub action: NodeAction,
    /// Incumbent objective after the node was processed.
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub best_support: SupportSet,
    pub best_objective: f64,
    pub root_lower_bound: f64,
    /// Equal to `best_objective` when optimality is proved, otherwise the smallest bound
    /// among the unexplored nodes.
    pub global_lower_bound: f64,
    pub nodes_visited: u64,
    pub nodes_fathomed: u64,
    pub leaves_evaluated: u64,
    pub optimality_proved: bool,
    #[serde(serialize_with = "as_seconds")]
    pub wall_time: Duration,
}

fn as_seconds<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

pub fn solve(inst: &Instance, k: usize, cfg: &BnbConfig) -> Result<SolveReport> {
    Search::new(inst, k, cfg, false)?.run().map(|(r, _)| r)
}

/// Same search, also returning one event per visited node.
pub fn solve_with_trace(inst: &Instance, k: usize, cfg: &BnbConfig) -> Result<(SolveReport, Vec<NodeEvent>)> {
    Search::new(inst, k, cfg, true)?.run()
}

struct Queued {
    node: BnbNode,
    seq: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // max-heap: smallest bound first, then the earliest pushed
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .node
            .lower_bound
            .total_cmp(&self.node.lower_bound)
            .then(other.seq.cmp(&self.seq))
    }
}

enum Frontier {
    Stack(Vec<BnbNode>),
    Heap(BinaryHeap<Queued>, u64),
}

impl Frontier {
    fn push(&mut self, node: BnbNode) {
        match self {
            Frontier::Stack(s) => s.push(node),
            Frontier::Heap(h, seq) => {
                *seq += 1;
                h.push(Queued { node, seq: *seq });
            }
        }
    }

    fn pop(&mut self) -> Option<BnbNode> {
        match self {
            Frontier::Stack(s) => s.pop(),
            Frontier::Heap(h, _) => h.pop().map(|q| q.node),
        }
    }

    fn min_bound(&self) -> Option<f64> {
        let it: Box<dyn Iterator<Item = &BnbNode>> = match self {
            Frontier::Stack(s) => Box::new(s.iter()),
            Frontier::Heap(h, _) => Box::new(h.iter().map(|q| &q.node)),
        };
        it.map(|n| n.lower_bound).reduce(f64::min)
    }
}

struct Search<'a> {
    inst: &'a Instance,
    k: usize,
    cfg: &'a BnbConfig,
    tol: f64,
    incumbent: f64,
    best_support: SupportSet,
    trace: Option<Vec<NodeEvent>>,
    visited: u64,
    fathomed: u64,
    leaves: u64,
}

impl<'a> Search<'a> {
    fn new(inst: &'a Instance, k: usize, cfg: &'a BnbConfig, with_trace: bool) -> Result<Self> {
        inst.check_k(k)?;
        cfg.validate()?;
        let tol = cfg.tol.unwrap_or(1e-9 * (1.0 + inst.y_norm_sq()));
        let mut s = Self {
            inst,
            k,
            cfg,
            tol,
            incumbent: f64::INFINITY,
            best_support: SupportSet::empty(),
            trace: with_trace.then(Vec::new),
            visited: 0,
            fathomed: 0,
            leaves: 0,
        };
        if let Some(init) = &cfg.initial_incumbent {
            if init.len() > k || init.indices().last().is_some_and(|&i| i >= inst.p()) {
                return Err(Error::Validation(format!("initial incumbent {init} is not a valid support")));
            }
            s.offer(init.clone(), None);
        }
        Ok(s)
    }

    fn offer(&mut self, support: SupportSet, objective: Option<f64>) {
        let v = objective.unwrap_or_else(|| evaluate_unchecked(self.inst, &support).objective);
        if v < self.incumbent || (v == self.incumbent && support.indices() < self.best_support.indices()) {
            self.incumbent = v;
            self.best_support = support;
        }
    }

    fn root_heuristics(&mut self) -> Result<()> {
        let greedy = forward_greedy(self.inst, self.k)?;
        self.offer(greedy.best.support.clone(), Some(greedy.best.objective));
        // covariance from the relaxation at the level of the incumbent
        let total = self.inst.y_norm_sq();
        let rho = (total - self.incumbent).clamp(0.0, total);
        let m = crate::bounds::MatrixAssembly::new(self.inst).m(rho);
        let solver = self.cfg.bound.solver.clone();
        let z = sdp::sdp_k(&m, self.k, &solver)?.primal_z;
        let enhanced = enhanced_from_covariance(self.inst, self.k, &z, &self.cfg.enhanced)?;
        self.offer(enhanced.best.support.clone(), Some(enhanced.best.objective));
        Ok(())
    }

    /// Greedy completion of a node over its allowed indices.
    fn node_heuristic(&mut self, node: &BnbNode) {
        let mut current = node.forced_in.clone();
        while current.len() < self.k {
            let mut best: Option<(usize, f64)> = None;
            for j in node.depth..self.inst.p() {
                if current.contains(j) {
                    continue;
                }
                let v = evaluate_unchecked(self.inst, &current.with(j)).objective;
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => current = current.with(j),
                None => break,
            }
        }
        self.offer(current, None);
    }

    fn record(&mut self, node: &BnbNode, bound: f64, action: NodeAction) {
        let incumbent = self.incumbent;
        if let Some(t) = self.trace.as_mut() {
            t.push(NodeEvent {
                node: self.visited,
                forced_in: node.forced_in.clone(),
                forced_out: node.forced_out.clone(),
                depth: node.depth,
                bound,
                action,
                incumbent,
            });
        }
    }

    /// Lower bound for an open node, or `None` when it cannot be fathomed.
    fn bound_node(&self, node: &BnbNode) -> Result<(f64, bool)> {
        let mut bound = node.parent_bound;
        let problem = match NodeProblem::new(self.inst, self.k, &node.forced_in, &node.forced_out)? {
            NodeProblem::Open(p) => p,
            NodeProblem::Infeasible => return Ok((f64::INFINITY, true)),
            NodeProblem::Determined { objective, .. } => return Ok((objective, objective >= self.incumbent - self.tol)),
        };
        let target = self.incumbent - self.tol;
        bound = bound.max(problem.full_residual());
        if bound >= target {
            return Ok((bound, true));
        }
        let engine = match self.cfg.bound_engine {
            NodeBound::Exact => BoundEngine::Exact,
            NodeBound::Sdp => BoundEngine::Sdp,
            NodeBound::None => return Ok((bound, false)),
        };
        if !target.is_finite() {
            return Ok((bound, false));
        }
        let cfg = BoundConfig { engine, ..self.cfg.bound.clone() };
        match problem.certify_at_least(target, &cfg)? {
            Some(b) => Ok((bound.max(b), true)),
            None => Ok((bound, false)),
        }
    }

    fn run(mut self) -> Result<(SolveReport, Vec<NodeEvent>)> {
        let start = Instant::now();
        let p = self.inst.p();
        if self.cfg.heuristic_at_root && self.k < p {
            self.root_heuristics()?;
        }
        let root = BnbNode {
            forced_in: SupportSet::empty(),
            forced_out: SupportSet::empty(),
            depth: 0,
            lower_bound: 0.0,
            parent_bound: 0.0,
        };
        let mut frontier = match self.cfg.search_order {
            SearchOrder::Dfs => Frontier::Stack(vec![root]),
            SearchOrder::BestFirst => {
                let mut f = Frontier::Heap(BinaryHeap::new(), 0);
                f.push(root);
                f
            }
        };
        let mut root_bound = None;
        let mut exhausted = false;

        while let Some(node) = frontier.pop() {
            if self.visited >= self.cfg.node_budget {
                frontier.push(node);
                exhausted = true;
                break;
            }
            // bounds found after the node was queued may already settle it
            if node.lower_bound >= self.incumbent - self.tol && self.visited > 0 {
                self.visited += 1;
                self.fathomed += 1;
                self.record(&node, node.lower_bound, NodeAction::Fathom);
                continue;
            }
            self.visited += 1;
            let free = p - node.depth;
            let n_in = node.forced_in.len();

            if n_in == self.k || n_in + free == self.k {
                let mut support = node.forced_in.clone();
                for j in node.depth..p {
                    if support.len() < self.k {
                        support = support.with(j);
                    }
                }
                let value = evaluate_unchecked(self.inst, &support).objective;
                self.leaves += 1;
                self.offer(support, Some(value));
                root_bound.get_or_insert(value);
                self.record(&node, value, NodeAction::Leaf);
                continue;
            }
            if n_in > self.k || n_in + free < self.k {
                self.record(&node, f64::INFINITY, NodeAction::Infeasible);
                continue;
            }

            if self.cfg.heuristic_every_n_nodes > 0 && self.visited.is_multiple_of(self.cfg.heuristic_every_n_nodes) {
                self.node_heuristic(&node);
            }

            let (bound, fathom) = if self.cfg.bound_engine == NodeBound::None {
                (node.parent_bound, false)
            } else {
                self.bound_node(&node)?
            };
            root_bound.get_or_insert(bound);
            if fathom {
                self.fathomed += 1;
                self.record(&node, bound, NodeAction::Fathom);
                continue;
            }
            self.record(&node, bound, NodeAction::Branch);

            let d = node.depth;
            let exclude_ok = n_in + (free - 1) >= self.k;
            let include = BnbNode {
                forced_in: node.forced_in.with(d),
                forced_out: node.forced_out.clone(),
                depth: d + 1,
                lower_bound: bound,
                parent_bound: bound,
            };
            let exclude = BnbNode {
                forced_in: node.forced_in.clone(),
                forced_out: node.forced_out.with(d),
                depth: d + 1,
                lower_bound: bound,
                parent_bound: bound,
            };
            // the stack pops the include branch first
            if exclude_ok {
                frontier.push(exclude);
            }
            frontier.push(include);
        }

        let global_lower_bound = if exhausted {
            frontier.min_bound().map_or(self.incumbent, |b| b.min(self.incumbent))
        } else {
            self.incumbent
        };
        let report = SolveReport {
            best_objective: self.incumbent,
            best_support: self.best_support,
            root_lower_bound: root_bound.unwrap_or(0.0).min(self.incumbent),
            global_lower_bound,
            nodes_visited: self.visited,
            nodes_fathomed: self.fathomed,
            leaves_evaluated: self.leaves,
            optimality_proved: !exhausted,
            wall_time: start.elapsed(),
        };
        Ok((report, self.trace.unwrap_or_default()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bruteforce::psi_exact;
    use crate::combinatorics::permutations;
    use crate::instance::{generate_gaussian, GaussianSpec};

    fn gaussian(n: usize, p: usize, k: usize, seed: u64) -> Instance {
        generate_gaussian(&GaussianSpec::new(n, p, k, seed)).unwrap().0
    }

    fn plain(engine: NodeBound) -> BnbConfig {
        BnbConfig { heuristic_at_root: false, ..BnbConfig::new(engine) }
    }

    #[test]
    fn full_cardinality_is_one_leaf() {
        let inst = gaussian(10, 5, 2, 1);
        let (r, trace) = solve_with_trace(&inst, 5, &BnbConfig::default()).unwrap();
        assert_eq!(r.nodes_visited, 1);
        assert_eq!(r.leaves_evaluated, 1);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].action, NodeAction::Leaf);
        assert!(r.optimality_proved);
        assert_eq!(r.best_support, SupportSet::full(5));
    }

    #[test]
    fn closed_gap_fathoms_the_root() {
        let inst = gaussian(30, 6, 2, 4);
        let exact = psi_exact(&inst, 2, None).unwrap();
        for engine in [NodeBound::Exact, NodeBound::Sdp] {
            let cfg = BnbConfig { initial_incumbent: Some(exact.optimal_support.clone()), ..plain(engine) };
            let r = solve(&inst, 2, &cfg).unwrap();
            if r.root_lower_bound >= exact.psi - 1e-9 * (1.0 + inst.y_norm_sq()) {
                assert_eq!(r.nodes_visited, 1, "{engine:?}");
            }
            assert_eq!(r.best_objective, exact.psi);
        }
        let cfg = BnbConfig { initial_incumbent: Some(exact.optimal_support.clone()), ..plain(NodeBound::Exact) };
        assert_eq!(solve(&inst, 2, &cfg).unwrap().nodes_visited, 1);
    }

    #[test]
    fn unpruned_tree_size() {
        let inst = gaussian(10, 20, 2, 1);
        let r = solve(&inst, 2, &plain(NodeBound::None)).unwrap();
        // include/exclude tree over 20 indices with exactly two picks
        assert_eq!(r.nodes_visited, 379);
        assert_eq!(r.leaves_evaluated, 190);
        assert!(r.nodes_visited < permutations(20, 2) as u64);
    }

    #[test]
    fn matches_enumeration_for_all_engines() {
        for seed in 0..12 {
            let p = 8 + seed as usize % 5;
            let k = 2 + seed as usize % 3;
            let inst = gaussian(p / 2, p, k, 70 + seed);
            let exact = psi_exact(&inst, k, None).unwrap();
            let mut nodes_none = 0;
            for engine in [NodeBound::None, NodeBound::Exact, NodeBound::Sdp] {
                for order in [SearchOrder::Dfs, SearchOrder::BestFirst] {
                    let cfg = BnbConfig { search_order: order, ..BnbConfig::new(engine) };
                    let r = solve(&inst, k, &cfg).unwrap();
                    assert!(r.optimality_proved);
                    assert!(
                        (r.best_objective - exact.psi).abs() <= 1e-9 * exact.psi.max(1e-300),
                        "seed {seed} {engine:?} {order:?}: {} vs {}",
                        r.best_objective,
                        exact.psi
                    );
                    assert!(r.root_lower_bound <= r.best_objective + 1e-12);
                    if engine == NodeBound::None && order == SearchOrder::Dfs {
                        nodes_none = r.nodes_visited;
                    } else if order == SearchOrder::Dfs {
                        assert!(r.nodes_visited <= nodes_none);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_accounting_and_monotone_incumbent() {
        let inst = gaussian(5, 10, 3, 8);
        let (r, trace) = solve_with_trace(&inst, 3, &plain(NodeBound::Sdp)).unwrap();
        assert_eq!(trace.len() as u64, r.nodes_visited);
        assert!(trace.windows(2).all(|w| w[1].incumbent <= w[0].incumbent));
        let fathoms = trace.iter().filter(|e| e.action == NodeAction::Fathom).count() as u64;
        assert_eq!(fathoms, r.nodes_fathomed);
        let leaves = trace.iter().filter(|e| e.action == NodeAction::Leaf).count() as u64;
        assert_eq!(leaves, r.leaves_evaluated);
        for e in &trace {
            assert!(e.forced_in.is_disjoint(&e.forced_out) && e.forced_in.len() <= 3);
        }
    }

    #[test]
    fn trace_replays() {
        // each fathom decision is reproduced by recomputing the node bound
        let inst = gaussian(4, 8, 2, 21);
        let cfg = plain(NodeBound::Exact);
        let (_, trace) = solve_with_trace(&inst, 2, &cfg).unwrap();
        let tol = 1e-9 * (1.0 + inst.y_norm_sq());
        let mut incumbent = f64::INFINITY;
        for e in &trace {
            if e.action == NodeAction::Fathom {
                let restricted = crate::bruteforce::psi_exact_restricted(&inst, 2, &e.forced_in, &e.forced_out, None)
                    .unwrap()
                    .psi;
                assert!(restricted >= incumbent - tol - 1e-9 * restricted);
                assert!(e.bound >= incumbent - tol);
            }
            incumbent = e.incumbent;
        }
    }

    #[test]
    fn budget_exhaustion_reports_sound_bound() {
        for seed in 0..5 {
            let inst = gaussian(6, 12, 3, 300 + seed);
            let psi = psi_exact(&inst, 3, None).unwrap().psi;
            for engine in [NodeBound::None, NodeBound::Sdp] {
                let cfg = BnbConfig { node_budget: 7, ..plain(engine) };
                let r = solve(&inst, 3, &cfg).unwrap();
                if !r.optimality_proved {
                    assert!(r.global_lower_bound <= psi + 1e-9 * (1.0 + psi));
                    assert!(psi <= r.best_objective || !r.best_objective.is_finite());
                    assert_eq!(r.nodes_visited, 7);
                }
            }
        }
        let inst = gaussian(6, 12, 3, 1);
        assert!(solve(&inst, 3, &BnbConfig { node_budget: 0, ..BnbConfig::default() }).is_err());
    }

    #[test]
    fn node_heuristic_keeps_exactness() {
        let inst = gaussian(6, 11, 3, 17);
        let psi = psi_exact(&inst, 3, None).unwrap().psi;
        let cfg = BnbConfig { heuristic_every_n_nodes: 3, ..plain(NodeBound::Sdp) };
        let r = solve(&inst, 3, &cfg).unwrap();
        assert!((r.best_objective - psi).abs() <= 1e-9 * psi);
    }
}
