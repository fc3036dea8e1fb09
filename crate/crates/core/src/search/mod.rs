//! Monte Carlo Tree Search with confidence-bound selection that switches
//! from optimistic (UCB) to pessimistic (LCB) scoring deep in the tree or
//! once a node is well explored.

mod bandit;
mod traffic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::SimRng;

pub use bandit::{Arm, BanditEnv};
pub use traffic::{TrafficEnv, TrafficState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutPolicy {
    UniformRandom,
    DefaultCoast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    /// Every node keeps the world after its edge.
    PerNode,
    /// Only the root is kept; node states are rebuilt by replaying actions.
    ReplayFromRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Hybrid,
    UcbOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub exploration_constant: f64,
    pub max_iterations: u32,
    /// Tree depth limit in decisions; also the episode horizon in decisions.
    pub max_depth: u32,
    pub depth_ratio_threshold: f64,
    pub min_visit_threshold: u32,
    pub rollout_policy: RolloutPolicy,
    /// Simulation steps per tree edge.
    pub decision_interval: u32,
    pub snapshot_mode: SnapshotMode,
    pub strategy: SelectionStrategy,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            exploration_constant: 1.414,
            max_iterations: 2000,
            max_depth: 16,
            depth_ratio_threshold: 0.5,
            min_visit_threshold: 10,
            rollout_policy: RolloutPolicy::UniformRandom,
            decision_interval: 5,
            snapshot_mode: SnapshotMode::PerNode,
            strategy: SelectionStrategy::Hybrid,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if !(self.exploration_constant.is_finite() && self.exploration_constant >= 0.0) {
            return bad("exploration_constant must be finite and >= 0");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if !(self.depth_ratio_threshold > 0.0 && self.depth_ratio_threshold <= 1.0) {
            return bad("depth_ratio_threshold must be in (0, 1]");
        }
        if self.min_visit_threshold == 0 {
            return bad("min_visit_threshold must be >= 1");
        }
        if self.decision_interval == 0 {
            return bad("decision_interval must be >= 1");
        }
        Ok(())
    }
}

/// +∞ for an unvisited child.
pub fn ucb_score(parent_n: u64, child_n: u64, child_q: f64, c: f64) -> f64 {
    if child_n == 0 {
        return f64::INFINITY;
    }
    child_q + bonus(parent_n, child_n, c)
}

/// −∞ for an unvisited child.
pub fn lcb_score(parent_n: u64, child_n: u64, child_q: f64, c: f64) -> f64 {
    if child_n == 0 {
        return f64::NEG_INFINITY;
    }
    child_q - bonus(parent_n, child_n, c)
}

fn bonus(parent_n: u64, child_n: u64, c: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    c * ((parent_n.max(1) as f64).ln() / child_n as f64).sqrt()
}

/// Result of applying one tree action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Discounted reward collected along the edge.
    pub reward: f64,
    /// Discount applied to whatever follows the edge.
    pub discount: f64,
    pub terminal: bool,
    /// The edge ended in a failure of the system under test.
    pub failure: bool,
}

pub trait Environment {
    type State: Clone;

    fn num_actions(&self) -> usize;

    fn is_terminal(&self, state: &Self::State) -> bool;

    fn apply(&self, state: &mut Self::State, action: usize, rng: &mut SimRng) -> Edge;

    /// Re-applies an action whose edge is already in the tree, to rebuild
    /// a state. Must reach the same state as `apply`.
    fn replay(&self, state: &mut Self::State, action: usize, rng: &mut SimRng) -> Edge {
        self.apply(state, action, rng)
    }

    /// Deterministic environments reuse stored node states; stochastic ones
    /// re-simulate the selected path on every iteration.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// The action a coasting rollout repeats.
    fn coast_action(&self) -> usize {
        0
    }

    fn rollout_action(
        &self,
        _state: &Self::State,
        policy: RolloutPolicy,
        rng: &mut SimRng,
    ) -> usize {
        match policy {
            RolloutPolicy::UniformRandom => rng.below(self.num_actions() as u64) as usize,
            RolloutPolicy::DefaultCoast => self.coast_action(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Open,
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub action: Option<usize>,
    pub depth: u32,
    pub visits: u64,
    pub value_sum: f64,
    /// Iterations whose simulation started at this node.
    pub own_rollouts: u64,
    /// Indexed by action.
    pub children: Vec<Option<usize>>,
    pub edge_reward: f64,
    pub edge_discount: f64,
    pub status: NodeStatus,
    /// Highest return seen from this node and the actions that produced it.
    pub best: Option<(f64, Vec<usize>)>,
}

impl TreeNode {
    fn new(parent: Option<usize>, action: Option<usize>, depth: u32, num_actions: usize) -> Self {
        Self {
            parent,
            action,
            depth,
            visits: 0,
            value_sum: 0.0,
            own_rollouts: 0,
            children: vec![None; num_actions],
            edge_reward: 0.0,
            edge_discount: 1.0,
            status: NodeStatus::Open,
            best: None,
        }
    }

    pub fn q(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }

    pub fn is_fully_expanded(&self) -> bool {
        self.children.iter().all(Option::is_some)
    }

    fn first_untried(&self) -> Option<usize> {
        self.children.iter().position(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub num_actions: usize,
}

impl Tree {
    pub fn new(num_actions: usize) -> Self {
        Self {
            nodes: vec![TreeNode::new(None, None, 0, num_actions)],
            num_actions,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    /// Adds an unvisited child; test fixtures build trees with this.
    pub fn add_child(&mut self, parent: usize, action: usize) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode::new(
            Some(parent),
            Some(action),
            depth,
            self.num_actions,
        ));
        self.nodes[parent].children[action] = Some(id);
        id
    }

    pub fn node_mut(&mut self, id: usize) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    /// Actions from the root down to `id`.
    pub fn path_actions(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = id;
        while let (Some(p), Some(a)) = (self.nodes[cur].parent, self.nodes[cur].action) {
            out.push(a);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn child_scores(&self, id: usize, c: f64) -> Vec<ChildStats> {
        let node = &self.nodes[id];
        node.children
            .iter()
            .enumerate()
            .filter_map(|(a, ch)| ch.map(|ch| (a, &self.nodes[ch])))
            .map(|(action, ch)| ChildStats {
                action,
                visits: ch.visits,
                q: ch.q(),
                ucb: ucb_score(node.visits, ch.visits, ch.q(), c),
                lcb: lcb_score(node.visits, ch.visits, ch.q(), c),
            })
            .collect()
    }

    pub fn export(&self, cfg: &SearchConfig) -> TreeExport {
        let c = cfg.exploration_constant;
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let parent_n = n.parent.map_or(n.visits, |p| self.nodes[p].visits);
                NodeExport {
                    id,
                    parent: n.parent,
                    depth: n.depth,
                    actions: self.path_actions(id),
                    visits: n.visits,
                    q: n.q(),
                    ucb: n
                        .parent
                        .map(|_| ucb_score(parent_n, n.visits, n.q(), c))
                        .filter(|x| x.is_finite()),
                    lcb: n
                        .parent
                        .map(|_| lcb_score(parent_n, n.visits, n.q(), c))
                        .filter(|x| x.is_finite()),
                    own_rollouts: n.own_rollouts,
                    children: n.children.iter().flatten().copied().collect(),
                    terminal_flag: n.status,
                }
            })
            .collect();
        TreeExport {
            num_actions: self.num_actions,
            nodes,
        }
    }
}

/// Whether selection and extraction at `id` use the lower bound.
pub fn use_lcb(tree: &Tree, id: usize, cfg: &SearchConfig) -> bool {
    if cfg.strategy == SelectionStrategy::UcbOnly {
        return false;
    }
    let node = tree.node(id);
    if node.depth as f64 / cfg.max_depth as f64 > cfg.depth_ratio_threshold {
        return true;
    }
    let n_min = cfg.min_visit_threshold as u64;
    node.visits >= n_min
        && node.is_fully_expanded()
        && node
            .children
            .iter()
            .flatten()
            .all(|ch| tree.node(*ch).visits >= n_min)
}

/// Index of the largest score; ties go to the earliest candidate.
fn argmax(candidates: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, s) in candidates {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((a, s));
        }
    }
    best.map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildStats {
    pub action: usize,
    pub visits: u64,
    pub q: f64,
    pub ucb: f64,
    pub lcb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    Lcb,
    MostVisited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionStats {
    pub depth: u32,
    pub rule: ExtractionRule,
    pub chosen: usize,
    pub children: Vec<ChildStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Completed,
    RootTerminal,
    /// No expansion happened; the result is a single forced action.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Extracted tree path followed by the best stored continuation.
    pub actions: Vec<usize>,
    /// How many leading entries of `actions` come from the tree.
    pub tree_actions: usize,
    pub decisions: Vec<DecisionStats>,
    /// Per action, how often selection or expansion took it.
    pub selection_counts: Vec<u64>,
    /// Edges, in the tree or in rollouts, that ended in a failure.
    pub failures_found: u64,
    pub iterations: u32,
    pub status: SearchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: u32,
    pub actions: Vec<usize>,
    pub visits: u64,
    pub q: f64,
    pub ucb: Option<f64>,
    pub lcb: Option<f64>,
    pub own_rollouts: u64,
    pub children: Vec<usize>,
    pub terminal_flag: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub num_actions: usize,
    pub nodes: Vec<NodeExport>,
}

impl TreeExport {
    /// Checks that each node's count is its children's counts plus its own
    /// rollouts, and that the root count equals `iterations`.
    pub fn check_counts(&self, iterations: u64) -> Result<(), String> {
        let root = self.nodes.first().ok_or("empty tree")?;
        if root.visits != iterations {
            return Err(format!(
                "root visits {} != iterations {iterations}",
                root.visits
            ));
        }
        for n in &self.nodes {
            let kids: u64 = n.children.iter().map(|c| self.nodes[*c].visits).sum();
            if n.visits != kids + n.own_rollouts {
                return Err(format!(
                    "node {}: visits {} != children {} + own rollouts {}",
                    n.id, n.visits, kids, n.own_rollouts
                ));
            }
        }
        Ok(())
    }
}

pub struct Search<'e, E: Environment> {
    env: &'e E,
    cfg: SearchConfig,
    tree: Tree,
    states: Vec<Option<E::State>>,
    root_state: E::State,
    rng: SimRng,
    selection_counts: Vec<u64>,
    failures: u64,
    iterations: u32,
}

impl<'e, E: Environment> Search<'e, E> {
    pub fn new(env: &'e E, root: E::State, cfg: SearchConfig, seed: u64) -> Self {
        let n = env.num_actions();
        let mut tree = Tree::new(n);
        if env.is_terminal(&root) {
            tree.nodes[0].status = NodeStatus::Terminal;
        }
        Self {
            env,
            cfg,
            tree,
            states: vec![None],
            root_state: root,
            rng: SimRng::new(seed),
            selection_counts: vec![0; n],
            failures: 0,
            iterations: 0,
        }
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    fn state_of(&self, id: usize) -> E::State {
        if id == 0 {
            return self.root_state.clone();
        }
        if let Some(s) = &self.states[id] {
            return s.clone();
        }
        // Replay; a private generator keeps the search stream untouched.
        let mut s = self.root_state.clone();
        let mut rng = SimRng::new(0);
        for a in self.tree.path_actions(id) {
            self.env.replay(&mut s, a, &mut rng);
        }
        s
    }

    fn select_child(&self, id: usize) -> usize {
        let node = self.tree.node(id);
        let c = self.cfg.exploration_constant;
        let lcb = use_lcb(&self.tree, id, &self.cfg);
        let scored = node.children.iter().enumerate().filter_map(|(a, ch)| {
            ch.map(|ch| {
                let ch = self.tree.node(ch);
                let s = if lcb {
                    lcb_score(node.visits, ch.visits, ch.q(), c)
                } else {
                    ucb_score(node.visits, ch.visits, ch.q(), c)
                };
                (a, s)
            })
        });
        argmax(scored).expect("fully expanded node has children")
    }

    /// One selection, expansion, simulation and backpropagation pass.
    pub fn iterate(&mut self) {
        self.iterations += 1;
        let open_loop = !self.env.is_deterministic();
        let mut walk = open_loop.then(|| self.root_state.clone());
        // (node, edge reward, edge discount) for every node below the root.
        let mut path: Vec<(usize, f64, f64)> = Vec::new();
        let mut id = 0;
        loop {
            let node = self.tree.node(id);
            if node.status == NodeStatus::Terminal
                || node.depth >= self.cfg.max_depth
                || !node.is_fully_expanded()
            {
                break;
            }
            let a = self.select_child(id);
            self.selection_counts[a] += 1;
            id = node.children[a].expect("selected child exists");
            let child = self.tree.node(id);
            let (mut r, mut g) = (child.edge_reward, child.edge_discount);
            if let Some(state) = walk.as_mut() {
                let edge = self.env.apply(state, a, &mut self.rng);
                self.failures += edge.failure as u64;
                (r, g) = (edge.reward, edge.discount);
            }
            path.push((id, r, g));
        }

        let node = self.tree.node(id);
        let expandable = node.status == NodeStatus::Open && node.depth < self.cfg.max_depth;
        let untried = node.first_untried().filter(|_| expandable);
        let mut state = match walk {
            Some(state) => state,
            None => self.state_of(id),
        };
        let leaf = match untried {
            Some(a) => {
                let edge = self.env.apply(&mut state, a, &mut self.rng);
                self.failures += edge.failure as u64;
                self.selection_counts[a] += 1;
                let child = self.tree.add_child(id, a);
                let n = self.tree.node_mut(child);
                n.edge_reward = edge.reward;
                n.edge_discount = edge.discount;
                if edge.terminal || self.env.is_terminal(&state) {
                    n.status = NodeStatus::Terminal;
                }
                let keep = self.cfg.snapshot_mode == SnapshotMode::PerNode && !open_loop;
                self.states.push(keep.then(|| state.clone()));
                path.push((child, edge.reward, edge.discount));
                child
            }
            None => id,
        };

        // Simulation from the leaf.
        let depth_left = self
            .cfg
            .max_depth
            .saturating_sub(self.tree.node(leaf).depth);
        let mut ret = 0.0;
        let mut disc = 1.0;
        let mut tail = Vec::new();
        if self.tree.node(leaf).status == NodeStatus::Open {
            for _ in 0..depth_left {
                if self.env.is_terminal(&state) {
                    break;
                }
                let a = self
                    .env
                    .rollout_action(&state, self.cfg.rollout_policy, &mut self.rng);
                let edge = self.env.apply(&mut state, a, &mut self.rng);
                self.failures += edge.failure as u64;
                tail.push(a);
                ret += disc * edge.reward;
                disc *= edge.discount;
                if edge.terminal {
                    break;
                }
            }
        }
        self.tree.node_mut(leaf).own_rollouts += 1;

        // Backpropagation: each node gets the return from its own edge on.
        let mut value = ret;
        let mut suffix = tail;
        for &(n, r, g) in path.iter().rev() {
            value = r + g * value;
            self.credit(n, value, &suffix);
            suffix.insert(
                0,
                self.tree
                    .node(n)
                    .action
                    .expect("non-root node has an action"),
            );
        }
        self.credit(0, value, &suffix);
    }

    fn credit(&mut self, id: usize, value: f64, suffix: &[usize]) {
        let node = self.tree.node_mut(id);
        node.visits += 1;
        node.value_sum += value;
        if node.best.as_ref().is_none_or(|(v, _)| value > *v) {
            node.best = Some((value, suffix.to_vec()));
        }
    }

    pub fn run(mut self) -> (SearchResult, Tree) {
        if self.tree.root().status == NodeStatus::Terminal {
            let result = SearchResult {
                actions: Vec::new(),
                tree_actions: 0,
                decisions: Vec::new(),
                selection_counts: self.selection_counts,
                failures_found: 0,
                iterations: 0,
                status: SearchStatus::RootTerminal,
            };
            return (result, self.tree);
        }
        for _ in 0..self.cfg.max_iterations {
            self.iterate();
        }
        let (actions, tree_actions, decisions) = extract(&self.tree, &self.cfg);
        let status = if self.tree.root().children.iter().all(Option::is_none) {
            SearchStatus::Degenerate
        } else {
            SearchStatus::Completed
        };
        let actions = if status == SearchStatus::Degenerate {
            vec![0]
        } else {
            actions
        };
        let result = SearchResult {
            tree_actions: tree_actions.min(actions.len()),
            actions,
            decisions,
            selection_counts: self.selection_counts,
            failures_found: self.failures,
            iterations: self.iterations,
            status,
        };
        (result, self.tree)
    }
}

/// Walks down from the root choosing the best child by LCB where the
/// switch condition holds and by visit count elsewhere, then appends the
/// best continuation recorded at the last node.
pub fn extract(tree: &Tree, cfg: &SearchConfig) -> (Vec<usize>, usize, Vec<DecisionStats>) {
    let mut actions = Vec::new();
    let mut decisions = Vec::new();
    let mut id = 0;
    loop {
        let node = tree.node(id);
        let children = tree.child_scores(id, cfg.exploration_constant);
        let visited: Vec<&ChildStats> = children.iter().filter(|c| c.visits > 0).collect();
        if visited.is_empty() {
            break;
        }
        let rule = if use_lcb(tree, id, cfg) {
            ExtractionRule::Lcb
        } else {
            ExtractionRule::MostVisited
        };
        let chosen = match rule {
            ExtractionRule::Lcb => argmax(visited.iter().map(|c| (c.action, c.lcb))),
            ExtractionRule::MostVisited => {
                argmax(visited.iter().map(|c| (c.action, c.visits as f64)))
            }
        }
        .expect("visited children exist");
        decisions.push(DecisionStats {
            depth: node.depth,
            rule,
            chosen,
            children,
        });
        actions.push(chosen);
        id = node.children[chosen].expect("chosen child exists");
    }
    let tree_actions = actions.len();
    if let Some((_, tail)) = &tree.node(id).best {
        actions.extend(tail);
    }
    (actions, tree_actions, decisions)
}

/// Runs a full search from `root`.
pub fn run_search<E: Environment>(
    env: &E,
    root: E::State,
    cfg: &SearchConfig,
    seed: u64,
) -> (SearchResult, Tree) {
    Search::new(env, root, *cfg, seed).run()
}
