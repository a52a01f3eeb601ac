//! Policy tree in which every trace changes action at most once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::mix_key;
use crate::world::SemanticAction;

pub const DEFAULT_HEIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("action set is empty")]
    EmptyActionSet,
    #[error("tree height must be at least 1")]
    ZeroHeight,
    #[error("ongoing action {0} is not in the action set")]
    UnknownOngoing(SemanticAction),
}

/// Ordered ego actions spanning the planning horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySequence {
    pub actions: Vec<SemanticAction>,
}

impl PolicySequence {
    pub fn new(actions: Vec<SemanticAction>) -> Self {
        Self { actions }
    }

    pub fn total_horizon(&self) -> f64 {
        self.actions.iter().map(|a| a.duration).sum()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Start time of every node.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.actions
            .iter()
            .map(|a| {
                let start = t;
                t += a.duration;
                start
            })
            .collect()
    }

    /// Number of actions that differ from the first one's behavior.
    pub fn changes(&self) -> usize {
        self.actions
            .windows(2)
            .filter(|w| !w[0].same_behavior(&w[1]))
            .count()
    }

    /// Behaviors only, for comparisons that ignore durations.
    pub fn behaviors(&self) -> Vec<(crate::world::Lateral, crate::world::Longitudinal)> {
        self.actions.iter().map(|a| a.key()).collect()
    }

    /// Stable digest of the sequence content.
    pub fn content_hash(&self) -> u64 {
        let key: Vec<u64> = self
            .actions
            .iter()
            .flat_map(|a| {
                [
                    (a.lateral as u64) << 8 | a.longitudinal as u64,
                    a.duration.to_bits(),
                ]
            })
            .collect();
        mix_key(0x5eed, &key)
    }

    pub fn label(&self) -> String {
        self.actions
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Node positions whose behavior pair differs; extra nodes count as
/// differences.
pub fn action_distance(a: &PolicySequence, b: &PolicySequence) -> usize {
    let common = a
        .actions
        .iter()
        .zip(&b.actions)
        .filter(|(x, y)| !x.same_behavior(y))
        .count();
    common + a.len().abs_diff(b.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub action: usize,
    pub depth: usize,
    pub changed: bool,
    pub children: Vec<usize>,
}

/// Tree rooted at the ongoing action. Action indices refer to `actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcpTree {
    pub root: SemanticAction,
    pub height: usize,
    pub actions: Vec<SemanticAction>,
    pub nodes: Vec<TreeNode>,
    /// Leaves removed by `prune`, as traces of action indices.
    pub pruned: Vec<Vec<usize>>,
}

/// Leaf count before pruning.
pub fn expected_leaf_count(actions: usize, height: usize) -> usize {
    if height <= 1 {
        return 1;
    }
    (actions - 1) * (height - 2) + actions
}

impl DcpTree {
    pub fn leaf_count(&self) -> usize {
        self.traces().len()
    }

    /// Root-to-leaf traces of action indices, depth first.
    pub fn traces(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut path = Vec::with_capacity(self.height);
        self.walk(0, &mut path, &mut out);
        out
    }

    fn walk(&self, node: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let n = &self.nodes[node];
        path.push(n.action);
        if n.children.is_empty() {
            if path.len() == self.height {
                out.push(path.clone());
            }
        } else {
            for &c in &n.children {
                self.walk(c, path, out);
            }
        }
        path.pop();
    }

    /// Removes every branch whose changed-to action fails `keep`. The root is
    /// never removed.
    pub fn prune(&mut self, keep: impl Fn(&SemanticAction) -> bool) {
        let before = self.traces();
        let root_action = self.nodes[0].action;
        let children = std::mem::take(&mut self.nodes[0].children);
        let kept = children
            .into_iter()
            .filter(|&c| {
                let a = self.nodes[c].action;
                a == root_action || keep(&self.actions[a])
            })
            .collect();
        self.nodes[0].children = kept;
        // branches that change below the first layer hang off the unchanged spine
        let mut spine = self.nodes[0]
            .children
            .iter()
            .copied()
            .find(|&c| !self.nodes[c].changed);
        while let Some(s) = spine {
            let children = std::mem::take(&mut self.nodes[s].children);
            let kept: Vec<usize> = children
                .into_iter()
                .filter(|&c| {
                    let a = self.nodes[c].action;
                    a == root_action || keep(&self.actions[a])
                })
                .collect();
            spine = kept.iter().copied().find(|&c| !self.nodes[c].changed);
            self.nodes[s].children = kept;
        }
        let after = self.traces();
        self.pruned
            .extend(before.into_iter().filter(|t| !after.contains(t)));
    }
}

/// Builds the tree rooted at `ongoing` over `action_set`.
pub fn update_dcp_tree(
    action_set: &[SemanticAction],
    ongoing: &SemanticAction,
    height: usize,
) -> Result<DcpTree, TreeError> {
    if action_set.is_empty() {
        return Err(TreeError::EmptyActionSet);
    }
    if height == 0 {
        return Err(TreeError::ZeroHeight);
    }
    let root = action_set
        .iter()
        .position(|a| a.same_behavior(ongoing))
        .ok_or(TreeError::UnknownOngoing(*ongoing))?;
    let mut nodes = vec![TreeNode {
        action: root,
        depth: 0,
        changed: false,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for depth in 1..height {
        let mut next = Vec::new();
        for parent in frontier {
            let (p_action, p_changed) = (nodes[parent].action, nodes[parent].changed);
            let options: Vec<usize> = if p_changed {
                vec![p_action]
            } else {
                (0..action_set.len()).collect()
            };
            for a in options {
                let id = nodes.len();
                nodes.push(TreeNode {
                    action: a,
                    depth,
                    changed: p_changed || a != p_action,
                    children: Vec::new(),
                });
                nodes[parent].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    Ok(DcpTree {
        root: *ongoing,
        height,
        actions: action_set.to_vec(),
        nodes,
        pruned: Vec::new(),
    })
}

/// Per-node durations: the root keeps `root_duration`, inner nodes
/// `node_duration`, and the last node absorbs the rest of `horizon`.
pub fn node_durations(height: usize, root_duration: f64, node_duration: f64, horizon: f64) -> Vec<f64> {
    let mut d = vec![node_duration; height];
    d[0] = root_duration;
    if height > 1 {
        let used: f64 = d[..height - 1].iter().sum();
        d[height - 1] = horizon - used;
    } else {
        d[0] = horizon;
    }
    d
}

/// One sequence per leaf, depth-first.
pub fn extract_policy_sequences(
    tree: &DcpTree,
    root_duration: f64,
    node_duration: f64,
    horizon: f64,
) -> Vec<PolicySequence> {
    let durations = node_durations(tree.height, root_duration, node_duration, horizon);
    tree.traces()
        .into_iter()
        .map(|t| {
            PolicySequence::new(
                t.iter()
                    .zip(&durations)
                    .enumerate()
                    .map(|(k, (&a, &d))| {
                        let base = if k == 0 { tree.root } else { tree.actions[a] };
                        base.with_duration(d)
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Constant sequences, one per action.
pub fn mpdm_sequences(
    action_set: &[SemanticAction],
    height: usize,
    root_duration: f64,
    node_duration: f64,
    horizon: f64,
) -> Vec<PolicySequence> {
    let durations = node_durations(height.max(1), root_duration, node_duration, horizon);
    action_set
        .iter()
        .map(|a| PolicySequence::new(durations.iter().map(|&d| a.with_duration(d)).collect()))
        .collect()
}

/// Ongoing action after one replanning step.
pub fn advance_ongoing(best: &PolicySequence, replan_dt: f64, node_duration: f64) -> SemanticAction {
    let first = best.actions[0];
    let remaining = first.duration - replan_dt;
    if remaining > 1e-9 {
        return first.with_duration(remaining);
    }
    best.actions
        .get(1)
        .copied()
        .unwrap_or(first)
        .with_duration(node_duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Lateral, Longitudinal};
    use proptest::prelude::*;

    fn toy_set(n: usize) -> Vec<SemanticAction> {
        SemanticAction::full_set(2.0).into_iter().take(n).collect()
    }

    /// Every length-`h` continuation of `root` with at most one change.
    fn brute_force(n: usize, h: usize, root: usize) -> Vec<Vec<usize>> {
        let mut all = vec![vec![root]];
        for _ in 1..h {
            all = all
                .into_iter()
                .flat_map(|t| (0..n).map(move |a| [t.clone(), vec![a]].concat()))
                .collect();
        }
        all.retain(|t| t.windows(2).filter(|w| w[0] != w[1]).count() <= 1);
        all
    }

    #[test]
    fn three_actions_height_three() {
        let set = toy_set(3);
        let tree = update_dcp_tree(&set, &set[0], 3).unwrap();
        assert_eq!(
            tree.traces(),
            vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 0, 2], vec![0, 1, 1], vec![0, 2, 2]]
        );
    }

    #[test]
    fn height_two_gives_one_trace_per_action() {
        for n in 1..=9 {
            let set = toy_set(n);
            let tree = update_dcp_tree(&set, &set[n - 1], 2).unwrap();
            assert_eq!(tree.leaf_count(), n);
        }
    }

    #[test]
    fn full_set_gives_twenty_five() {
        let set = SemanticAction::full_set(2.0);
        let tree = update_dcp_tree(&set, &set[0], 4).unwrap();
        assert_eq!(tree.leaf_count(), 25);
        let mut bf = brute_force(9, 4, 0);
        let mut got = tree.traces();
        bf.sort();
        got.sort();
        assert_eq!(got, bf);
    }

    #[test]
    fn empty_set_and_unknown_root_fail() {
        let set = toy_set(3);
        assert_eq!(
            update_dcp_tree(&[], &set[0], 3).unwrap_err(),
            TreeError::EmptyActionSet
        );
        let other = SemanticAction::new(Lateral::ChangeRight, Longitudinal::Decelerate, 2.0);
        assert!(matches!(
            update_dcp_tree(&set, &other, 3),
            Err(TreeError::UnknownOngoing(_))
        ));
    }

    #[test]
    fn sequences_follow_traces_and_span_horizon() {
        let set = SemanticAction::full_set(2.0);
        let tree = update_dcp_tree(&set, &set[4].with_duration(1.3), 4).unwrap();
        let seqs = extract_policy_sequences(&tree, 1.3, 2.0, 8.0);
        assert_eq!(seqs.len(), tree.leaf_count());
        for s in &seqs {
            assert!(s.changes() <= 1);
            assert!((s.total_horizon() - 8.0).abs() < 1e-12);
            assert_eq!(s.actions[0].duration, 1.3);
            assert!(s.actions[0].same_behavior(&set[4]));
        }
        let single = update_dcp_tree(&set[..1], &set[0], 4).unwrap();
        assert_eq!(extract_policy_sequences(&single, 2.0, 2.0, 8.0).len(), 1);
    }

    #[test]
    fn mpdm_sequences_are_tree_leaves() {
        let set = SemanticAction::full_set(2.0);
        let consts = mpdm_sequences(&set, 4, 2.0, 2.0, 8.0);
        assert_eq!(consts.len(), 9);
        for c in &consts {
            assert!((c.total_horizon() - 8.0).abs() < 1e-12);
            let tree = update_dcp_tree(&set, &c.actions[0], 4).unwrap();
            let seqs = extract_policy_sequences(&tree, 2.0, 2.0, 8.0);
            assert!(seqs.contains(c));
        }
    }

    #[test]
    fn pruning_removes_changed_branches_only() {
        let set = SemanticAction::full_set(2.0);
        let mut tree = update_dcp_tree(&set, &set[0], 4).unwrap();
        tree.prune(|a| a.lateral != Lateral::ChangeRight);
        assert_eq!(tree.leaf_count(), 25 - 3 * 3);
        assert_eq!(tree.pruned.len(), 9);
        for t in tree.traces() {
            assert!(t.iter().all(|&a| set[a].lateral != Lateral::ChangeRight));
        }
    }

    #[test]
    fn ongoing_bookkeeping() {
        let lk = SemanticAction::new(Lateral::LaneKeep, Longitudinal::Maintain, 2.0);
        let lcl = SemanticAction::new(Lateral::ChangeLeft, Longitudinal::Maintain, 2.0);
        let best = PolicySequence::new(vec![lk, lcl, lcl, lcl]);
        let next = advance_ongoing(&best, 0.05, 2.0);
        assert!(next.same_behavior(&lk));
        assert!((next.duration - 1.95).abs() < 1e-12);

        let nearly = PolicySequence::new(vec![lk.with_duration(0.05), lcl, lcl, lcl]);
        assert_eq!(advance_ongoing(&nearly, 0.05, 2.0), lcl);

        let mut ongoing = lk;
        let mut switches = 0;
        for _ in 0..40 {
            let seq = PolicySequence::new(vec![ongoing, lcl, lcl, lcl]);
            let next = advance_ongoing(&seq, 0.05, 2.0);
            if !next.same_behavior(&ongoing) {
                switches += 1;
            }
            ongoing = next;
        }
        assert_eq!(switches, 1);
        assert_eq!(ongoing, lcl);
    }

    #[test]
    fn action_distance_counts_differing_nodes() {
        let set = SemanticAction::full_set(2.0);
        let a = PolicySequence::new(vec![set[0], set[0], set[1], set[1]]);
        let b = PolicySequence::new(vec![set[0], set[0], set[0], set[0]]);
        assert_eq!(action_distance(&a, &b), 2);
        assert_eq!(action_distance(&a, &a), 0);
    }

    proptest! {
        #[test]
        fn leaf_count_matches_formula_and_brute_force(n in 1usize..=9, h in 2usize..=6, r in 0usize..9) {
            let root = r % n;
            let set = toy_set(n);
            let tree = update_dcp_tree(&set, &set[root], h).unwrap();
            prop_assert_eq!(tree.leaf_count(), expected_leaf_count(n, h));
            let mut got = tree.traces();
            let mut bf = brute_force(n, h, root);
            got.sort();
            bf.sort();
            prop_assert_eq!(got, bf);
        }

        #[test]
        fn no_switch_before_duration(k in 0usize..39) {
            let lk = SemanticAction::new(Lateral::LaneKeep, Longitudinal::Maintain, 2.0);
            let lcl = SemanticAction::new(Lateral::ChangeLeft, Longitudinal::Maintain, 2.0);
            let mut ongoing = lk;
            for _ in 0..k {
                ongoing = advance_ongoing(&PolicySequence::new(vec![ongoing, lcl]), 0.05, 2.0);
                prop_assert!(ongoing.same_behavior(&lk));
            }
        }
    }
}
