//! Process-set trees.
//!
//! Every node is a maximal set of trajectories sharing a token prefix. A
//! node's span `[span_start, span_end)` is the stretch of tokens its members
//! share beyond what the parent already covers: `span_end` is the length of
//! the members' longest common prefix and `span_start` is the parent's
//! `span_end` (0 for the root).
//!
//! Construction is radix grouping: starting from the whole group, extend the
//! common prefix as far as it goes, then split the members by the token at
//! the divergence point. Members that end exactly at the divergence point
//! become their own (empty-span) leaves. Each token is scanned once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::step;
use crate::types::{Group, PerToken};

/// Index of a node in [`ProcessTree::nodes`]; ids follow depth-first
/// construction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNode {
    pub id: NodeId,
    /// Trajectory indices, ascending.
    pub members: Vec<usize>,
    pub span_start: usize,
    pub span_end: usize,
    pub parent: Option<NodeId>,
    /// Ordered by smallest member index.
    pub children: Vec<NodeId>,
    pub step_reward: Option<f64>,
}

impl ProcessNode {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn span_len(&self) -> usize {
        self.span_end - self.span_start
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn covers(&self, t: usize) -> bool {
        self.span_start <= t && t < self.span_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTree {
    nodes: Vec<ProcessNode>,
    leaf_of: Vec<NodeId>,
}

pub fn build_process_tree(group: &Group) -> ProcessTree {
    ProcessTree::build(group)
}

impl ProcessTree {
    pub fn build(group: &Group) -> Self {
        let mut tree = ProcessTree {
            nodes: Vec::new(),
            leaf_of: vec![NodeId(0); group.k()],
        };
        let all: Vec<usize> = (0..group.k()).collect();
        tree.grow(group, all, 0, None);
        for node in &mut tree.nodes {
            node.step_reward = Some(step::step_reward(node, group));
        }
        tree
    }

    fn grow(
        &mut self,
        group: &Group,
        members: Vec<usize>,
        start: usize,
        parent: Option<NodeId>,
    ) -> NodeId {
        let seqs = group.trajectories();
        let end = if let [only] = members[..] {
            seqs[only].len()
        } else {
            let first = &seqs[members[0]].tokens;
            let mut end = start;
            while members.iter().all(|&m| {
                let toks = &seqs[m].tokens;
                toks.len() > end && end < first.len() && toks[end] == first[end]
            }) {
                end += 1;
            }
            end
        };

        let id = NodeId(self.nodes.len());
        self.nodes.push(ProcessNode {
            id,
            members: members.clone(),
            span_start: start,
            span_end: end,
            parent,
            children: Vec::new(),
            step_reward: None,
        });

        if members.len() == 1 {
            self.leaf_of[members[0]] = id;
            return id;
        }

        // Split by the token at the divergence point; exhausted members each
        // form their own class. Classes keep first-seen (= min member) order.
        let mut classes: Vec<Vec<usize>> = Vec::new();
        let mut by_token: BTreeMap<u32, usize> = BTreeMap::new();
        for &m in &members {
            match seqs[m].tokens.get(end) {
                None => classes.push(vec![m]),
                Some(&tok) => {
                    let slot = *by_token.entry(tok).or_insert_with(|| {
                        classes.push(Vec::new());
                        classes.len() - 1
                    });
                    classes[slot].push(m);
                }
            }
        }

        let children: Vec<NodeId> = classes
            .into_iter()
            .map(|class| self.grow(group, class, end, Some(id)))
            .collect();
        self.nodes[id.0].children = children;
        id
    }

    pub fn root(&self) -> &ProcessNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &ProcessNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[ProcessNode] {
        &self.nodes
    }

    pub fn k(&self) -> usize {
        self.leaf_of.len()
    }

    /// Terminal node `{g_i}`.
    pub fn leaf_of(&self, i: usize) -> &ProcessNode {
        self.node(self.leaf_of[i])
    }

    /// Length of trajectory `i` as recorded by the tree.
    pub fn trajectory_len(&self, i: usize) -> usize {
        self.leaf_of(i).span_end
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Node ids from the root down to `{g_i}`.
    pub fn path(&self, i: usize) -> Vec<NodeId> {
        let mut path = Vec::new();
        let mut cur = Some(self.leaf_of[i]);
        while let Some(id) = cur {
            path.push(id);
            cur = self.node(id).parent;
        }
        path.reverse();
        path
    }

    pub fn max_len(&self) -> usize {
        (0..self.k()).map(|i| self.trajectory_len(i)).max().unwrap_or(0)
    }

    /// Maps every token `(i, t)` to the node whose span owns it.
    pub fn assign_tokens(&self) -> TokenAssignment {
        let mut owner: Vec<Vec<NodeId>> = (0..self.k())
            .map(|i| vec![NodeId(0); self.trajectory_len(i)])
            .collect();
        for node in &self.nodes {
            for &m in &node.members {
                owner[m][node.span_start..node.span_end].fill(node.id);
            }
        }
        TokenAssignment {
            owner: PerToken::from_rows(owner),
        }
    }

    /// The nodes whose spans contain position `t`; their member sets
    /// partition the trajectories longer than `t`.
    pub fn partition_at(&self, t: usize) -> Result<Vec<NodeId>> {
        let max_len = self.max_len();
        if t >= max_len {
            return Err(Error::OutOfRange { t, max_len });
        }
        Ok(self.nodes.iter().filter(|n| n.covers(t)).map(|n| n.id).collect())
    }

    /// True when the only process sets are the group itself and singletons.
    pub fn is_trivial(&self) -> bool {
        self.nodes.iter().all(|n| n.is_root() || n.size() == 1)
    }
}

pub fn assign_tokens(tree: &ProcessTree) -> TokenAssignment {
    tree.assign_tokens()
}

/// The owning node `λ^(i,t)` of every token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAssignment {
    owner: PerToken<NodeId>,
}

impl TokenAssignment {
    pub fn owner(&self, i: usize, t: usize) -> NodeId {
        self.owner[(i, t)]
    }

    pub fn owners(&self) -> &PerToken<NodeId> {
        &self.owner
    }
}
