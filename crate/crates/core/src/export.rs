//! Graphviz and JSON renderings of a process-set tree.
//!
//! Following a path from the root to a terminal node spells out one full
//! trajectory. The root is filled red, terminal (singleton) nodes yellow,
//! and every other node white. Each node shows its members, its span, the
//! span's tokens (long spans are cut with "...") and its step reward.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, ProcessNode, ProcessTree};
use crate::types::Group;

/// Spans longer than this are truncated in DOT labels.
pub const MAX_LABEL_TOKENS: usize = 12;

const ROOT_FILL: &str = "#F8CECC";
const TERMINAL_FILL: &str = "#FFF2CC";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!("unknown export format {other:?} (dot|json)"))),
        }
    }
}

pub fn export_tree(tree: &ProcessTree, group: &Group, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Dot => Ok(to_dot(tree, group)),
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&to_doc(tree, group))?;
            s.push('\n');
            Ok(s)
        }
    }
}

fn span_tokens<'a>(node: &ProcessNode, group: &'a Group) -> &'a [u32] {
    &group.trajectories()[node.members[0]].tokens[node.span_start..node.span_end]
}

fn members_label(members: &[usize]) -> String {
    let inner: Vec<String> = members.iter().map(usize::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(tree: &ProcessTree, group: &Group) -> String {
    let mut out = String::new();
    out.push_str("digraph process_tree {\n");
    let _ = writeln!(out, "  label=\"{}\";", escape(group.query_id()));
    out.push_str("  node [shape=box, style=\"rounded,filled\", fillcolor=\"white\", fontname=\"monospace\"];\n");
    for node in tree.nodes() {
        let toks = span_tokens(node, group);
        let mut text: Vec<String> = toks.iter().take(MAX_LABEL_TOKENS).map(u32::to_string).collect();
        if toks.len() > MAX_LABEL_TOKENS {
            text.push("...".to_string());
        }
        let mut label = format!(
            "{}\\n[{}, {})",
            members_label(&node.members),
            node.span_start,
            node.span_end
        );
        if !text.is_empty() {
            let _ = write!(label, " {}", text.join(" "));
        }
        if let Some(r) = node.step_reward {
            let _ = write!(label, "\\nR={r}");
        }
        let fill = if node.is_root() {
            format!(", fillcolor=\"{ROOT_FILL}\"")
        } else if node.is_leaf() {
            format!(", fillcolor=\"{TERMINAL_FILL}\"")
        } else {
            String::new()
        };
        let _ = writeln!(out, "  n{} [label=\"{}\"{}];", node.id.0, label, fill);
    }
    for node in tree.nodes() {
        for child in &node.children {
            let _ = writeln!(out, "  n{} -> n{};", node.id.0, child.0);
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub query_id: String,
    pub k: usize,
    pub root: NodeDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: NodeId,
    pub members: Vec<usize>,
    pub span: [usize; 2],
    pub terminal: bool,
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeDoc>,
}

impl TreeDoc {
    /// Nodes in depth-first order.
    pub fn flatten(&self) -> Vec<&NodeDoc> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

pub fn to_doc(tree: &ProcessTree, group: &Group) -> TreeDoc {
    fn node_doc(tree: &ProcessTree, group: &Group, id: NodeId) -> NodeDoc {
        let node = tree.node(id);
        NodeDoc {
            id,
            members: node.members.clone(),
            span: [node.span_start, node.span_end],
            terminal: node.is_leaf(),
            tokens: span_tokens(node, group).to_vec(),
            step_reward: node.step_reward,
            children: node.children.iter().map(|&c| node_doc(tree, group, c)).collect(),
        }
    }
    TreeDoc {
        query_id: group.query_id().to_string(),
        k: tree.k(),
        root: node_doc(tree, group, tree.root().id),
    }
}

pub fn parse_tree_json(s: &str) -> Result<TreeDoc> {
    Ok(serde_json::from_str(s)?)
}
