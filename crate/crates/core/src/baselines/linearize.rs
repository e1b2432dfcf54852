use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::treebank::{Child, NodeKind, SemanticNode, SemanticTree};

/// One output symbol of the sequence-to-sequence parser.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Open { kind: NodeKind, label: String },
    Close,
    /// Copy of the input token at this position.
    Copy(usize),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Open { kind, label } => write!(f, "[{}{label}", kind.prefix()),
            Symbol::Close => f.write_str("]"),
            Symbol::Copy(i) => write!(f, "COPY@{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinearizeError {
    #[error("ill-formed symbol sequence: {0}")]
    IllFormedSequence(String),
}

fn ill(msg: impl Into<String>) -> LinearizeError {
    LinearizeError::IllFormedSequence(msg.into())
}

/// Canonical bracket serialization with every token replaced by a copy of
/// its position.
pub fn linearize_tree(tree: &SemanticTree) -> Vec<Symbol> {
    fn go(node: &SemanticNode, out: &mut Vec<Symbol>) {
        out.push(Symbol::Open { kind: node.kind, label: node.label.clone() });
        for c in &node.children {
            match c {
                Child::Token(i) => out.push(Symbol::Copy(*i)),
                Child::Node(n) => go(n, out),
            }
        }
        out.push(Symbol::Close);
    }
    let mut out = Vec::new();
    go(tree.root(), &mut out);
    out
}

/// Rebuilds a tree from symbols. Copies must visit every token exactly once,
/// left to right, and brackets must close a single root.
pub fn delinearize<S: AsRef<str>>(symbols: &[Symbol], tokens: &[S]) -> Result<SemanticTree, LinearizeError> {
    let mut stack: Vec<SemanticNode> = Vec::new();
    let mut root: Option<SemanticNode> = None;
    let mut next_token = 0;
    for (pos, sym) in symbols.iter().enumerate() {
        if root.is_some() {
            return Err(ill(format!("symbol {sym} at {pos} after the root closed")));
        }
        match sym {
            Symbol::Open { kind, label } => stack.push(SemanticNode::new(*kind, label.clone(), Vec::new())),
            Symbol::Copy(i) => {
                if *i != next_token || *i >= tokens.len() {
                    return Err(ill(format!("copy of token {i} at {pos}, expected token {next_token}")));
                }
                let top = stack.last_mut().ok_or_else(|| ill(format!("copy outside any bracket at {pos}")))?;
                top.children.push(Child::Token(*i));
                next_token += 1;
            }
            Symbol::Close => {
                let node = stack.pop().ok_or_else(|| ill(format!("unmatched close at {pos}")))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Child::Node(node)),
                    None => root = Some(node),
                }
            }
        }
    }
    let root = root.ok_or_else(|| ill("sequence ended before the root closed"))?;
    if next_token != tokens.len() {
        return Err(ill(format!("{} of {} tokens copied", next_token, tokens.len())));
    }
    SemanticTree::new(tokens, root).map_err(|e| ill(e.to_string()))
}
