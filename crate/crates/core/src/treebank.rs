//! Bracketed hierarchical semantic representations.
//!
//! The canonical text form is
//!
//! ```text
//! [IN:CREATE_REMINDER remind me to [SL:TODO call mom ] ]
//! ```
//!
//! Openers are `[IN:LABEL` or `[SL:LABEL`, closers are a bare `]`, and every
//! atom is separated by exactly one space. Parsing is lenient about
//! whitespace (any run of whitespace separates atoms and a closer glued to a
//! token is split off) and always produces a tree whose [`serialize`] output
//! is canonical.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of INTENT nodes on any root-to-leaf path (root included).
pub const MAX_INTENT_DEPTH: usize = 3;
/// Maximum number of SLOT nodes on any root-to-leaf path.
pub const MAX_SLOT_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreebankError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced brackets at atom {position}")]
    UnbalancedBrackets { position: usize },
    #[error("unknown node prefix in `{0}` (expected IN: or SL:)")]
    UnknownNodePrefix(String),
    #[error("invalid label `{0}`")]
    InvalidLabel(String),
    #[error("invalid token `{0}`")]
    InvalidToken(String),
    #[error("node `{0}` has no children")]
    EmptyNode(String),
    #[error("root node is not an intent")]
    RootNotIntent,
    #[error("content after the root node at atom {position}")]
    TrailingContent { position: usize },
    #[error("node spans are not contiguous: {0}")]
    NonContiguousSpan(String),
    #[error("{kind} nesting depth {depth} exceeds the limit of {limit}")]
    DepthExceeded {
        kind: NodeKind,
        depth: usize,
        limit: usize,
    },
    #[error("token `{token}` (leaf {leaf}) cannot be aligned to the utterance")]
    AlignmentAmbiguous { token: String, leaf: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Intent,
    Slot,
}

impl NodeKind {
    pub fn prefix(self) -> &'static str {
        match self {
            NodeKind::Intent => "IN:",
            NodeKind::Slot => "SL:",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Intent => f.write_str("intent"),
            NodeKind::Slot => f.write_str("slot"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub index: usize,
    pub surface: String,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Child {
    /// Index into the owning tree's token list.
    Token(usize),
    Node(SemanticNode),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticNode {
    pub kind: NodeKind,
    pub label: String,
    pub children: Vec<Child>,
}

impl SemanticNode {
    pub fn new(kind: NodeKind, label: impl Into<String>, children: Vec<Child>) -> Self {
        SemanticNode {
            kind,
            label: label.into(),
            children,
        }
    }

    fn first_token(&self) -> Option<usize> {
        match self.children.first()? {
            Child::Token(i) => Some(*i),
            Child::Node(n) => n.first_token(),
        }
    }

    fn last_token(&self) -> Option<usize> {
        match self.children.last()? {
            Child::Token(i) => Some(*i),
            Child::Node(n) => n.last_token(),
        }
    }

    /// Token range covered by this node. Only meaningful on validated trees.
    pub fn span(&self) -> Span {
        match (self.first_token(), self.last_token()) {
            (Some(s), Some(e)) => Span { start: s, end: e + 1 },
            _ => Span { start: 0, end: 0 },
        }
    }

    /// Pre-order iterator over this node and all descendant nodes.
    pub fn nodes(&self) -> NodeIter<'_> {
        NodeIter { stack: alloc::vec![self] }
    }
}

pub struct NodeIter<'a> {
    stack: Vec<&'a SemanticNode>,
}

impl<'a> Iterator for NodeIter<'a> {
    type Item = &'a SemanticNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        for child in node.children.iter().rev() {
            if let Child::Node(n) = child {
                self.stack.push(n);
            }
        }
        Some(node)
    }
}

/// A validated parse: every token is a leaf exactly once, spans are
/// contiguous and properly nested, and depth caps hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticTree {
    tokens: Vec<Token>,
    root: SemanticNode,
}

impl SemanticTree {
    /// Builds a tree over `surfaces`, validating every structural invariant.
    pub fn new<S: AsRef<str>>(surfaces: &[S], root: SemanticNode) -> Result<Self, TreebankError> {
        let tokens = surfaces
            .iter()
            .enumerate()
            .map(|(index, s)| {
                validate_token(s.as_ref())?;
                Ok(Token {
                    index,
                    surface: s.as_ref().to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if root.kind != NodeKind::Intent {
            return Err(TreebankError::RootNotIntent);
        }
        let mut next = 0;
        validate_node(&root, 0, 0, &mut next)?;
        if next != tokens.len() {
            return Err(TreebankError::NonContiguousSpan(format!(
                "root covers {next} of {} tokens",
                tokens.len()
            )));
        }
        Ok(SemanticTree { tokens, root })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn root(&self) -> &SemanticNode {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Token>, SemanticNode) {
        (self.tokens, self.root)
    }
}

impl fmt::Display for SemanticTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl FromStr for SemanticTree {
    type Err = TreebankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_top(s)
    }
}

fn validate_node(
    node: &SemanticNode,
    intent_above: usize,
    slot_above: usize,
    next: &mut usize,
) -> Result<(), TreebankError> {
    validate_label(&node.label)?;
    if node.children.is_empty() {
        return Err(TreebankError::EmptyNode(node.label.clone()));
    }
    let (intent_depth, slot_depth) = match node.kind {
        NodeKind::Intent => (intent_above + 1, slot_above),
        NodeKind::Slot => (intent_above, slot_above + 1),
    };
    if intent_depth > MAX_INTENT_DEPTH {
        return Err(TreebankError::DepthExceeded {
            kind: NodeKind::Intent,
            depth: intent_depth,
            limit: MAX_INTENT_DEPTH,
        });
    }
    if slot_depth > MAX_SLOT_DEPTH {
        return Err(TreebankError::DepthExceeded {
            kind: NodeKind::Slot,
            depth: slot_depth,
            limit: MAX_SLOT_DEPTH,
        });
    }
    for child in &node.children {
        match child {
            Child::Token(i) => {
                if *i != *next {
                    return Err(TreebankError::NonContiguousSpan(format!(
                        "expected token {} under `{}`, found {i}",
                        *next, node.label
                    )));
                }
                *next += 1;
            }
            Child::Node(n) => validate_node(n, intent_depth, slot_depth, next)?,
        }
    }
    Ok(())
}

pub(crate) fn validate_label(label: &str) -> Result<(), TreebankError> {
    let ok = !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_' || c == '-')
        && !label.ends_with("-NESTED")
        && !label.starts_with('-');
    if ok {
        Ok(())
    } else {
        Err(TreebankError::InvalidLabel(label.to_string()))
    }
}

pub(crate) fn validate_token(surface: &str) -> Result<(), TreebankError> {
    if surface.is_empty() || surface.chars().any(|c| c.is_whitespace() || c == '[' || c == ']') {
        Err(TreebankError::InvalidToken(surface.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Atom<'a> {
    Open(&'a str),
    Close,
    Word(&'a str),
}

fn lex(text: &str) -> Vec<Atom<'_>> {
    let mut atoms = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap_or(' ');
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == ']' {
            atoms.push(Atom::Close);
            i += 1;
            continue;
        }
        let start = i;
        let opener = c == '[';
        if opener {
            i += 1;
        }
        while i < bytes.len() {
            let c = text[i..].chars().next().unwrap_or(' ');
            if c.is_whitespace() || c == ']' || c == '[' {
                break;
            }
            i += c.len_utf8();
        }
        if opener {
            atoms.push(Atom::Open(&text[start + 1..i]));
        } else {
            atoms.push(Atom::Word(&text[start..i]));
        }
    }
    atoms
}

/// Intermediate parse with leaf surfaces instead of token indices.
#[derive(Debug, Clone)]
struct RawNode {
    kind: NodeKind,
    label: String,
    children: Vec<RawChild>,
}

#[derive(Debug, Clone)]
enum RawChild {
    Word(String),
    Node(RawNode),
}

fn parse_raw(text: &str, empty_root: bool) -> Result<RawNode, TreebankError> {
    let atoms = lex(text);
    if atoms.is_empty() {
        return Err(TreebankError::EmptyInput);
    }
    let mut stack: Vec<RawNode> = Vec::new();
    let mut root = None;
    for (position, atom) in atoms.iter().enumerate() {
        if root.is_some() {
            return Err(TreebankError::TrailingContent { position });
        }
        match atom {
            Atom::Open(head) => {
                let (kind, label) = if let Some(l) = head.strip_prefix("IN:") {
                    (NodeKind::Intent, l)
                } else if let Some(l) = head.strip_prefix("SL:") {
                    (NodeKind::Slot, l)
                } else {
                    return Err(TreebankError::UnknownNodePrefix(head.to_string()));
                };
                validate_label(label)?;
                stack.push(RawNode {
                    kind,
                    label: label.to_string(),
                    children: Vec::new(),
                });
            }
            Atom::Close => {
                let node = stack
                    .pop()
                    .ok_or(TreebankError::UnbalancedBrackets { position })?;
                if node.children.is_empty() && !(empty_root && stack.is_empty()) {
                    return Err(TreebankError::EmptyNode(node.label));
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(RawChild::Node(node)),
                    None => root = Some(node),
                }
            }
            Atom::Word(w) => {
                validate_token(w)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(RawChild::Word(w.to_string())),
                    None => return Err(TreebankError::TrailingContent { position }),
                }
            }
        }
    }
    root.ok_or(TreebankError::UnbalancedBrackets {
        position: atoms.len(),
    })
}

fn index_raw(raw: RawNode, surfaces: &mut Vec<String>) -> SemanticNode {
    let children = raw
        .children
        .into_iter()
        .map(|c| match c {
            RawChild::Word(w) => {
                surfaces.push(w);
                Child::Token(surfaces.len() - 1)
            }
            RawChild::Node(n) => Child::Node(index_raw(n, surfaces)),
        })
        .collect();
    SemanticNode {
        kind: raw.kind,
        label: raw.label,
        children,
    }
}

/// Parses a bracketed representation into a validated tree.
pub fn parse_top(text: &str) -> Result<SemanticTree, TreebankError> {
    let raw = parse_raw(text, false)?;
    if raw.kind != NodeKind::Intent {
        return Err(TreebankError::RootNotIntent);
    }
    let mut surfaces = Vec::new();
    let root = index_raw(raw, &mut surfaces);
    SemanticTree::new(&surfaces, root)
}

/// Canonical bracketed form of `tree`.
pub fn serialize(tree: &SemanticTree) -> String {
    let mut out = String::new();
    write_node(&tree.root, &tree.tokens, &mut out);
    out
}

fn write_node(node: &SemanticNode, tokens: &[Token], out: &mut String) {
    out.push('[');
    out.push_str(node.kind.prefix());
    out.push_str(&node.label);
    for child in &node.children {
        out.push(' ');
        match child {
            Child::Token(i) => out.push_str(&tokens[*i].surface),
            Child::Node(n) => write_node(n, tokens, out),
        }
    }
    out.push_str(" ]");
}

/// Rebuilds a full tree from a serialization that omits tokens outside
/// slots.
///
/// Leaf tokens of `decoupled` are matched greedily left-to-right against
/// `utterance`. Each utterance token that is not matched is attached as a
/// direct child of the innermost node whose matched range covers it (the
/// root when no other node does). The root may be written empty, as
/// utterances without slots usually are.
pub fn align_decoupled<S: AsRef<str>>(
    utterance: &[S],
    decoupled: &str,
) -> Result<SemanticTree, TreebankError> {
    let raw = parse_raw(decoupled, true)?;
    if raw.kind != NodeKind::Intent {
        return Err(TreebankError::RootNotIntent);
    }
    let surfaces: Vec<&str> = utterance.iter().map(|s| s.as_ref()).collect();
    let mut cursor = 0;
    let mut leaf = 0;
    let mut matched = alloc::vec![false; surfaces.len()];
    let mut root = match_raw(raw, &surfaces, &mut cursor, &mut leaf, &mut matched)?;

    for (pos, used) in matched.iter().enumerate() {
        if !used {
            insert_token(&mut root, pos);
        }
    }
    SemanticTree::new(&surfaces, root)
}

fn match_raw(
    raw: RawNode,
    utterance: &[&str],
    cursor: &mut usize,
    leaf: &mut usize,
    matched: &mut [bool],
) -> Result<SemanticNode, TreebankError> {
    let mut children = Vec::with_capacity(raw.children.len());
    for child in raw.children {
        match child {
            RawChild::Word(w) => {
                let found = utterance[*cursor..]
                    .iter()
                    .position(|u| *u == w)
                    .map(|offset| *cursor + offset)
                    .ok_or(TreebankError::AlignmentAmbiguous {
                        token: w.clone(),
                        leaf: *leaf,
                    })?;
                matched[found] = true;
                *cursor = found + 1;
                *leaf += 1;
                children.push(Child::Token(found));
            }
            RawChild::Node(n) => {
                children.push(Child::Node(match_raw(n, utterance, cursor, leaf, matched)?))
            }
        }
    }
    Ok(SemanticNode {
        kind: raw.kind,
        label: raw.label,
        children,
    })
}

/// Inserts token `pos` into the innermost node whose current range
/// strictly surrounds it, keeping children ordered by position.
fn insert_token(node: &mut SemanticNode, pos: usize) {
    for child in node.children.iter_mut() {
        if let Child::Node(n) = child {
            let span = n.span();
            if span.start < pos && pos < span.end {
                insert_token(n, pos);
                return;
            }
        }
    }
    let at = node
        .children
        .iter()
        .position(|c| match c {
            Child::Token(i) => *i > pos,
            Child::Node(n) => n.span().start > pos,
        })
        .unwrap_or(node.children.len());
    node.children.insert(at, Child::Token(pos));
}
