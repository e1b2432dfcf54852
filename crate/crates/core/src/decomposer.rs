//! Conversion between hierarchical trees and the three flattened label
//! layers (coarse intent, per-token fine-grained intent tags, per-token slot
//! stacks).
//!
//! Fine-grained intents are tagged with BIO over the tokens they own. An
//! intent nested inside another non-root intent is tagged with a `-NESTED`
//! suffix, and the enclosing intent's scope is recovered at reconstruction
//! time by absorbing the adjacent nested run. Slot tags are stacked per
//! token, outermost first, so the stack length is the token's fertility.
//!
//! Not every tree has a frame that reconstructs to it. [`decompose`] rejects
//! the ones that do not, so `reconstruct(decompose(t)) == t` whenever
//! `decompose` succeeds.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::treebank::{
    validate_label, Child, NodeKind, SemanticNode, SemanticTree, Span, TreebankError,
    MAX_INTENT_DEPTH, MAX_SLOT_DEPTH,
};

/// Largest number of slot labels a single token may carry.
pub const MAX_FERTILITY: usize = MAX_SLOT_DEPTH;

const NESTED_SUFFIX: &str = "-NESTED";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposerError {
    #[error("intent nesting depth {depth} cannot be expressed with a single NESTED marker")]
    DepthExceeded { depth: usize },
    #[error("tree has no invertible flattening: {0}")]
    Unrepresentable(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("fertility {value} at token {position} is outside 1..={max}", max = MAX_FERTILITY)]
    FertilityOutOfRange { position: usize, value: usize },
    #[error("ill-formed BIO sequence: {0}")]
    IllFormedBio(String),
    #[error("span containment violated: {0}")]
    ContainmentViolation(String),
    #[error("nested intent at token {position} is not adjacent to any enclosing intent")]
    OrphanNested { position: usize },
    #[error("nested intent at token {position} is claimed by two enclosing intents")]
    AmbiguousScope { position: usize },
    #[error("invalid tag `{0}`")]
    InvalidTag(String),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error("reconstructed tree does not flatten back to the input frame")]
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntentTag {
    O,
    B { label: String, nested: bool },
    I { label: String, nested: bool },
}

impl IntentTag {
    pub fn label(&self) -> Option<(&str, bool)> {
        match self {
            IntentTag::O => None,
            IntentTag::B { label, nested } | IntentTag::I { label, nested } => {
                Some((label, *nested))
            }
        }
    }

    pub fn is_nested(&self) -> bool {
        matches!(self.label(), Some((_, true)))
    }
}

impl fmt::Display for IntentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (p, label, nested) = match self {
            IntentTag::O => return f.write_str("O"),
            IntentTag::B { label, nested } => ("B", label, *nested),
            IntentTag::I { label, nested } => ("I", label, *nested),
        };
        write!(f, "{p}-{label}")?;
        if nested {
            f.write_str(NESTED_SUFFIX)?;
        }
        Ok(())
    }
}

impl FromStr for IntentTag {
    type Err = DecomposerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(IntentTag::O);
        }
        let bad = || DecomposerError::InvalidTag(s.to_string());
        let (prefix, rest) = s.split_at_checked(2).ok_or_else(bad)?;
        let (label, nested) = match rest.strip_suffix(NESTED_SUFFIX) {
            Some(l) => (l, true),
            None => (rest, false),
        };
        validate_label(label).map_err(|_| bad())?;
        let label = label.to_string();
        match prefix {
            "B-" => Ok(IntentTag::B { label, nested }),
            "I-" => Ok(IntentTag::I { label, nested }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotTag {
    O,
    B(String),
    I(String),
}

impl SlotTag {
    pub fn label(&self) -> Option<&str> {
        match self {
            SlotTag::O => None,
            SlotTag::B(l) | SlotTag::I(l) => Some(l),
        }
    }
}

impl fmt::Display for SlotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTag::O => f.write_str("O"),
            SlotTag::B(l) => write!(f, "B-{l}"),
            SlotTag::I(l) => write!(f, "I-{l}"),
        }
    }
}

impl FromStr for SlotTag {
    type Err = DecomposerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(SlotTag::O);
        }
        let bad = || DecomposerError::InvalidTag(s.to_string());
        let (prefix, label) = s.split_at_checked(2).ok_or_else(bad)?;
        validate_label(label).map_err(|_| bad())?;
        match prefix {
            "B-" => Ok(SlotTag::B(label.to_string())),
            "I-" => Ok(SlotTag::I(label.to_string())),
            _ => Err(bad()),
        }
    }
}

/// Slot tags carried by one token, outermost slot first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotStack(pub Vec<SlotTag>);

impl SlotStack {
    pub fn outside() -> Self {
        SlotStack(vec![SlotTag::O])
    }

    pub fn tags(&self) -> &[SlotTag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Length in `1..=MAX_FERTILITY`, and `O` only as the sole element.
    pub fn is_well_formed(&self) -> bool {
        match self.0.as_slice() {
            [SlotTag::O] => true,
            tags => {
                !tags.is_empty()
                    && tags.len() <= MAX_FERTILITY
                    && tags.iter().all(|t| *t != SlotTag::O)
            }
        }
    }
}

impl fmt::Display for SlotStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for SlotStack {
    type Err = DecomposerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split('|')
            .map(SlotTag::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map(SlotStack)
    }
}

/// The three flattened layers of one utterance.
///
/// Model predictions are stored in this type as well, so construction does
/// not enforce well-formedness; see [`DecomposedFrame::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecomposedFrame {
    pub coarse_intent: String,
    pub intent_tags: Vec<IntentTag>,
    pub slot_stacks: Vec<SlotStack>,
}

impl DecomposedFrame {
    pub fn len(&self) -> usize {
        self.intent_tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intent_tags.is_empty()
    }

    /// Checks layer lengths, stack shapes and BIO well-formedness at every
    /// depth.
    pub fn validate(&self) -> Result<(), DecomposerError> {
        if self.intent_tags.len() != self.slot_stacks.len() {
            return Err(DecomposerError::LengthMismatch(format!(
                "{} intent tags vs {} slot stacks",
                self.intent_tags.len(),
                self.slot_stacks.len()
            )));
        }
        validate_label(&self.coarse_intent)?;
        intent_runs(&self.intent_tags)?;
        for d in 1..=MAX_SLOT_DEPTH {
            slot_runs(&self.slot_stacks, d)?;
        }
        Ok(())
    }
}

/// Converts a tree into its flattened layers.
pub fn decompose(tree: &SemanticTree) -> Result<DecomposedFrame, DecomposerError> {
    let n = tree.len();
    let root = tree.root();
    let mut ancestors: Vec<(&str, usize)> = Vec::new();
    let mut slot_stacks = vec![SlotStack(Vec::new()); n];
    let mut first_level: Vec<(&SemanticNode, Span)> = Vec::new();
    let mut second_level: Vec<&SemanticNode> = Vec::new();
    walk(
        root,
        1,
        &mut ancestors,
        &mut slot_stacks,
        &mut first_level,
        &mut second_level,
    )?;
    for stack in slot_stacks.iter_mut() {
        if stack.0.is_empty() {
            stack.0.push(SlotTag::O);
        }
    }

    for node in first_level.iter().map(|(n, _)| *n).chain(second_level.iter().copied()) {
        if let [Child::Node(only)] = node.children.as_slice() {
            if only.kind == NodeKind::Slot {
                return Err(DecomposerError::Unrepresentable(format!(
                    "intent `{}` has the same extent as its only child slot `{}`",
                    node.label, only.label
                )));
            }
        }
    }

    let mut intent_tags = vec![IntentTag::O; n];
    let mut in_second = vec![false; n];
    for node in &second_level {
        let span = node.span();
        for (k, i) in (span.start..span.end).enumerate() {
            in_second[i] = true;
            intent_tags[i] = bio_intent(k == 0, &node.label, true);
        }
    }
    for (node, span) in &first_level {
        let own: Vec<usize> = (span.start..span.end).filter(|&i| !in_second[i]).collect();
        let contiguous = own.windows(2).all(|w| w[1] == w[0] + 1);
        if own.is_empty() || !contiguous {
            return Err(DecomposerError::Unrepresentable(format!(
                "intent `{}` does not own a single contiguous run of tokens",
                node.label
            )));
        }
        for (k, &i) in own.iter().enumerate() {
            intent_tags[i] = bio_intent(k == 0, &node.label, false);
        }
    }

    // A chain of nested tokens must border exactly one enclosing run.
    let mut i = 0;
    while i < n {
        if !intent_tags[i].is_nested() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && intent_tags[i].is_nested() {
            i += 1;
        }
        let own = |t: &IntentTag| t.label().is_some() && !t.is_nested();
        let left = start > 0 && own(&intent_tags[start - 1]);
        let right = i < n && own(&intent_tags[i]);
        if left && right {
            return Err(DecomposerError::Unrepresentable(format!(
                "nested intent run at tokens {start}..{i} borders two enclosing intents"
            )));
        }
    }

    Ok(DecomposedFrame {
        coarse_intent: root.label.clone(),
        intent_tags,
        slot_stacks,
    })
}

fn bio_intent(begin: bool, label: &str, nested: bool) -> IntentTag {
    let label = label.to_string();
    if begin {
        IntentTag::B { label, nested }
    } else {
        IntentTag::I { label, nested }
    }
}

fn walk<'a>(
    node: &'a SemanticNode,
    intent_depth: usize,
    slots: &mut Vec<(&'a str, usize)>,
    stacks: &mut [SlotStack],
    first_level: &mut Vec<(&'a SemanticNode, Span)>,
    second_level: &mut Vec<&'a SemanticNode>,
) -> Result<(), DecomposerError> {
    if intent_depth > MAX_INTENT_DEPTH {
        return Err(DecomposerError::DepthExceeded {
            depth: intent_depth,
        });
    }
    let pushed = match node.kind {
        NodeKind::Slot => {
            slots.push((&node.label, node.span().start));
            true
        }
        NodeKind::Intent => {
            match intent_depth {
                2 => first_level.push((node, node.span())),
                3 => second_level.push(node),
                _ => {}
            }
            false
        }
    };
    for child in &node.children {
        match child {
            Child::Token(i) => {
                stacks[*i].0 = slots
                    .iter()
                    .map(|(label, start)| {
                        if *start == *i {
                            SlotTag::B(label.to_string())
                        } else {
                            SlotTag::I(label.to_string())
                        }
                    })
                    .collect();
            }
            Child::Node(n) => {
                let d = intent_depth + usize::from(n.kind == NodeKind::Intent);
                walk(n, d, slots, stacks, first_level, second_level)?;
            }
        }
    }
    if pushed {
        slots.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Run {
    span: Span,
    label: String,
    nested: bool,
}

fn intent_runs(tags: &[IntentTag]) -> Result<Vec<Run>, DecomposerError> {
    let mut runs: Vec<Run> = Vec::new();
    let mut open = false;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            IntentTag::O => open = false,
            IntentTag::B { label, nested } => {
                runs.push(Run {
                    span: Span { start: i, end: i + 1 },
                    label: label.clone(),
                    nested: *nested,
                });
                open = true;
            }
            IntentTag::I { label, nested } => match runs.last_mut() {
                Some(r) if open && r.label == *label && r.nested == *nested => r.span.end = i + 1,
                _ => {
                    return Err(DecomposerError::IllFormedBio(format!(
                        "intent tag `{tag}` at token {i} does not continue a run"
                    )))
                }
            },
        }
    }
    Ok(runs)
}

fn slot_runs(stacks: &[SlotStack], depth: usize) -> Result<Vec<Run>, DecomposerError> {
    let mut runs: Vec<Run> = Vec::new();
    let mut open = false;
    for (i, stack) in stacks.iter().enumerate() {
        if !stack.is_well_formed() {
            return Err(DecomposerError::IllFormedBio(format!(
                "slot stack `{stack}` at token {i} is not well formed"
            )));
        }
        match stack.0.get(depth - 1) {
            None | Some(SlotTag::O) => open = false,
            Some(SlotTag::B(label)) => {
                runs.push(Run {
                    span: Span { start: i, end: i + 1 },
                    label: label.clone(),
                    nested: false,
                });
                open = true;
            }
            Some(tag @ SlotTag::I(label)) => match runs.last_mut() {
                Some(r) if open && r.label == *label => r.span.end = i + 1,
                _ => {
                    return Err(DecomposerError::IllFormedBio(format!(
                        "slot tag `{tag}` at token {i}, depth {depth} does not continue a run"
                    )))
                }
            },
        }
    }
    Ok(runs)
}

#[derive(Debug)]
struct SpanNode {
    span: Span,
    kind: NodeKind,
    label: String,
    /// Ordering key among identical extents: root, slots by depth, then
    /// intents by depth.
    rank: usize,
    /// Required number of same-kind proper ancestors.
    depth: usize,
    children: Vec<usize>,
}

/// Rebuilds the unique tree whose flattening is `frame`.
pub fn reconstruct<S: AsRef<str>>(
    frame: &DecomposedFrame,
    tokens: &[S],
) -> Result<SemanticTree, DecomposerError> {
    let n = tokens.len();
    if frame.intent_tags.len() != n || frame.slot_stacks.len() != n {
        return Err(DecomposerError::LengthMismatch(format!(
            "{n} tokens, {} intent tags, {} slot stacks",
            frame.intent_tags.len(),
            frame.slot_stacks.len()
        )));
    }
    validate_label(&frame.coarse_intent)?;

    let mut nodes = vec![SpanNode {
        span: Span { start: 0, end: n },
        kind: NodeKind::Intent,
        label: frame.coarse_intent.clone(),
        rank: 0,
        depth: 0,
        children: Vec::new(),
    }];

    let runs = intent_runs(&frame.intent_tags)?;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (r, run) in runs.iter().enumerate().filter(|(_, r)| !r.nested) {
        let mut start = run.span.start;
        while start > 0 && frame.intent_tags[start - 1].is_nested() {
            start -= 1;
        }
        let mut end = run.span.end;
        while end < n && frame.intent_tags[end].is_nested() {
            end += 1;
        }
        for i in (start..run.span.start).chain(run.span.end..end) {
            if owner[i].is_some() {
                return Err(DecomposerError::AmbiguousScope { position: i });
            }
            owner[i] = Some(r);
        }
        nodes.push(SpanNode {
            span: Span { start, end },
            kind: NodeKind::Intent,
            label: run.label.clone(),
            rank: 10,
            depth: 1,
            children: Vec::new(),
        });
    }
    for run in runs.iter().filter(|r| r.nested) {
        if owner[run.span.start].is_none() {
            return Err(DecomposerError::OrphanNested {
                position: run.span.start,
            });
        }
        nodes.push(SpanNode {
            span: run.span,
            kind: NodeKind::Intent,
            label: run.label.clone(),
            rank: 11,
            depth: 2,
            children: Vec::new(),
        });
    }
    for d in 1..=MAX_SLOT_DEPTH {
        for run in slot_runs(&frame.slot_stacks, d)? {
            nodes.push(SpanNode {
                span: run.span,
                kind: NodeKind::Slot,
                label: run.label,
                rank: d,
                depth: d - 1,
                children: Vec::new(),
            });
        }
    }

    let mut order: Vec<usize> = (1..nodes.len()).collect();
    order.sort_by_key(|&i| {
        let s = &nodes[i];
        (s.span.start, core::cmp::Reverse(s.span.end), s.rank)
    });
    let mut stack: Vec<usize> = vec![0];
    for &i in &order {
        let span = nodes[i].span;
        loop {
            let top = *stack.last().expect("root is never popped");
            let t = nodes[top].span;
            if t.contains(&span) {
                break;
            }
            if span.start < t.end {
                return Err(DecomposerError::ContainmentViolation(format!(
                    "`{}` {}..{} crosses `{}` {}..{}",
                    nodes[i].label, span.start, span.end, nodes[top].label, t.start, t.end
                )));
            }
            stack.pop();
        }
        let kind = nodes[i].kind;
        let found = stack
            .iter()
            .filter(|&&a| nodes[a].kind == kind)
            .count();
        if found != nodes[i].depth {
            return Err(DecomposerError::ContainmentViolation(format!(
                "{kind} `{}` at {}..{} expects {} enclosing {kind}s, found {found}",
                nodes[i].label, span.start, span.end, nodes[i].depth
            )));
        }
        let parent = *stack.last().expect("root is never popped");
        nodes[parent].children.push(i);
        stack.push(i);
    }

    let root = materialize(&nodes, 0);
    let tree = SemanticTree::new(tokens, root)?;
    match decompose(&tree) {
        Ok(f) if f == *frame => Ok(tree),
        _ => Err(DecomposerError::Inconsistent),
    }
}

fn materialize(nodes: &[SpanNode], at: usize) -> SemanticNode {
    let node = &nodes[at];
    let mut children = Vec::new();
    let mut pos = node.span.start;
    for &c in &node.children {
        let child = &nodes[c];
        children.extend((pos..child.span.start).map(Child::Token));
        children.push(Child::Node(materialize(nodes, c)));
        pos = child.span.end;
    }
    children.extend((pos..node.span.end).map(Child::Token));
    SemanticNode::new(node.kind, node.label.clone(), children)
}

/// Per-token number of slot labels.
pub fn fertility_of(frame: &DecomposedFrame) -> Vec<usize> {
    frame.slot_stacks.iter().map(SlotStack::len).collect()
}

/// All slot stacks concatenated in token order.
pub fn flatten_slot_targets(frame: &DecomposedFrame) -> Vec<SlotTag> {
    frame
        .slot_stacks
        .iter()
        .flat_map(|s| s.0.iter().cloned())
        .collect()
}

/// Splits a linear sequence into consecutive groups of the given sizes.
pub fn regroup<T: Clone>(linear: &[T], fertilities: &[usize]) -> Result<Vec<Vec<T>>, DecomposerError> {
    if let Some((position, &value)) = fertilities
        .iter()
        .enumerate()
        .find(|(_, &f)| f == 0 || f > MAX_FERTILITY)
    {
        return Err(DecomposerError::FertilityOutOfRange { position, value });
    }
    let total: usize = fertilities.iter().sum();
    if total != linear.len() {
        return Err(DecomposerError::LengthMismatch(format!(
            "{} slot tags for fertilities summing to {total}",
            linear.len()
        )));
    }
    let mut out = Vec::with_capacity(fertilities.len());
    let mut at = 0;
    for &f in fertilities {
        out.push(linear[at..at + f].to_vec());
        at += f;
    }
    Ok(out)
}

/// Inverse of [`flatten_slot_targets`] given per-token fertilities.
pub fn regroup_slots(
    linear: &[SlotTag],
    fertilities: &[usize],
) -> Result<Vec<SlotStack>, DecomposerError> {
    Ok(regroup(linear, fertilities)?
        .into_iter()
        .map(SlotStack)
        .collect())
}

/// Exact-match equality over all three layers.
pub fn frames_equal(a: &DecomposedFrame, b: &DecomposedFrame) -> bool {
    a == b
}

/// True when the tree has a non-root intent or a slot inside another slot.
pub fn is_nested(tree: &SemanticTree) -> bool {
    fn go(node: &SemanticNode, is_root: bool, under_slot: bool) -> bool {
        if node.kind == NodeKind::Intent && !is_root {
            return true;
        }
        if node.kind == NodeKind::Slot && under_slot {
            return true;
        }
        let under = under_slot || node.kind == NodeKind::Slot;
        node.children.iter().any(|c| match c {
            Child::Node(n) => go(n, false, under),
            Child::Token(_) => false,
        })
    }
    go(tree.root(), true, false)
}

/// Coerces every `I-` tag that does not continue a run into a `B-` tag, in
/// the intent layer and at each slot depth.
pub fn repair(frame: &DecomposedFrame) -> DecomposedFrame {
    let mut out = frame.clone();
    let mut prev: Option<(String, bool)> = None;
    for tag in out.intent_tags.iter_mut() {
        if let IntentTag::I { label, nested } = tag {
            if prev.as_ref() != Some(&(label.clone(), *nested)) {
                *tag = IntentTag::B {
                    label: label.clone(),
                    nested: *nested,
                };
            }
        }
        prev = tag.label().map(|(l, n)| (l.to_string(), n));
    }
    for d in 0..MAX_SLOT_DEPTH {
        let mut prev: Option<String> = None;
        for stack in out.slot_stacks.iter_mut() {
            match stack.0.get_mut(d) {
                Some(tag) => {
                    if let SlotTag::I(label) = tag {
                        if prev.as_deref() != Some(label.as_str()) {
                            *tag = SlotTag::B(label.clone());
                        }
                    }
                    prev = tag.label().map(str::to_string);
                }
                None => prev = None,
            }
        }
    }
    out
}

/// Three-line text form of a frame: the coarse intent, the tab-separated
/// intent tags, and the tab-separated slot stacks with `|` inside a stack.
/// No trailing newline.
pub fn format_frame(frame: &DecomposedFrame) -> String {
    let join = |items: Vec<String>| items.join("\t");
    format!(
        "{}\n{}\n{}",
        frame.coarse_intent,
        join(frame.intent_tags.iter().map(ToString::to_string).collect()),
        join(frame.slot_stacks.iter().map(ToString::to_string).collect()),
    )
}

/// Inverse of [`format_frame`]. The layers must have equal length; their
/// BIO well-formedness is not checked.
pub fn parse_frame(text: &str) -> Result<DecomposedFrame, DecomposerError> {
    let lines: Vec<&str> = text.trim_end_matches('\n').split('\n').collect();
    let [coarse, intents, slots] = lines[..] else {
        return Err(DecomposerError::LengthMismatch(format!("frame text has {} lines, expected 3", lines.len())));
    };
    validate_label(coarse).map_err(DecomposerError::Treebank)?;
    let intent_tags = intents.split('\t').map(IntentTag::from_str).collect::<Result<Vec<_>, _>>()?;
    let slot_stacks = slots.split('\t').map(SlotStack::from_str).collect::<Result<Vec<_>, _>>()?;
    if intent_tags.len() != slot_stacks.len() {
        return Err(DecomposerError::LengthMismatch(format!(
            "{} intent tags but {} slot stacks",
            intent_tags.len(),
            slot_stacks.len()
        )));
    }
    Ok(DecomposedFrame { coarse_intent: coarse.to_string(), intent_tags, slot_stacks })
}

/// Label counts seen in a frame, keyed by tag string. Used for vocabulary
/// building and diagnostics.
pub fn tag_counts(frame: &DecomposedFrame) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in &frame.intent_tags {
        *counts.entry(t.to_string()).or_insert(0) += 1;
    }
    for t in frame.slot_stacks.iter().flat_map(|s| s.0.iter()) {
        *counts.entry(t.to_string()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_top;

    fn b(l: &str) -> SlotTag {
        SlotTag::B(l.into())
    }
    fn i(l: &str) -> SlotTag {
        SlotTag::I(l.into())
    }

    #[test]
    fn frame_text_round_trip() {
        let t = parse_top("[IN:CREATE_CALL call [SL:CONTACT my [SL:TYPE_RELATION Grandma ] ] now ]").unwrap();
        let f = decompose(&t).unwrap();
        let text = format_frame(&f);
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with("O\tB-CONTACT\tI-CONTACT|B-TYPE_RELATION\tO"));
        assert_eq!(parse_frame(&text).unwrap(), f);
        assert!(parse_frame("A\nO\tO\nO").is_err());
        assert!(parse_frame("A\nO").is_err());
    }

    fn roundtrip(s: &str) {
        let t = parse_top(s).unwrap();
        let f = decompose(&t).unwrap();
        f.validate().unwrap();
        let r = reconstruct(&f, &t.surfaces()).unwrap();
        assert_eq!(r, t, "{s}");
    }

    #[test]
    fn message_token_carries_two_slots() {
        let t = parse_top(
            "[IN:CREATE_REMINDER remind me to [SL:TODO [SL:METHOD-MESSAGE message ] \
             mom ] ]",
        )
        .unwrap();
        let f = decompose(&t).unwrap();
        assert_eq!(
            f.slot_stacks[3],
            SlotStack(vec![b("TODO"), b("METHOD-MESSAGE")])
        );
        assert_eq!(f.slot_stacks[4], SlotStack(vec![i("TODO")]));
        assert_eq!(fertility_of(&f), vec![1, 1, 1, 2, 1]);
    }

    #[test]
    fn nested_intent_labels() {
        let s = "[IN:CREATE_REMINDER remind me to [SL:TODO [IN:CREATE-CALL call \
                 [SL:CONTACT [IN:GET-CONTACT Grandma ] ] ] ] ]";
        let t = parse_top(s).unwrap();
        let f = decompose(&t).unwrap();
        assert_eq!(f.intent_tags[3].to_string(), "B-CREATE-CALL");
        assert_eq!(f.intent_tags[4].to_string(), "B-GET-CONTACT-NESTED");
        assert_eq!(f.intent_tags[0], IntentTag::O);
        roundtrip(s);
    }

    #[test]
    fn appendix_style_frame_reconstructs_expanded_scope() {
        let f = DecomposedFrame {
            coarse_intent: "ROOT".into(),
            intent_tags: vec![
                "B-CREATE-CALL".parse().unwrap(),
                "B-GET-CONTACT-NESTED".parse().unwrap(),
            ],
            slot_stacks: vec![SlotStack::outside(), SlotStack::outside()],
        };
        let t = reconstruct(&f, &["call", "Grandma"]).unwrap();
        assert_eq!(
            t.to_string(),
            "[IN:ROOT [IN:CREATE-CALL call [IN:GET-CONTACT Grandma ] ] ]"
        );
    }

    #[test]
    fn flat_tree() {
        let t = parse_top("[IN:C a b ]").unwrap();
        let f = decompose(&t).unwrap();
        assert_eq!(f.coarse_intent, "C");
        assert!(f.intent_tags.iter().all(|t| *t == IntentTag::O));
        assert!(f.slot_stacks.iter().all(|s| *s == SlotStack::outside()));
        assert_eq!(reconstruct(&f, &["a", "b"]).unwrap(), t);
        assert!(!is_nested(&t));
    }

    #[test]
    fn slot_is_parent_on_identical_extent() {
        roundtrip("[IN:A x [SL:B [IN:C y z ] ] ]");
        roundtrip("[IN:A [SL:B [SL:C [IN:D y [SL:E z ] ] ] ] ]");
        let t = parse_top("[IN:A x [IN:C [SL:B y ] ] ]").unwrap();
        assert!(matches!(
            decompose(&t),
            Err(DecomposerError::Unrepresentable(_))
        ));
    }

    #[test]
    fn split_own_tokens_are_rejected() {
        let t = parse_top("[IN:A [IN:B x [IN:C y ] z ] ]").unwrap();
        assert!(matches!(
            decompose(&t),
            Err(DecomposerError::Unrepresentable(_))
        ));
        let t = parse_top("[IN:A [IN:B [IN:C y ] ] ]").unwrap();
        assert!(matches!(
            decompose(&t),
            Err(DecomposerError::Unrepresentable(_))
        ));
    }

    #[test]
    fn nested_run_between_two_intents_is_rejected() {
        let t = parse_top("[IN:A [IN:B x [IN:C y ] ] [IN:D z ] ]").unwrap();
        assert!(matches!(
            decompose(&t),
            Err(DecomposerError::Unrepresentable(_))
        ));
        roundtrip("[IN:A [IN:B x [IN:C y ] ] w [IN:D z ] ]");
        roundtrip("[IN:A [IN:B [IN:C y ] x ] [IN:D z ] ]");
    }

    #[test]
    fn reconstruct_errors() {
        let o = SlotStack::outside;
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec!["I-X".parse().unwrap()],
            slot_stacks: vec![o()],
        };
        assert!(matches!(
            reconstruct(&f, &["x"]),
            Err(DecomposerError::IllFormedBio(_))
        ));
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![IntentTag::O, "B-X-NESTED".parse().unwrap()],
            slot_stacks: vec![o(), o()],
        };
        assert_eq!(
            reconstruct(&f, &["x", "y"]),
            Err(DecomposerError::OrphanNested { position: 1 })
        );
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![
                "B-X".parse().unwrap(),
                "B-Y-NESTED".parse().unwrap(),
                "B-Z".parse().unwrap(),
            ],
            slot_stacks: vec![o(), o(), o()],
        };
        assert_eq!(
            reconstruct(&f, &["x", "y", "z"]),
            Err(DecomposerError::AmbiguousScope { position: 1 })
        );
        // depth-2 slot run crossing two depth-1 slots
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![IntentTag::O, IntentTag::O],
            slot_stacks: vec![
                SlotStack(vec![b("P"), b("C")]),
                SlotStack(vec![b("Q"), i("C")]),
            ],
        };
        assert!(matches!(
            reconstruct(&f, &["x", "y"]),
            Err(DecomposerError::ContainmentViolation(_))
        ));
        // slot crossing an intent boundary
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec!["B-X".parse().unwrap(), IntentTag::O],
            slot_stacks: vec![SlotStack(vec![b("S")]), SlotStack(vec![i("S")])],
        };
        let t = reconstruct(&f, &["x", "y"]).unwrap();
        assert_eq!(t.to_string(), "[IN:A [SL:S [IN:X x ] y ] ]");
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![IntentTag::O, "B-X".parse().unwrap(), "I-X".parse().unwrap()],
            slot_stacks: vec![SlotStack(vec![b("S")]), SlotStack(vec![i("S")]), o()],
        };
        assert!(matches!(
            reconstruct(&f, &["w", "x", "y"]),
            Err(DecomposerError::ContainmentViolation(_))
        ));
        assert!(matches!(
            reconstruct(&f, &["w"]),
            Err(DecomposerError::LengthMismatch(_))
        ));
    }

    #[test]
    fn flatten_and_regroup() {
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![IntentTag::O; 3],
            slot_stacks: vec![
                SlotStack::outside(),
                SlotStack(vec![b("A"), b("B")]),
                SlotStack(vec![i("A")]),
            ],
        };
        let flat = flatten_slot_targets(&f);
        assert_eq!(flat, vec![SlotTag::O, b("A"), b("B"), i("A")]);
        assert_eq!(
            regroup_slots(&flat, &fertility_of(&f)).unwrap(),
            f.slot_stacks
        );
        assert!(matches!(
            regroup_slots(&flat, &[1, 1, 1]),
            Err(DecomposerError::LengthMismatch(_))
        ));
        assert!(matches!(
            regroup_slots(&flat, &[0, 4]),
            Err(DecomposerError::FertilityOutOfRange { position: 0, .. })
        ));
    }

    #[test]
    fn frame_equality() {
        let t = parse_top("[IN:A x [SL:B y ] ]").unwrap();
        let f = decompose(&t).unwrap();
        assert!(frames_equal(&f, &f));
        let mut g = f.clone();
        g.slot_stacks[1] = SlotStack(vec![b("C")]);
        assert!(!frames_equal(&f, &g));
    }

    #[test]
    fn tag_text() {
        for s in ["O", "B-A", "I-GET-CONTACT", "B-GET-CONTACT-NESTED", "I-X_1-NESTED"] {
            assert_eq!(s.parse::<IntentTag>().unwrap().to_string(), s);
        }
        assert!("X-A".parse::<IntentTag>().is_err());
        assert!("B-".parse::<IntentTag>().is_err());
        assert!("B-NESTED".parse::<IntentTag>().is_ok());
        assert_eq!(
            "B-TODO|B-METHOD-MESSAGE".parse::<SlotStack>().unwrap(),
            SlotStack(vec![b("TODO"), b("METHOD-MESSAGE")])
        );
    }

    #[test]
    fn repair_coerces_dangling_inside_tags() {
        let f = DecomposedFrame {
            coarse_intent: "A".into(),
            intent_tags: vec![IntentTag::O, "I-X".parse().unwrap(), "I-X".parse().unwrap()],
            slot_stacks: vec![
                SlotStack(vec![i("S")]),
                SlotStack(vec![i("S"), i("T")]),
                SlotStack::outside(),
            ],
        };
        let r = repair(&f);
        assert_eq!(r.intent_tags[1].to_string(), "B-X");
        assert_eq!(r.intent_tags[2].to_string(), "I-X");
        assert_eq!(r.slot_stacks[0], SlotStack(vec![b("S")]));
        assert_eq!(r.slot_stacks[1], SlotStack(vec![i("S"), b("T")]));
        r.validate().unwrap();
    }
}
