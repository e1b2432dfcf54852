use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::decomposer::flatten_slot_targets;
use crate::treebank::NodeKind;

pub const CLS: usize = 0;
pub const PAD: usize = 1;
pub const UNK: usize = 2;

const RESERVED: [&str; 3] = ["[CLS]", "[PAD]", "[UNK]"];

/// Symbol table with `[CLS]`, `[PAD]` and `[UNK]` at indices 0, 1, 2,
/// followed by symbols in descending frequency, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in items {
            let s = s.as_ref();
            if RESERVED.contains(&s) {
                continue;
            }
            *counts.entry(s.to_string()).or_insert(0) += 1;
        }
        let mut ordered: Vec<(String, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let symbols = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ordered.into_iter().map(|(s, _)| s))
            .collect();
        Self::from_symbols(symbols)
    }

    /// Rebuilds a vocabulary from its ordered symbol list. The reserved
    /// symbols are inserted if the list does not start with them.
    pub fn from_symbols(symbols: Vec<String>) -> Self {
        let symbols = if symbols.len() >= 3 && symbols[..3] == RESERVED {
            symbols
        } else {
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(symbols.into_iter().filter(|s| !RESERVED.contains(&s.as_str())))
                .collect()
        };
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of `symbol`, or [`UNK`].
    pub fn get(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> &str {
        self.symbols.get(index).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        Vocab::from_symbols(symbols)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

/// Symbol tables shared by all model families. `opens` holds bracket
/// openers such as `IN:GET_WEATHER` for the sequence-to-sequence baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub tokens: Vocab,
    pub coarse: Vocab,
    pub intent_tags: Vocab,
    pub slot_tags: Vocab,
    pub opens: Vocab,
}

impl Vocabs {
    pub fn build(dataset: &Dataset) -> Self {
        let mut tokens = Vec::new();
        let mut coarse = Vec::new();
        let mut intent = Vec::new();
        let mut slot = Vec::new();
        let mut opens = Vec::new();
        for ex in dataset {
            opens.extend(ex.tree().root().nodes().map(|n| open_symbol(n.kind, &n.label)));
            tokens.extend(ex.tokens().into_iter().map(str::to_string));
            coarse.push(ex.frame().coarse_intent.clone());
            intent.extend(ex.frame().intent_tags.iter().map(|t| t.to_string()));
            slot.extend(flatten_slot_targets(ex.frame()).iter().map(|t| t.to_string()));
        }
        Vocabs {
            tokens: Vocab::build(tokens),
            coarse: Vocab::build(coarse),
            intent_tags: Vocab::build(intent),
            slot_tags: Vocab::build(slot),
            opens: Vocab::build(opens),
        }
    }
}

/// `IN:LABEL` or `SL:LABEL`.
pub fn open_symbol(kind: NodeKind, label: &str) -> String {
    let mut s = String::from(kind.prefix());
    s.push_str(label);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_first_then_frequency() {
        let v = Vocab::build(["b", "a", "b", "c", "a", "b"]);
        assert_eq!(v.symbols(), ["[CLS]", "[PAD]", "[UNK]", "b", "a", "c"]);
        assert_eq!(v.get("[CLS]"), CLS);
        assert_eq!(v.get("[PAD]"), PAD);
        assert_eq!(v.get("zzz"), UNK);
        assert_eq!(v.get("a"), 4);
        assert_eq!(Vocab::from_symbols(v.symbols().to_vec()), v);
    }
}
