//! Exhaustive enumeration of bracketed trees over a tiny label alphabet.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::treebank::{MAX_INTENT_DEPTH, MAX_SLOT_DEPTH};

/// Parameters of the enumerated grammar. Every token is the word `w`; the
/// root intent is `R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmallGrammar {
    pub max_tokens: usize,
    /// Labels for non-root intents.
    pub intent_labels: Vec<String>,
    pub slot_labels: Vec<String>,
    /// Allow a node whose only child is another node (identical extents).
    pub unary_chains: bool,
}

impl SmallGrammar {
    pub fn new(max_tokens: usize, unary_chains: bool) -> Self {
        SmallGrammar {
            max_tokens,
            intent_labels: vec![String::from("X")],
            slot_labels: vec![String::from("S")],
            unary_chains,
        }
    }
}

type Key = (usize, usize, usize, bool);

struct Enumerator<'g> {
    grammar: &'g SmallGrammar,
    memo: BTreeMap<Key, Vec<String>>,
}

impl Enumerator<'_> {
    /// All child sequences covering `len` tokens inside a node at the given
    /// depths. `whole` marks a complete child list, where a single child
    /// node spanning everything is a unary chain.
    fn sequences(&mut self, len: usize, intent: usize, slot: usize, whole: bool) -> Vec<String> {
        let key = (len, intent, slot, whole);
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let mut out = Vec::new();
        if len == 0 {
            out.push(String::new());
        } else {
            for rest in self.sequences(len - 1, intent, slot, false) {
                out.push(format!(" w{rest}"));
            }
            for k in 1..=len {
                if whole && k == len && !self.grammar.unary_chains {
                    continue;
                }
                let mut firsts = Vec::new();
                if intent < MAX_INTENT_DEPTH {
                    for inner in self.sequences(k, intent + 1, slot, true) {
                        for l in &self.grammar.intent_labels {
                            firsts.push(format!(" [IN:{l}{inner} ]"));
                        }
                    }
                }
                if slot < MAX_SLOT_DEPTH {
                    for inner in self.sequences(k, intent, slot + 1, true) {
                        for l in &self.grammar.slot_labels {
                            firsts.push(format!(" [SL:{l}{inner} ]"));
                        }
                    }
                }
                let rests = self.sequences(len - k, intent, slot, false);
                for f in &firsts {
                    for r in &rests {
                        let mut s = String::with_capacity(f.len() + r.len());
                        s.push_str(f);
                        s.push_str(r);
                        out.push(s);
                    }
                }
            }
        }
        self.memo.insert(key, out.clone());
        out
    }
}

/// Canonical strings of every tree with 1..=`max_tokens` tokens that
/// satisfies the depth caps.
pub fn enumerate_small_grammar(grammar: &SmallGrammar) -> Vec<String> {
    let mut e = Enumerator {
        grammar,
        memo: BTreeMap::new(),
    };
    let mut out = Vec::new();
    for n in 1..=grammar.max_tokens {
        for inner in e.sequences(n, 1, 0, true) {
            out.push(format!("[IN:R{inner} ]"));
        }
    }
    out
}
