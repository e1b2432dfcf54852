//! Examples, datasets, label ontologies, synthetic data and split protocols.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::{decompose, DecomposedFrame, DecomposerError};
use crate::treebank::{NodeKind, SemanticTree, TreebankError};

mod enumerate;
mod generator;
mod split;
mod vocab;

pub use enumerate::{enumerate_small_grammar, SmallGrammar};
pub use generator::{generate_synthetic, GeneratorConfig};
pub use split::{few_shot_split, FewShotSplit, FEW_SHOT_FRACTIONS};
pub use vocab::{open_symbol, Vocab, Vocabs, CLS, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("example `{id}`: {source}")]
    Treebank {
        id: String,
        #[source]
        source: TreebankError,
    },
    #[error("example `{id}`: {source}")]
    Decomposer {
        id: String,
        #[source]
        source: DecomposerError,
    },
    #[error("example `{0}` has an empty domain or locale")]
    MissingMetadata(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("target domain `{0}` has no examples to split")]
    EmptyTarget(String),
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

/// One utterance with its gold tree and the cached flattening of that tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub locale: String,
    pub domain: String,
    pub split: Option<Split>,
    tree: SemanticTree,
    frame: DecomposedFrame,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        locale: impl Into<String>,
        domain: impl Into<String>,
        tree: SemanticTree,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let locale = locale.into();
        let domain = domain.into();
        if locale.is_empty() || domain.is_empty() {
            return Err(CorpusError::MissingMetadata(id));
        }
        let frame = decompose(&tree).map_err(|source| CorpusError::Decomposer {
            id: id.clone(),
            source,
        })?;
        Ok(Example {
            id,
            locale,
            domain,
            split: None,
            tree,
            frame,
        })
    }

    pub fn with_split(mut self, split: Option<Split>) -> Self {
        self.split = split;
        self
    }

    pub fn tree(&self) -> &SemanticTree {
        &self.tree
    }

    pub fn frame(&self) -> &DecomposedFrame {
        &self.frame
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.tree.surfaces()
    }

    pub fn utterance(&self) -> String {
        self.tokens().join(" ")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(mut examples: Vec<Example>) -> Self {
        examples.sort_by(|a, b| a.id.cmp(&b.id));
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.examples.iter().map(|e| e.domain.as_str()).collect()
    }

    pub fn filter_domain(&self, domain: &str) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| e.domain == domain)
                .cloned()
                .collect(),
        }
    }
}

impl FromIterator<Example> for Dataset {
    fn from_iter<T: IntoIterator<Item = Example>>(iter: T) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = core::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainLabels {
    pub intents: BTreeSet<String>,
    pub slots: BTreeSet<String>,
}

/// Intent and slot label inventories per domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub domains: BTreeMap<String, DomainLabels>,
}

impl Ontology {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut ontology = Ontology::default();
        for ex in dataset {
            let labels = ontology.domains.entry(ex.domain.clone()).or_default();
            for node in ex.tree().root().nodes() {
                match node.kind {
                    NodeKind::Intent => labels.intents.insert(node.label.to_string()),
                    NodeKind::Slot => labels.slots.insert(node.label.to_string()),
                };
            }
        }
        ontology
    }

    pub fn contains(&self, domain: &str, kind: NodeKind, label: &str) -> bool {
        self.domains.get(domain).is_some_and(|d| match kind {
            NodeKind::Intent => d.intents.contains(label),
            NodeKind::Slot => d.slots.contains(label),
        })
    }
}
