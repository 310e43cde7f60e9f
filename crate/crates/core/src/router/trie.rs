//! Prefix tree over token sequences of a name set.

use std::collections::{BTreeMap, BTreeSet};

use crate::vocab::TokenId;

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    names: Vec<String>,
}

impl Default for TokenTrie {
    fn default() -> Self {
        Self {
            nodes: vec![Node::default()],
            names: Vec::new(),
        }
    }
}

impl TokenTrie {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<TokenId>)>,
        S: Into<String>,
    {
        let mut trie = Self::default();
        for (name, tokens) in entries {
            trie.insert(name.into(), &tokens);
        }
        trie
    }

    pub fn insert(&mut self, name: String, tokens: &[TokenId]) {
        let mut at = 0;
        for &t in tokens {
            at = match self.nodes[at].children.get(&t) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[at].children.insert(t, next);
                    next
                }
            };
        }
        if self.nodes[at].terminal.is_none() {
            self.names.push(name);
            self.nodes[at].terminal = Some(self.names.len() - 1);
        }
    }

    fn node(&self, prefix: &[TokenId]) -> Option<&Node> {
        let mut at = 0;
        for t in prefix {
            at = *self.nodes[at].children.get(t)?;
        }
        Some(&self.nodes[at])
    }

    /// True when some name starts with `prefix`.
    pub fn has_prefix(&self, prefix: &[TokenId]) -> bool {
        self.node(prefix).is_some()
    }

    /// Tokens that extend `prefix` towards at least one name.
    pub fn continuations(&self, prefix: &[TokenId]) -> BTreeSet<TokenId> {
        self.node(prefix)
            .map(|n| n.children.keys().copied().collect())
            .unwrap_or_default()
    }

    /// The name spelled exactly by `tokens`, if any.
    pub fn complete(&self, tokens: &[TokenId]) -> Option<&str> {
        self.node(tokens)?.terminal.map(|i| self.names[i].as_str())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
