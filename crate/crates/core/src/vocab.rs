//! Sub-token vocabulary for schema element names.
//!
//! Names are split on `_` and each piece is segmented greedily against an
//! inventory of pieces seen in the catalog. Compound pieces that are fully
//! covered by other inventory entries (`countrylanguage` = `country` +
//! `language`) are left out of the inventory so they segment.

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::catalog::{normalize, SchemaCatalog};

pub type TokenId = u32;

pub const SEP: TokenId = 0;
pub const EOS: TokenId = 1;
pub const JOINER: TokenId = 2;

const RESERVED: [&str; 3] = ["<sep>", "</s>", "_"];
const MIN_COMPONENT: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventory {
    pieces: BTreeSet<String>,
    longest: usize,
}

impl Inventory {
    pub fn from_pieces<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let base: BTreeSet<String> = pieces
            .into_iter()
            .map(|p| p.as_ref().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let pieces: BTreeSet<String> = base
            .iter()
            .filter(|p| !is_compound(p, &base))
            .cloned()
            .collect();
        let longest = pieces.iter().map(String::len).max().unwrap_or(0);
        Self { pieces, longest }
    }

    /// Inventory over every `_`-separated piece of every database, table and
    /// column name in the catalog.
    pub fn from_catalog(catalog: &SchemaCatalog) -> Self {
        let mut names = element_names(catalog);
        for db in catalog.databases() {
            for t in &db.tables {
                names.extend(t.columns.iter().map(|c| c.normalized.clone()));
            }
        }
        Self::from_pieces(names.iter().flat_map(|n| n.split('_').map(str::to_string).collect::<Vec<_>>()))
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.pieces.contains(piece)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Greedy longest-match segmentation; unmatched characters become
    /// single-character pieces.
    pub fn segment<'a>(&self, piece: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut rest = piece;
        while !rest.is_empty() {
            let max = self.longest.min(rest.len());
            let hit = (1..=max)
                .rev()
                .filter(|&l| rest.is_char_boundary(l))
                .find(|&l| self.pieces.contains(&rest[..l]));
            let len = hit.unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
            out.push(&rest[..len]);
            rest = &rest[len..];
        }
        out
    }

    /// Splits a name into words: `_` boundaries plus inventory segmentation.
    pub fn words(&self, name: &str) -> Vec<String> {
        normalize(name)
            .split('_')
            .flat_map(|p| {
                let seg = self.segment(p);
                // Keep the piece whole when segmentation degenerates to characters.
                if seg.iter().any(|s| s.len() == 1 && p.len() > 1) {
                    vec![p.to_string()]
                } else {
                    seg.into_iter().map(str::to_string).collect()
                }
            })
            .collect()
    }
}

/// True when `piece` splits entirely into at least two other base pieces of
/// length >= 3.
fn is_compound(piece: &str, base: &BTreeSet<String>) -> bool {
    let n = piece.len();
    if n < 2 * MIN_COMPONENT {
        return false;
    }
    // parts[i]: fewest components covering piece[..i], if any.
    let mut parts: Vec<Option<usize>> = vec![None; n + 1];
    parts[0] = Some(0);
    for end in MIN_COMPONENT..=n {
        for start in 0..=end - MIN_COMPONENT {
            let (Some(k), true) = (parts[start], piece.is_char_boundary(start) && piece.is_char_boundary(end)) else {
                continue;
            };
            let sub = &piece[start..end];
            if sub != piece && base.contains(sub) {
                parts[end] = Some(parts[end].map_or(k + 1, |p: usize| p.min(k + 1)));
            }
        }
    }
    parts[n].is_some_and(|k| k >= 2)
}

/// Normalized database ids and table names of the catalog.
pub fn element_names(catalog: &SchemaCatalog) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for db in catalog.databases() {
        names.insert(normalize(&db.id));
        for t in &db.tables {
            names.insert(t.normalized.clone());
        }
    }
    names
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    inventory: Inventory,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(inventory: Inventory) -> Self {
        let mut vocab = Self {
            inventory,
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        let mut extra: BTreeSet<String> = vocab.inventory.pieces.clone();
        extra.extend(('a'..='z').chain('0'..='9').map(String::from));
        vocab.tokens.extend(extra.into_iter().filter(|t| !RESERVED.contains(&t.as_str())));
        vocab.index = vocab
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        vocab
    }

    pub fn from_catalog(catalog: &SchemaCatalog) -> Self {
        Self::new(Inventory::from_catalog(catalog))
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Sub-token strings of a normalized name; concatenation gives the name.
    pub fn tokenize(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (i, piece) in name.split('_').enumerate() {
            if i > 0 {
                out.push(RESERVED[JOINER as usize].to_string());
            }
            out.extend(self.inventory.segment(piece).into_iter().map(str::to_string));
        }
        out
    }

    pub fn encode(&self, name: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (i, piece) in name.split('_').enumerate() {
            if i > 0 {
                out.push(JOINER);
            }
            for sub in self.inventory.segment(piece) {
                // Characters outside the vocabulary only arise from
                // non-normalized input; map them through their own fallback.
                match self.id(sub) {
                    Some(id) => out.push(id),
                    None => out.extend(sub.chars().filter_map(|c| self.id(&c.to_string()))),
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.token(id)).collect()
    }

    /// Stable fingerprint of the token list, exchanged in the scorer handshake.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
