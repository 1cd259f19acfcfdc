//! Tokenization, the special-token inventory, and template serialization.
//!
//! A triple `(h, r, t)` is laid out as
//! `<s> [H] h.. </s> </s> [R] r.. </s> </s> [T] t.. [E]`; a query stops at
//! `[T]`.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const DEFAULT_MAX_SEQ_LEN: usize = 35;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Char,
    Word,
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "char" => Ok(TokenizerMode::Char),
            "word" => Ok(TokenizerMode::Word),
            other => Err(format!("unknown tokenizer mode `{other}` (char|word)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: TokenId,
    pub unk: TokenId,
    pub bos: TokenId,
    pub sep: TokenId,
    pub head: TokenId,
    pub rel: TokenId,
    pub tail: TokenId,
    pub end: TokenId,
}

/// Literal forms of the special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 8] = ["<pad>", "<unk>", "<s>", "</s>", "[H]", "[R]", "[T]", "[E]"];

impl Specials {
    pub const FIXED: Specials = Specials {
        pad: 0,
        unk: 1,
        bos: 2,
        sep: 3,
        head: 4,
        rel: 5,
        tail: 6,
        end: 7,
    };

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    specials: Specials,
    mode: TokenizerMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
    mode: TokenizerMode,
}

impl Vocabulary {
    /// Builds a vocabulary over every character (or whitespace word) of the
    /// given surface strings. Ids are assigned in sorted token order after
    /// the eight specials.
    pub fn build<'a>(surfaces: impl IntoIterator<Item = &'a str>, mode: TokenizerMode) -> Result<Self> {
        let mut set = BTreeSet::new();
        let mut any = false;
        for s in surfaces {
            any = true;
            match mode {
                TokenizerMode::Char => set.extend(s.chars().map(String::from)),
                TokenizerMode::Word => set.extend(s.split_whitespace().map(String::from)),
            }
        }
        if !any || set.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let tokens = SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(set).collect();
        Ok(Self::from_tokens(tokens, Specials::FIXED, mode))
    }

    fn from_tokens(tokens: Vec<String>, specials: Specials, mode: TokenizerMode) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(SPECIAL_TOKENS.len())
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary {
            tokens,
            index,
            specials,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Tokenizes a surface string; unseen pieces map to `<unk>`.
    pub fn encode(&self, surface: &str) -> Vec<TokenId> {
        let lookup = |t: &str| self.index.get(t).copied().unwrap_or(self.specials.unk);
        match self.mode {
            TokenizerMode::Char => {
                let mut buf = [0u8; 4];
                surface.chars().map(|c| lookup(c.encode_utf8(&mut buf))).collect()
            }
            TokenizerMode::Word => surface.split_whitespace().map(lookup).collect(),
        }
    }

    /// Inverse of [`encode`](Self::encode) for non-special ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let pieces = ids.iter().map(|&id| self.token(id).unwrap_or("<unk>"));
        match self.mode {
            TokenizerMode::Char => pieces.collect(),
            TokenizerMode::Word => pieces.collect::<Vec<_>>().join(" "),
        }
    }

    /// Renders a serialized sequence: specials literally, surface runs decoded.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut run: Vec<TokenId> = Vec::new();
        for &id in ids {
            if self.specials.contains(id) {
                out.push_str(&self.decode(&run));
                run.clear();
                out.push_str(SPECIAL_TOKENS[id as usize]);
            } else {
                run.push(id);
            }
        }
        out.push_str(&self.decode(&run));
        out
    }

    fn layout(&self, head: &str, rel: &str, tail: Option<&str>, max_len: usize) -> Result<SerializedTriple> {
        let sp = self.specials;
        let (h, r) = (self.encode(head), self.encode(rel));
        let mut ids = Vec::with_capacity(9 + h.len() + r.len());
        ids.extend([sp.bos, sp.head]);
        let pos_h = 1;
        let head_span = ids.len()..ids.len() + h.len();
        ids.extend(&h);
        ids.extend([sp.sep, sp.sep, sp.rel]);
        let pos_r = ids.len() - 1;
        let rel_span = ids.len()..ids.len() + r.len();
        ids.extend(&r);
        ids.extend([sp.sep, sp.sep, sp.tail]);
        let pos_t = ids.len() - 1;
        let query_len = pos_t + 1;
        let (tail_span, pos_e) = match tail {
            Some(t) => {
                let t = self.encode(t);
                let span = ids.len()..ids.len() + t.len();
                ids.extend(&t);
                ids.push(sp.end);
                (span, Some(ids.len() - 1))
            }
            None => (query_len..query_len, None),
        };
        if ids.len() > max_len {
            return Err(Error::Truncation {
                what: match tail {
                    Some(t) => format!("triple ({head}, {rel}, {t})"),
                    None => format!("query ({head}, {rel}, ?)"),
                },
                len: ids.len(),
                max: max_len,
            });
        }
        Ok(SerializedTriple {
            ids,
            head_span,
            rel_span,
            tail_span,
            pos_h,
            pos_r,
            pos_t,
            pos_e,
            query_len,
        })
    }

    pub fn serialize_triple(&self, head: &str, rel: &str, tail: &str, max_len: usize) -> Result<SerializedTriple> {
        self.layout(head, rel, Some(tail), max_len)
    }

    pub fn serialize_query(&self, head: &str, rel: &str, max_len: usize) -> Result<SerializedTriple> {
        self.layout(head, rel, None, max_len)
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            tokens: self.tokens.clone(),
            specials: self.specials,
            mode: self.mode,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        if f.specials != Specials::FIXED
            || f.tokens.len() < SPECIAL_TOKENS.len()
            || f.tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS
        {
            return Err(Error::contract("vocabulary file has unexpected special tokens"));
        }
        let v = Self::from_tokens(f.tokens, f.specials, f.mode);
        if v.index.len() + SPECIAL_TOKENS.len() != v.tokens.len() {
            return Err(Error::contract("vocabulary file has duplicate tokens"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the persisted form; checkpoints record it.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Token ids of one serialized triple (or query prefix) with role positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerializedTriple {
    pub ids: Vec<TokenId>,
    pub head_span: Range<usize>,
    pub rel_span: Range<usize>,
    pub tail_span: Range<usize>,
    pub pos_h: usize,
    pub pos_r: usize,
    pub pos_t: usize,
    /// Absent for query prefixes.
    pub pos_e: Option<usize>,
    /// Index of the first tail-side position (`pos_t + 1`).
    pub query_len: usize,
}

impl SerializedTriple {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of head and relation subtokens (excluding markers).
    pub fn query_word_positions(&self) -> Vec<usize> {
        self.head_span.clone().chain(self.rel_span.clone()).collect()
    }

    /// Token ids predicted by the generation objective: tail subtokens and `[E]`.
    pub fn target_ids(&self) -> &[TokenId] {
        &self.ids[self.query_len..]
    }

    pub fn tail_ids(&self) -> &[TokenId] {
        &self.ids[self.tail_span.clone()]
    }

    /// The query prefix of a full triple.
    pub fn query_prefix(&self) -> SerializedTriple {
        SerializedTriple {
            ids: self.ids[..self.query_len].to_vec(),
            tail_span: self.query_len..self.query_len,
            pos_e: None,
            ..self.clone()
        }
    }
}
