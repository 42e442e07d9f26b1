use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";
pub const ARROW: &str = "→";

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const SEP_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;

/// Word-level vocabulary with single-character fallback.
///
/// Text rendering: tokens on one line are separated by a single space and
/// `<sep>` renders as a line break, so `encode(decode(ids)) == ids` for any
/// id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    pieces: Vec<String>,
}

impl TryFrom<VocabFile> for Vocab {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        Vocab::from_pieces(f.pieces)
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { pieces: v.pieces }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Empty vocabulary holding only the reserved pieces.
    pub fn new() -> Self {
        let mut v = Vocab {
            pieces: Vec::new(),
            index: HashMap::new(),
        };
        for p in [PAD, BOS, SEP, UNK] {
            v.add(p);
        }
        v
    }

    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let reserved = [PAD, BOS, SEP, UNK];
        if pieces.len() < reserved.len() || pieces.iter().zip(reserved).any(|(a, b)| a != b) {
            return Err(Error::input(format!(
                "vocab must start with the reserved pieces {reserved:?}"
            )));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::input(format!(
                    "vocab piece #{i} {p:?} is empty or contains whitespace"
                )));
            }
            if index.insert(p.clone(), i as TokenId).is_some() {
                return Err(Error::input(format!("duplicate vocab piece {p:?}")));
            }
        }
        Ok(Vocab { pieces, index })
    }

    /// Adds a piece if absent and returns its id.
    pub fn add(&mut self, piece: &str) -> TokenId {
        if let Some(&id) = self.index.get(piece) {
            return id;
        }
        let id = self.pieces.len() as TokenId;
        self.pieces.push(piece.to_string());
        self.index.insert(piece.to_string(), id);
        id
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Tokens for one whitespace-free word: the word itself if it is a
    /// piece, otherwise one token per character (`<unk>` when unknown).
    pub fn encode_word(&self, word: &str) -> Vec<TokenId> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        let mut buf = [0u8; 4];
        word.chars()
            .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            if i > 0 {
                out.push(SEP_ID);
            }
            for word in line.split_whitespace() {
                out.extend(self.encode_word(word));
            }
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            if id == SEP_ID {
                out.push('\n');
                line_start = true;
                continue;
            }
            if !line_start {
                out.push(' ');
            }
            out.push_str(self.piece(id).unwrap_or(UNK));
            line_start = false;
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vocab {
        let mut v = Vocab::new();
        for p in ["ab", "cd", "a", "b", "c", "d", "xa:"] {
            v.add(p);
        }
        v
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::new();
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(BOS), Some(BOS_ID));
        assert_eq!(v.id(SEP), Some(SEP_ID));
        assert_eq!(v.id(UNK), Some(UNK_ID));
    }

    #[test]
    fn char_fallback_and_unknown() {
        let v = sample();
        assert_eq!(v.encode("ab"), vec![v.id("ab").unwrap()]);
        assert_eq!(
            v.encode("abd"),
            vec![v.id("a").unwrap(), v.id("b").unwrap(), v.id("d").unwrap()]
        );
        assert_eq!(v.encode("az"), vec![v.id("a").unwrap(), UNK_ID]);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let v = sample();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<Vocab>(r#"{"pieces":["<pad>","<bos>","<sep>","<unk>","a","a"]}"#).is_err());
        assert!(serde_json::from_str::<Vocab>(r#"{"pieces":["a"]}"#).is_err());
    }

    proptest! {
        #[test]
        fn decode_then_encode_is_identity(ids in proptest::collection::vec(0u32..11, 0..30)) {
            let v = sample();
            prop_assert_eq!(v.encode(&v.decode(&ids)), ids);
        }
    }
}
