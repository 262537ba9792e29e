//! Tokenization and the closed dialog vocabulary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::lexicon::{Category, Color, Material};
use crate::math::fnv1a64;
use crate::world::SubGoalVerb;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const Q: u32 = 2;
pub const A: u32 = 3;
pub const SEP: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<q>", "<a>", "<sep>"];

/// Every word the instruction, hint and question-answer templates can emit.
const TEMPLATE_WORDS: &str = "please put all in one on slice a an boil make coffee clean \
    you need to next then where is what does look like the your left right front behind \
    in/on floor and made of which direction should i turn you don't move current sub-goal \
    do with my step now ? .";

/// Lowercases and splits on whitespace; `?`, `.`, `,` and `!` become separate tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in s.split_whitespace() {
        let lower = word.to_ascii_lowercase();
        let trimmed = lower.trim_end_matches(['?', '.', ',', '!']);
        if !trimmed.is_empty() {
            out.push(trimmed.to_string());
        }
        for c in lower[trimmed.len()..].chars() {
            out.push(c.to_string());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Special tokens followed by the sorted closed-world lexicon.
    pub fn standard() -> Vocab {
        let mut words = BTreeSet::new();
        let mut add = |s: &str| {
            for t in tokenize(s) {
                words.insert(t);
            }
        };
        add(TEMPLATE_WORDS);
        for c in Category::ALL {
            add(c.noun());
            add(c.phrase());
            add(c.plural());
            add(c.name());
        }
        for c in Color::ALL {
            add(c.word());
        }
        for m in Material::ALL {
            add(m.word());
        }
        for v in SubGoalVerb::ALL {
            add(v.word());
        }
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Vocab::from_tokens(tokens).expect("standard vocabulary is well-formed")
    }

    /// Fails unless the specials come first and tokens are unique.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Vocab> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return None;
        }
        let index: BTreeMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(|s| s.as_str()).unwrap_or("<unk>")
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// FNV-1a over the newline-joined token list.
    pub fn hash(&self) -> u64 {
        let mut joined = String::new();
        for t in &self.tokens {
            joined.push_str(t);
            joined.push('\n');
        }
        fnv1a64(joined.as_bytes())
    }

    /// Utterances joined by `<sep>`.
    pub fn encode_dialog(&self, utterances: &[String]) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, u) in utterances.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(self.encode(u));
        }
        out
    }

    /// `<q> question <a> answer`.
    pub fn encode_qa(&self, question: &str, answer: &str) -> Vec<u32> {
        let mut out = Vec::from([Q]);
        out.extend(self.encode(question));
        out.push(A);
        out.extend(self.encode(answer));
        out
    }
}
