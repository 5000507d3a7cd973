//! Symbol table shared by the LM and the CTC head.
//!
//! Content, cipher output, digits and punctuation are single characters; the
//! fixed prompt words get their own symbols (with an optional leading space)
//! so prompts stay short.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::synthdata::world::{prompt_texts, CHOICE_LABELS, CIPHER_ALPHABET, CONTENT_ALPHABET};

pub const PAD: usize = 0;
/// Opens the user turn.
pub const USER: usize = 1;
/// Opens the assistant turn.
pub const ASSISTANT: usize = 2;
pub const END: usize = 3;
pub const NUM_SPECIAL: usize = 4;
const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["<pad>", "<u>", "<a>", "<e>"];

/// Separates the two user-turn segments.
pub const SEPARATOR: &str = "\n";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    max_symbol_chars: usize,
}

fn prompt_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        if chars[i] == ' ' {
            i += 1;
        }
        let letters = chars[i..].iter().take_while(|c| c.is_ascii_alphabetic()).count();
        if letters >= 2 {
            out.push(chars[start..i + letters].iter().collect());
            i += letters;
        } else {
            i = start + 1;
        }
    }
    out
}

impl Tokenizer {
    /// The symbol table of the synthetic task world.
    pub fn standard() -> Self {
        let mut singles: BTreeSet<char> = BTreeSet::new();
        singles.extend(CONTENT_ALPHABET);
        singles.extend(CIPHER_ALPHABET);
        singles.extend(CHOICE_LABELS);
        singles.extend('0'..='9');
        singles.extend([' ', '\n']);
        let mut words: BTreeSet<String> = BTreeSet::new();
        for text in prompt_texts() {
            singles.extend(text.chars().filter(|c| !c.is_ascii_alphabetic()));
            words.extend(prompt_words(text));
        }
        let mut symbols: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        symbols.extend(singles.into_iter().map(String::from));
        symbols.extend(words);
        Self::from_symbols(symbols).expect("standard symbols are unique")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() <= NUM_SPECIAL || symbols[..NUM_SPECIAL] != SPECIAL_NAMES {
            return Err(Error::Input("symbol table must start with <pad> <u> <a> <e>".into()));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || index.insert(s.clone(), i).is_some() {
                return Err(Error::Input(format!("empty or duplicate symbol {s:?}")));
            }
        }
        let max_symbol_chars = symbols[NUM_SPECIAL..].iter().map(|s| s.chars().count()).max().unwrap_or(1);
        Ok(Self { symbols, index, max_symbol_chars })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.symbols).expect("strings serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_symbols(serde_json::from_str(s)?)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.index.get(symbol).copied().ok_or_else(|| Error::Input(format!("symbol {symbol:?} not in vocabulary")))
    }

    pub fn separator(&self) -> usize {
        self.index[SEPARATOR]
    }

    /// Greedy longest-match encoding, used for instructions.
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = text;
        'outer: while !rest.is_empty() {
            let ends: Vec<usize> = rest.char_indices().skip(1).map(|(i, _)| i).chain([rest.len()]).take(self.max_symbol_chars).collect();
            for &end in ends.iter().rev() {
                if let Some(&id) = self.index.get(&rest[..end]) {
                    if id >= NUM_SPECIAL {
                        out.push(id);
                        rest = &rest[end..];
                        continue 'outer;
                    }
                }
            }
            return Err(Error::Input(format!("cannot encode {:?} in {text:?}", rest.chars().next().unwrap_or(' '))));
        }
        Ok(out)
    }

    /// One symbol per character, used for content and answers.
    pub fn encode_chars(&self, text: &str) -> Result<Vec<usize>> {
        let mut buf = [0u8; 4];
        text.chars().map(|c| self.id(c.encode_utf8(&mut buf))).collect()
    }

    /// Concatenated symbol text; special symbols are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter(|&&i| i >= NUM_SPECIAL && i < self.symbols.len()).map(|&i| self.symbols[i].as_str()).collect()
    }

    /// Output size of the CTC head: blank plus every non-special symbol.
    pub fn ctc_vocab(&self) -> usize {
        1 + self.symbols.len() - NUM_SPECIAL
    }

    pub fn lm_to_ctc(&self, id: usize) -> Option<usize> {
        (NUM_SPECIAL..self.symbols.len()).contains(&id).then(|| id - NUM_SPECIAL + 1)
    }

    pub fn ctc_to_lm(&self, id: usize) -> Option<usize> {
        (1..self.ctc_vocab()).contains(&id).then(|| id - 1 + NUM_SPECIAL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_words_split_on_letter_runs() {
        assert_eq!(prompt_words("The answer is: "), vec!["The", " answer", " is"]);
        assert_eq!(prompt_words("A: x"), Vec::<String>::new());
    }

    #[test]
    fn prompts_round_trip_and_stay_short() {
        let t = Tokenizer::standard();
        for text in prompt_texts() {
            let ids = t.encode_text(text).unwrap();
            assert_eq!(t.decode(&ids), text);
            assert!(ids.len() * 2 < text.len(), "{text}: {}", ids.len());
        }
    }

    #[test]
    fn ctc_mapping_is_a_bijection() {
        let t = Tokenizer::standard();
        for id in NUM_SPECIAL..t.len() {
            assert_eq!(t.ctc_to_lm(t.lm_to_ctc(id).unwrap()), Some(id));
        }
        assert_eq!(t.lm_to_ctc(END), None);
        assert_eq!(t.ctc_to_lm(0), None);
    }

    #[test]
    fn json_round_trip() {
        let t = Tokenizer::standard();
        assert_eq!(Tokenizer::from_json(&t.to_json()).unwrap(), t);
    }
}
