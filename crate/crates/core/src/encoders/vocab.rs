//! Closed vocabulary and the reversible word tokenizer.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use crate::chain::TEMPLATES;
use crate::microworld::{lower_first, rule_table, Kind, QUESTION_PREFIXES, QUESTION_SUFFIXES};

use super::EncoderError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<bos>", "<eos>"];
const PUNCT: [char; 4] = [',', '.', ';', '?'];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Words and trailing punctuation marks, in order.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let word = piece.trim_end_matches(PUNCT);
        if !word.is_empty() {
            out.push(word);
        }
        let tail = &piece[word.len()..];
        for (i, _) in tail.char_indices() {
            out.push(&tail[i..i + 1]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    /// Every word the rule table, question templates and chain
    /// linearization can produce, after the special tokens, sorted.
    pub fn builtin() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let mut set = BTreeSet::new();
            let mut add = |text: &str| {
                for w in split_words(text) {
                    set.insert(w.to_string());
                }
            };
            let expand = |text: &str| -> Vec<String> {
                let mut out = vec![text.to_string()];
                for ph in ["{subject}", "{actor}", "{each}"] {
                    out = out
                        .into_iter()
                        .flat_map(|t| {
                            if t.contains(ph) {
                                Kind::ALL.iter().map(|k| t.replace(ph, k.name())).collect()
                            } else {
                                vec![t]
                            }
                        })
                        .collect();
                }
                out
            };
            for p in QUESTION_PREFIXES.iter().chain(QUESTION_SUFFIXES.iter()) {
                add(p);
            }
            add("? , . ;");
            for t in TEMPLATES {
                add(t.causes);
                add(t.needs);
                add(t.separator);
            }
            for r in &rule_table().rules {
                for q in &r.question {
                    for t in expand(q) {
                        add(&t);
                        add(&lower_first(&t));
                    }
                }
                for n in &r.nodes {
                    for t in expand(&n.entity).into_iter().chain(expand(&n.variation)) {
                        add(&t);
                    }
                }
            }
            let words = SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(set.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())))
                .collect();
            Vocab::from_words(words)
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, EncoderError> {
        let words = split_words(text);
        if words.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let ids = words
            .into_iter()
            .map(|w| self.id(w).ok_or_else(|| EncoderError::OutOfVocabulary(w.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(TokenSequence { ids })
    }

    /// Inverse of [`tokenize`](Self::tokenize) on canonically spaced text.
    /// Special tokens are skipped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            let Some(w) = self.word(id) else { continue };
            if id < SPECIALS.len() {
                continue;
            }
            let is_punct = w.len() == 1 && w.chars().all(|c| PUNCT.contains(&c));
            if !out.is_empty() && !is_punct {
                out.push(' ');
            }
            out.push_str(w);
        }
        out
    }

    /// One word per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Self {
        Vocab::from_words(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(split_words("In this scene, what if? a; b."), ["In", "this", "scene", ",", "what", "if", "?", "a", ";", "b", "."]);
        assert_eq!(split_words("dog's foot"), ["dog's", "foot"]);
    }

    #[test]
    fn round_trip_and_errors() {
        let v = Vocab::builtin();
        let q = "Look at this picture. What happens if the ball is dropped in the next moment?";
        let t = v.tokenize(q).unwrap();
        assert_eq!(v.detokenize(&t.ids), q);
        assert_eq!(v.tokenize("   "), Err(EncoderError::EmptyInput));
        assert_eq!(v.tokenize("the zebra"), Err(EncoderError::OutOfVocabulary("zebra".into())));
        assert_eq!(Vocab::from_text(&v.to_text()), *v);
        assert!((150..=400).contains(&v.len()), "{} words", v.len());
    }
}
