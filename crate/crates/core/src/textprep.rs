//! Social-media text normalization and vocabulary construction.
//!
//! Stage order: contractions → emoji → entities/punctuation → lowercase →
//! whitespace tokenization → stopwords. Contractions go first because entity
//! stripping deletes the apostrophes they are keyed on.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONTRACTIONS_TSV: &str = include_str!("../assets/contractions.tsv");
const STOPWORDS_TXT: &str = include_str!("../assets/stopwords.txt");
const EMOJI_TSV: &str = include_str!("../assets/emoji.tsv");

fn data_lines(asset: &'static str) -> impl Iterator<Item = &'static str> {
    asset
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
}

struct Contractions {
    pattern: Regex,
    expansions: HashMap<String, String>,
}

static CONTRACTIONS: LazyLock<Contractions> = LazyLock::new(|| {
    let mut expansions = HashMap::new();
    for line in data_lines(CONTRACTIONS_TSV) {
        let (pat, exp) = line
            .split_once('\t')
            .expect("contractions.tsv: pattern<TAB>expansion");
        expansions.insert(pat.to_lowercase(), exp.to_string());
    }
    let mut keys: Vec<&String> = expansions.keys().collect();
    // Longest first so `can't've` wins over `can't`.
    keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alternation = keys
        .iter()
        .map(|k| regex::escape(k).replace('\'', "['’]"))
        .collect::<Vec<_>>()
        .join("|");
    let pattern = Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).expect("contraction regex");
    Contractions {
        pattern,
        expansions,
    }
});

static STOPWORDS: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| data_lines(STOPWORDS_TXT).map(str::trim).collect());

static EMOJI: LazyLock<HashMap<char, &'static str>> = LazyLock::new(|| {
    data_lines(EMOJI_TSV)
        .map(|line| {
            let (cp, name) = line.split_once('\t').expect("emoji.tsv: codepoint<TAB>name");
            let c = u32::from_str_radix(cp.trim(), 16)
                .ok()
                .and_then(char::from_u32)
                .expect("emoji.tsv: hex codepoint");
            (c, name)
        })
        .collect()
});

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").expect("url regex"));

/// Lowercase word tokens with no whitespace and no empty entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace) || t.to_lowercase() != **t)
        {
            return Err(Error::Config(format!("invalid token `{bad}`")));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSeq {
    /// Splits each item on whitespace and lowercases; empty pieces vanish.
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSeq(
            iter.into_iter()
                .flat_map(|s| {
                    s.as_ref()
                        .split_whitespace()
                        .map(str::to_lowercase)
                        .collect::<Vec<_>>()
                })
                .collect(),
        )
    }
}

pub fn expand_contractions(text: &str) -> String {
    let table = &*CONTRACTIONS;
    table
        .pattern
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let key = caps[0].to_lowercase().replace('’', "'");
            table
                .expansions
                .get(&key)
                .cloned()
                .unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

/// Codepoints treated as emoji (or emoji glue such as variation selectors,
/// skin tones and ZWJ) when they have no table entry.
fn is_emoji_like(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x200D
        | 0x20E3
        | 0xE0020..=0xE007F
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

pub fn replace_emoji(text: &str) -> String {
    let table = &*EMOJI;
    let mut out = String::with_capacity(text.len());
    let mut touched = false;
    for c in text.chars() {
        if let Some(name) = table.get(&c) {
            out.push(' ');
            out.push_str(name);
            out.push(' ');
            touched = true;
        } else if is_emoji_like(c) {
            touched = true;
        } else {
            out.push(c);
        }
    }
    if touched {
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        out
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF
            | 0x00D7
            | 0x00F7
            | 0x2010..=0x205E
            | 0x3000..=0x303F
            | 0xFF01..=0xFF0F)
}

/// Drops URLs, `#`/`@` tokens and punctuation, collapsing whitespace.
pub fn strip_entities(text: &str) -> String {
    let no_urls = URL.replace_all(text, " ");
    let mut kept: Vec<String> = Vec::new();
    for token in no_urls.split_whitespace() {
        if token.starts_with('#') || token.starts_with('@') {
            continue;
        }
        // Bare scheme fragments such as `http:` would otherwise survive as `http`.
        if token.to_ascii_lowercase().contains("http") {
            continue;
        }
        let cleaned: String = token.chars().filter(|&c| !is_punctuation(c)).collect();
        if !cleaned.is_empty() {
            kept.push(cleaned);
        }
    }
    kept.join(" ")
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(token)
}

pub fn remove_stopwords(tokens: &TokenSeq) -> TokenSeq {
    TokenSeq(
        tokens
            .0
            .iter()
            .filter(|t| !is_stopword(t))
            .cloned()
            .collect(),
    )
}

pub fn preprocess(text: &str) -> TokenSeq {
    let text = expand_contractions(text);
    let text = replace_emoji(&text);
    let text = strip_entities(&text);
    let lowered = text.to_lowercase();
    let tokens = TokenSeq(lowered.split_whitespace().map(str::to_string).collect());
    remove_stopwords(&tokens)
}

pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_freq: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    /// Number of entries including the padding slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Non-padding tokens in index order.
    pub fn words(&self) -> &[String] {
        &self.tokens[1..]
    }
}

/// Indexes tokens seen at least `min_freq` times by descending frequency,
/// ties broken lexicographically. Index 0 is the padding token.
pub fn build_vocab(corpus: &[TokenSeq], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in &seq.0 {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "no token reaches min_freq = {min_freq}"
        )));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens, min_freq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(words: &[&str]) -> TokenSeq {
        TokenSeq::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn asset_sizes() {
        assert!(CONTRACTIONS.expansions.len() >= 110);
        assert!(STOPWORDS.len() >= 140);
        for neg in ["no", "not", "nor", "cannot", "never"] {
            assert!(!is_stopword(neg), "{neg} must survive");
        }
    }

    #[test]
    fn contractions() {
        assert_eq!(expand_contractions("Can't stop"), "cannot stop");
        assert_eq!(expand_contractions("btw it works"), "by the way it works");
        assert_eq!(expand_contractions("vaccine works"), "vaccine works");
        assert_eq!(expand_contractions("It WON’T help"), "It will not help");
        assert_eq!(expand_contractions("they can't've"), "they cannot have");
        // word boundary: no match inside a longer word
        assert_eq!(expand_contractions("subtle"), "subtle");
    }

    #[test]
    fn entities() {
        assert_eq!(
            strip_entities("see https://t.co/abc #covid @who now!"),
            "see now"
        );
        assert_eq!(strip_entities("plain words"), "plain words");
        assert_eq!(strip_entities("end."), "end");
        assert_eq!(strip_entities("visit www.who.int today"), "visit today");
        assert_eq!(strip_entities("broken http: link"), "broken link");
    }

    #[test]
    fn emoji() {
        assert_eq!(replace_emoji("😊 good"), "smiling face good");
        assert_eq!(replace_emoji("no emoji"), "no emoji");
        assert_eq!(replace_emoji("\u{1FAE0}"), "");
        assert_eq!(replace_emoji("🤔🤔"), "thinking face thinking face");
        assert_eq!(replace_emoji("❤️ love"), "red heart love");
    }

    #[test]
    fn stopwords() {
        assert_eq!(
            remove_stopwords(&seq(&["the", "vaccine", "is", "safe"])),
            seq(&["vaccine", "safe"])
        );
        assert_eq!(remove_stopwords(&seq(&["not", "safe"])), seq(&["not", "safe"]));
        assert_eq!(remove_stopwords(&seq(&[])), seq(&[]));
    }

    #[test]
    fn pipeline_examples() {
        assert_eq!(
            preprocess("Can't stop!! 😂 https://t.co/x #covid @who"),
            seq(&["cannot", "stop", "face", "tears", "joy"])
        );
        let insta = preprocess(
            "🤔🤔🤔 biggest scam in history. No flu deaths, no pneumonia deaths, no influenza deaths... just \"COVID.\" 🤔🤔 wtf!",
        );
        assert_eq!(
            &insta.tokens()[..9],
            &["thinking", "face", "thinking", "face", "thinking", "face", "biggest", "scam", "history"]
        );
        assert!(preprocess("").is_empty());
    }

    #[test]
    fn token_seq_rejects_bad_tokens() {
        assert!(TokenSeq::new(vec!["a b".into()]).is_err());
        assert!(TokenSeq::new(vec!["".into()]).is_err());
        assert!(TokenSeq::new(vec!["Upper".into()]).is_err());
    }

    #[test]
    fn vocab_examples() {
        let corpus = vec![seq(&["a", "b", "a"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.get(PAD_TOKEN), Some(0));
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.get("b"), Some(2));
        let v2 = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v2.len(), 2);
        assert_eq!(v2.get("b"), None);
        assert!(build_vocab(&corpus, 3).is_err());
    }

    #[test]
    fn vocab_ties_lexicographic() {
        let corpus = vec![seq(&["z", "y", "x", "y", "z"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.words(), &["y".to_string(), "z".into(), "x".into()]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_tokens_are_clean(s in "[ -~😂🤔😊#@]{0,60}") {
                for t in preprocess(&s).tokens() {
                    prop_assert!(!t.chars().any(is_punctuation));
                    prop_assert!(!t.contains("http"));
                    prop_assert!(!t.is_empty());
                }
            }

            #[test]
            fn stopword_removal_preserves_order(words in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
                let input = TokenSeq::new(words.clone()).unwrap();
                let out = remove_stopwords(&input);
                let expected: Vec<String> = words.into_iter().filter(|w| !is_stopword(w)).collect();
                prop_assert_eq!(out.into_inner(), expected);
            }

            #[test]
            fn vocab_indices_contiguous(words in proptest::collection::vec("[a-e]{1,2}", 1..40)) {
                let corpus = vec![TokenSeq::new(words).unwrap()];
                let v = build_vocab(&corpus, 1).unwrap();
                for i in 0..v.len() {
                    prop_assert_eq!(v.get(v.token(i).unwrap()), Some(i));
                }
                prop_assert_eq!(build_vocab(&corpus, 1).unwrap(), v);
            }
        }
    }
}
