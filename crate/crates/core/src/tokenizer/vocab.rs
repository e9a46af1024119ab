use std::collections::HashMap;
use std::path::Path;

use super::wordpiece::{fold_case, pre_split};
use super::VocabError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Token ↔ id table. Ids are dense: the token on line `i` of a vocab file has id `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            let i = i as u32;
            if tok.is_empty() {
                return Err(VocabError::EmptyToken(i));
            }
            if let Some(first) = ids.insert(tok.clone(), i) {
                return Err(VocabError::Duplicate {
                    token: tok.clone(),
                    first,
                    second: i,
                });
            }
        }
        let find = |t: &'static str| ids.get(t).copied().ok_or(VocabError::MissingReserved(t));
        Ok(Self {
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            tokens,
            ids,
        })
    }

    /// Builds a vocabulary from raw training text.
    ///
    /// Layout: the four reserved tokens, then every distinct lowercased word
    /// by descending frequency, then `##` continuation pieces (every proper
    /// suffix of every word) by descending frequency, until `max_size`.
    /// Ties break lexicographically so the result is deterministic.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            let chars: Vec<char> = text.chars().collect();
            for (s, e) in pre_split(&chars) {
                let w: String = chars[s..e].iter().map(|c| fold_case(*c)).collect();
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = word_counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut suffix_counts: HashMap<String, usize> = HashMap::new();
        for (w, count) in &words {
            let chars: Vec<char> = w.chars().collect();
            for start in 1..chars.len() {
                let piece: String = std::iter::once("##".to_string())
                    .chain(std::iter::once(chars[start..].iter().collect::<String>()))
                    .collect();
                *suffix_counts.entry(piece).or_default() += count;
            }
        }
        let mut suffixes: Vec<(String, usize)> = suffix_counts.into_iter().collect();
        suffixes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for tok in words.into_iter().chain(suffixes).map(|(t, _)| t) {
            if tokens.len() >= max_size.max(RESERVED.len()) {
                break;
            }
            if seen.insert(tok.clone()) {
                tokens.push(tok);
            }
        }
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    pub fn from_lines(text: &str) -> Result<Self, VocabError> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn to_lines(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io(e.to_string()))?;
        Self::from_lines(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        std::fs::write(path, self.to_lines()).map_err(|e| VocabError::Io(e.to_string()))
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_tokens_required_and_distinct() {
        let toks = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(Vocab::from_tokens(toks(&[PAD, UNK, CLS, SEP, "a"])).is_ok());
        assert_eq!(
            Vocab::from_tokens(toks(&[PAD, UNK, CLS, "a"])),
            Err(VocabError::MissingReserved(SEP))
        );
        assert!(matches!(
            Vocab::from_tokens(toks(&[PAD, UNK, CLS, SEP, "a", "a"])),
            Err(VocabError::Duplicate { first: 4, second: 5, .. })
        ));
    }

    #[test]
    fn build_is_deterministic_and_ordered() {
        let texts = ["Book two tickets", "two tickets for tonight", "tickets!"];
        let v = Vocab::build(texts, 100);
        assert_eq!(&v.tokens()[..4], &[PAD, UNK, CLS, SEP]);
        assert_eq!(v.token(4), Some("tickets"));
        assert_eq!(v.token(5), Some("two"));
        assert!(v.id("##ets").is_some());
        assert!(v.id("Book").is_none());
        assert!(v.id("book").is_some());
        assert_eq!(v, Vocab::build(texts, 100));
        let capped = Vocab::build(texts, 6);
        assert_eq!(capped.len(), 6);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::build(["seven pm at the regal"], 50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.write(&path).unwrap();
        assert_eq!(Vocab::read(&path).unwrap(), v);
    }
}
