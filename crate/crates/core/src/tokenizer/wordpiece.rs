use super::Vocab;

/// Words longer than this (in characters) become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

/// One subword with its character range `[start, end)` in the original text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordPiece {
    pub token: String,
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

/// Length-preserving lowercase: one character in, one character out.
///
/// Offsets into the original string stay valid because no character expands.
pub(crate) fn fold_case(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Splits on whitespace and isolates each punctuation character as its own word.
///
/// Returns `[start, end)` character ranges.
pub fn pre_split(chars: &[char]) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() || c.is_control() {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
        } else if is_punctuation(c) {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            words.push((i, i + 1));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, chars.len()));
    }
    words
}

/// Lowercases, pre-splits, then segments each word greedily, longest match first.
///
/// A word with no complete segmentation becomes one `[UNK]` covering the word.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocab) -> Vec<WordPiece> {
    let chars: Vec<char> = text.chars().collect();
    let lowered: Vec<char> = chars.iter().map(|c| fold_case(*c)).collect();
    let mut out = Vec::new();
    let mut candidate = String::new();
    for (ws, we) in pre_split(&chars) {
        let unk = WordPiece {
            token: super::UNK.to_string(),
            id: vocab.unk_id(),
            start: ws,
            end: we,
        };
        if we - ws > MAX_WORD_CHARS {
            out.push(unk);
            continue;
        }
        let mut pieces = Vec::new();
        let mut start = ws;
        let mut failed = false;
        while start < we {
            let mut found = None;
            let mut end = we;
            while end > start {
                candidate.clear();
                if start > ws {
                    candidate.push_str("##");
                }
                candidate.extend(&lowered[start..end]);
                if let Some(id) = vocab.id(&candidate) {
                    found = Some(WordPiece {
                        token: candidate.clone(),
                        id,
                        start,
                        end,
                    });
                    break;
                }
                end -= 1;
            }
            match found {
                Some(piece) => {
                    start = piece.end;
                    pieces.push(piece);
                }
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            out.push(unk);
        } else {
            out.extend(pieces);
        }
    }
    out
}
