use serde::{Deserialize, Serialize};

use super::{wordpiece_tokenize, AlignError, Vocab, WordPiece};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    System,
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Segment {
    First = 0,
    Second = 1,
}

/// Character range `[start, end)` inside one of the two utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub source: Source,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextOptions {
    pub max_len: usize,
    /// Append `[SEP]` after the user utterance, as BERT's pair format does.
    pub append_final_sep: bool,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self {
            max_len: 64,
            append_final_sep: false,
        }
    }
}

/// `[CLS] system [SEP] user` with per-token segment and character alignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedContext {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<Segment>,
    /// `None` for `[CLS]`, `[SEP]` and `[PAD]`.
    pub token_spans: Vec<Option<CharSpan>>,
    /// False only for `[PAD]` positions.
    pub attention_mask: Vec<bool>,
}

impl EncodedContext {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Index of the last token.
    pub fn last_index(&self) -> usize {
        self.token_ids.len() - 1
    }

    /// For positions `1..=n`: whether a decoded span may start or end there.
    pub fn span_positions(&self) -> Vec<bool> {
        self.token_spans[1..].iter().map(Option::is_some).collect()
    }

    /// Character range covered by tokens `start..=end`, if they share a source.
    pub fn char_span(&self, start: usize, end: usize) -> Option<CharSpan> {
        let first = (*self.token_spans.get(start)?)?;
        let last = (*self.token_spans.get(end)?)?;
        (start <= end && first.source == last.source).then_some(CharSpan {
            source: first.source,
            start: first.start,
            end: last.end,
        })
    }

    /// Last token index belonging to the same utterance as `index`.
    pub fn segment_end(&self, index: usize) -> usize {
        let Some(src) = self.token_spans[index].map(|s| s.source) else {
            return index;
        };
        let mut end = index;
        while end + 1 < self.len() && self.token_spans[end + 1].is_some_and(|s| s.source == src) {
            end += 1;
        }
        end
    }

    /// Appends masked `[PAD]` tokens up to `len`.
    pub fn pad_to(&mut self, len: usize, vocab: &Vocab) {
        while self.token_ids.len() < len {
            self.token_ids.push(vocab.pad_id());
            self.segment_ids.push(Segment::Second);
            self.token_spans.push(None);
            self.attention_mask.push(false);
        }
    }
}

/// Builds the encoder input for one turn.
///
/// When the pair exceeds `max_len`, the last token of whichever segment is
/// currently longer is dropped (the user segment on ties) until it fits.
pub fn build_context(system: &str, user: &str, vocab: &Vocab, opts: ContextOptions) -> EncodedContext {
    assert!(opts.max_len >= 4, "max_len must be at least 4");
    let mut sys = wordpiece_tokenize(system, vocab);
    let mut usr = wordpiece_tokenize(user, vocab);
    let budget = opts.max_len - 2 - usize::from(opts.append_final_sep);
    while sys.len() + usr.len() > budget {
        if sys.len() > usr.len() {
            sys.pop();
        } else {
            usr.pop();
        }
    }

    let total = sys.len() + usr.len() + 2 + usize::from(opts.append_final_sep);
    let mut ctx = EncodedContext {
        token_ids: Vec::with_capacity(total),
        segment_ids: Vec::with_capacity(total),
        token_spans: Vec::with_capacity(total),
        attention_mask: vec![true; total],
    };
    let special = |ctx: &mut EncodedContext, id: u32, seg: Segment| {
        ctx.token_ids.push(id);
        ctx.segment_ids.push(seg);
        ctx.token_spans.push(None);
    };
    let push_pieces = |ctx: &mut EncodedContext, pieces: Vec<WordPiece>, seg: Segment, source: Source| {
        for p in pieces {
            ctx.token_ids.push(p.id);
            ctx.segment_ids.push(seg);
            ctx.token_spans.push(Some(CharSpan {
                source,
                start: p.start,
                end: p.end,
            }));
        }
    };
    special(&mut ctx, vocab.cls_id(), Segment::First);
    push_pieces(&mut ctx, sys, Segment::First, Source::System);
    special(&mut ctx, vocab.sep_id(), Segment::First);
    push_pieces(&mut ctx, usr, Segment::Second, Source::User);
    if opts.append_final_sep {
        special(&mut ctx, vocab.sep_id(), Segment::Second);
    }
    ctx
}

/// Smallest token range `(start, end)` (inclusive, `1 ≤ start ≤ end ≤ n`)
/// whose characters cover `span`.
pub fn align_span(span: CharSpan, ctx: &EncodedContext) -> Result<(usize, usize), AlignError> {
    let fail = |reason| Err(AlignError { span, reason });
    if span.start >= span.end {
        return fail("empty character span");
    }
    let mut first = None;
    let mut last = None;
    for (i, tok) in ctx.token_spans.iter().enumerate() {
        let Some(tok) = tok else { continue };
        if tok.source == span.source && tok.start < span.end && tok.end > span.start {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    let (Some(first), Some(last)) = (first, last) else {
        return fail("no token overlaps the span (truncated or whitespace only)");
    };
    let (a, b) = (ctx.token_spans[first].unwrap(), ctx.token_spans[last].unwrap());
    if a.start > span.start || b.end < span.end {
        return fail("span extends into a truncated region");
    }
    Ok((first, last))
}
