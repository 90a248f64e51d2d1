//! Serialized output training labels for two-speaker bilingual conversations.
//!
//! A conversation's words (each carrying speaker and start/end times) become
//! one output stream: words sorted by end time, with a speaker tag inserted
//! at the front and at every speaker change. The translation-side stream is
//! built by giving each target word the end time of its aligned source words
//! and serializing the result the same way.

use serde::{Deserialize, Serialize};

use crate::rnnt::{AlignmentPath, Emit};

#[derive(Debug, thiserror::Error)]
pub enum SotError {
    #[error("word '{0}' has start time after end time ({1} > {2})")]
    BadTimes(String, u64, u64),
    #[error("alignment pair ({src}, {tgt}) out of range: {detail}")]
    AlignmentOutOfRange { src: usize, tgt: usize, detail: String },
    #[error("source word boundaries do not partition the character stream at index {0}")]
    BoundaryGap(usize),
    #[error("path emits {path} labels but the piece-to-word map has {map}")]
    PieceCountMismatch { path: usize, map: usize },
    #[error("piece {piece} emitted at character {pos}, outside every word boundary")]
    EmissionOutsideBoundaries { piece: usize, pos: usize },
    #[error("malformed SOT sequence: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, SotError>;

/// SELF is the smart-glasses wearer, OTHER the conversational partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "SELF")]
    Wearer,
    #[serde(rename = "OTHER")]
    Partner,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Wearer => "<SELF>",
            Speaker::Partner => "<OTHER>",
        }
    }

    pub fn both() -> [Speaker; 2] {
        [Speaker::Wearer, Speaker::Partner]
    }
}

/// A word with speaker attribution and time span in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub speaker: Speaker,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TimedWord {
    pub fn new(text: impl Into<String>, speaker: Speaker, start_ms: u64, end_ms: u64) -> Result<Self> {
        let text = text.into();
        if start_ms > end_ms {
            return Err(SotError::BadTimes(text, start_ms, end_ms));
        }
        Ok(TimedWord { text, speaker, start_ms, end_ms })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SotItem {
    Tag(Speaker),
    Word(String),
}

/// A serialized output stream: speaker tags interleaved with words.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SotSequence {
    items: Vec<SotItem>,
}

impl SotSequence {
    /// Wrap items without validation (decoded hypotheses may be malformed;
    /// call [`SotSequence::validate`] to check the invariants).
    pub fn from_items(items: Vec<SotItem>) -> Self {
        SotSequence { items }
    }

    pub fn items(&self) -> &[SotItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// First item is a tag; no two consecutive tags.
    pub fn validate(&self) -> Result<()> {
        let mut prev_was_tag = false;
        for (i, item) in self.items.iter().enumerate() {
            match item {
                SotItem::Tag(_) => {
                    if i == 0 {
                        prev_was_tag = true;
                        continue;
                    }
                    if prev_was_tag {
                        return Err(SotError::Malformed(format!("consecutive tags at item {i}")));
                    }
                    prev_was_tag = true;
                }
                SotItem::Word(w) => {
                    if i == 0 {
                        return Err(SotError::Malformed(format!("leading word '{w}' before any tag")));
                    }
                    prev_was_tag = false;
                }
            }
        }
        Ok(())
    }

    pub fn tag_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, SotItem::Tag(_))).count()
    }

    pub fn word_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, SotItem::Word(_))).count()
    }

    /// Tagged segments in stream order.
    pub fn turns(&self) -> Vec<(Speaker, Vec<&str>)> {
        let mut turns: Vec<(Speaker, Vec<&str>)> = Vec::new();
        for item in &self.items {
            match item {
                SotItem::Tag(s) => turns.push((*s, Vec::new())),
                SotItem::Word(w) => {
                    if let Some(last) = turns.last_mut() {
                        last.1.push(w);
                    }
                }
            }
        }
        turns
    }

    /// One speaker's words across all their segments, in stream order.
    pub fn words_of(&self, speaker: Speaker) -> Vec<&str> {
        let mut out = Vec::new();
        let mut current = None;
        for item in &self.items {
            match item {
                SotItem::Tag(s) => current = Some(*s),
                SotItem::Word(w) => {
                    if current == Some(speaker) {
                        out.push(w.as_str());
                    }
                }
            }
        }
        out
    }

    /// Space-joined rendering with literal `<SELF>` / `<OTHER>` tags.
    pub fn text(&self) -> String {
        self.items
            .iter()
            .map(|i| match i {
                SotItem::Tag(s) => s.tag(),
                SotItem::Word(w) => w.as_str(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Sort words chronologically by end time and insert speaker-change tags.
///
/// Ties on end time order SELF before OTHER, then earlier start, then input
/// order (the sort is stable).
pub fn serialize(words: &[TimedWord]) -> SotSequence {
    let mut sorted: Vec<&TimedWord> = words.iter().collect();
    sorted.sort_by_key(|w| (w.end_ms, w.speaker, w.start_ms));

    let mut items = Vec::new();
    let mut current: Option<Speaker> = None;
    for w in sorted {
        if current != Some(w.speaker) {
            items.push(SotItem::Tag(w.speaker));
            current = Some(w.speaker);
        }
        items.push(SotItem::Word(w.text.clone()));
    }
    SotSequence { items }
}

/// Many-to-many word links between one speaker's source words and their
/// translation, both indexed in sentence order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WordAlignment {
    pub pairs: Vec<(usize, usize)>,
}

impl WordAlignment {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        WordAlignment { pairs }
    }

    /// Source indices linked to one target word.
    pub fn sources_of(&self, target: usize) -> Vec<usize> {
        self.pairs.iter().filter(|&&(_, t)| t == target).map(|&(s, _)| s).collect()
    }
}

/// One speaker's translated words plus the text-to-text alignment back to
/// that speaker's source words.
#[derive(Debug, Clone)]
pub struct SpeakerTranslation {
    pub speaker: Speaker,
    pub words: Vec<String>,
    pub alignment: WordAlignment,
}

/// Build the translation-side SOT stream: each target word inherits the
/// latest end time of its linked source words, then everything is serialized
/// chronologically. Unlinked target words attach to the previous linked
/// target word's time, or to the speaker's segment start when there is none.
pub fn translate_sot(source: &[TimedWord], translations: &[SpeakerTranslation]) -> Result<SotSequence> {
    let mut timed: Vec<TimedWord> = Vec::new();
    for tr in translations {
        let speaker_source: Vec<&TimedWord> =
            source.iter().filter(|w| w.speaker == tr.speaker).collect();
        for &(s, t) in &tr.alignment.pairs {
            if s >= speaker_source.len() || t >= tr.words.len() {
                return Err(SotError::AlignmentOutOfRange {
                    src: s,
                    tgt: t,
                    detail: format!(
                        "{} source words, {} target words for {}",
                        speaker_source.len(),
                        tr.words.len(),
                        tr.speaker.tag()
                    ),
                });
            }
        }
        let segment_start = speaker_source.iter().map(|w| w.start_ms).min().unwrap_or(0);
        let mut prev_time: Option<(u64, u64)> = None;
        for (t, text) in tr.words.iter().enumerate() {
            let links = tr.alignment.sources_of(t);
            let (start, end) = if links.is_empty() {
                match prev_time {
                    Some((_, end)) => (end, end),
                    None => (segment_start, segment_start),
                }
            } else {
                let start = links.iter().map(|&s| speaker_source[s].start_ms).min().unwrap();
                let end = links.iter().map(|&s| speaker_source[s].end_ms).max().unwrap();
                prev_time = Some((start, end));
                (start, end)
            };
            timed.push(TimedWord::new(text.clone(), tr.speaker, start, end)?);
        }
    }
    Ok(serialize(&timed))
}

/// Derive a word alignment from a lattice best path over a character-input
/// translation model: target word `w` links to the source word containing
/// the character position at which `w`'s first piece was emitted.
///
/// `source_word_boundaries` are half-open character ranges that must
/// partition the stream; `target_piece_to_word[k]` maps the k-th emitted
/// piece to its target word.
pub fn alignment_from_viterbi(
    path: &AlignmentPath,
    source_word_boundaries: &[(usize, usize)],
    target_piece_to_word: &[usize],
) -> Result<WordAlignment> {
    let mut expected = 0;
    for &(lo, hi) in source_word_boundaries {
        if lo != expected || hi <= lo {
            return Err(SotError::BoundaryGap(lo));
        }
        expected = hi;
    }

    let label_steps: Vec<usize> =
        path.steps.iter().filter(|s| s.emit == Emit::Label).map(|s| s.t - 1).collect();
    if label_steps.len() != target_piece_to_word.len() {
        return Err(SotError::PieceCountMismatch {
            path: label_steps.len(),
            map: target_piece_to_word.len(),
        });
    }

    let word_at = |pos: usize| -> Option<usize> {
        source_word_boundaries.iter().position(|&(lo, hi)| pos >= lo && pos < hi)
    };

    let mut pairs = Vec::new();
    let mut linked = vec![false; target_piece_to_word.len()];
    for (k, &pos) in label_steps.iter().enumerate() {
        let w = target_piece_to_word[k];
        if w < linked.len() && linked[w] {
            continue; // only the first piece of a word creates the link
        }
        let src = word_at(pos).ok_or(SotError::EmissionOutsideBoundaries { piece: k, pos })?;
        if w >= linked.len() {
            return Err(SotError::AlignmentOutOfRange {
                src,
                tgt: w,
                detail: format!("piece map names word {w} of {}", linked.len()),
            });
        }
        linked[w] = true;
        pairs.push((src, w));
    }
    Ok(WordAlignment::new(pairs))
}
