//! The shared desk-scale vocabulary and feature layout.
//!
//! One token table serves every toy task so checkpoints can initialize each
//! other: blank 0, speaker tags 1 and 2, word separator 3, lowercase letters
//! 4..30, uppercase letters 30..56. Features carry two direction-channel
//! groups of 27 dims each (26 letters + a word-gap marker): group A is
//! active while SELF speaks, group B while OTHER speaks.

use crate::sot::{SotItem, SotSequence, Speaker};

pub const BLANK_ID: usize = 0;
pub const SELF_TAG_ID: usize = 1;
pub const OTHER_TAG_ID: usize = 2;
pub const SPACE_ID: usize = 3;
const LOWER_BASE: usize = 4;
const UPPER_BASE: usize = 30;
pub const VOCAB_SIZE: usize = 56;

/// Letters plus the gap marker, per direction group.
pub const GROUP_DIM: usize = 27;
pub const GAP_DIM: usize = 26;
/// Total feature width: one group per speaker direction.
pub const FEATURE_DIM: usize = 2 * GROUP_DIM;

pub fn char_id(c: char) -> Option<usize> {
    match c {
        ' ' => Some(SPACE_ID),
        'a'..='z' => Some(LOWER_BASE + (c as usize - 'a' as usize)),
        'A'..='Z' => Some(UPPER_BASE + (c as usize - 'A' as usize)),
        _ => None,
    }
}

pub fn id_char(id: usize) -> Option<char> {
    match id {
        SPACE_ID => Some(' '),
        LOWER_BASE..=29 => Some((b'a' + (id - LOWER_BASE) as u8) as char),
        UPPER_BASE..=55 => Some((b'A' + (id - UPPER_BASE) as u8) as char),
        _ => None,
    }
}

/// 0-based letter index within its group, for feature one-hots.
pub fn letter_index(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        'A'..='Z' => Some(c as usize - 'A' as usize),
        _ => None,
    }
}

pub fn word_to_ids(word: &str) -> Vec<usize> {
    word.chars().filter_map(char_id).collect()
}

pub fn string_to_ids(s: &str) -> Vec<usize> {
    s.chars().filter_map(char_id).collect()
}

/// Piece stream of a word sequence: letters with a separator between words.
pub fn words_to_piece_ids<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, text) in texts.enumerate() {
        if i > 0 {
            out.push(SPACE_ID);
        }
        out.extend(word_to_ids(text));
    }
    out
}

/// For each piece of [`words_to_piece_ids`], the index of the word it
/// belongs to; separators attach to the preceding word.
pub fn piece_to_word_map<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, text) in texts.enumerate() {
        if i > 0 {
            out.push(i - 1);
        }
        out.extend(std::iter::repeat_n(i, text.chars().count()));
    }
    out
}

/// Case-flip: the deterministic toy "translation" of a word.
pub fn translate_word(word: &str) -> String {
    word.chars()
        .map(|c| {
            if c.is_ascii_lowercase() {
                c.to_ascii_uppercase()
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect()
}

/// Token stream of an SOT sequence: tags as tag IDs, words as letter IDs,
/// separator between words of the same segment.
pub fn sot_to_ids(seq: &SotSequence) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pending_word = false;
    for item in seq.items() {
        match item {
            SotItem::Tag(s) => {
                out.push(match s {
                    Speaker::Wearer => SELF_TAG_ID,
                    Speaker::Partner => OTHER_TAG_ID,
                });
                pending_word = false;
            }
            SotItem::Word(w) => {
                if pending_word {
                    out.push(SPACE_ID);
                }
                out.extend(word_to_ids(w));
                pending_word = true;
            }
        }
    }
    out
}

/// Parse a decoded token stream back into an SOT sequence. The result may
/// be malformed (words before any tag) for an untrained model; callers
/// validate where it matters.
pub fn ids_to_sot(ids: &[usize]) -> SotSequence {
    let mut items = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, items: &mut Vec<SotItem>| {
        if !word.is_empty() {
            items.push(SotItem::Word(std::mem::take(word)));
        }
    };
    for &id in ids {
        match id {
            SELF_TAG_ID => {
                flush(&mut word, &mut items);
                items.push(SotItem::Tag(Speaker::Wearer));
            }
            OTHER_TAG_ID => {
                flush(&mut word, &mut items);
                items.push(SotItem::Tag(Speaker::Partner));
            }
            SPACE_ID => flush(&mut word, &mut items),
            other => {
                if let Some(c) = id_char(other) {
                    word.push(c);
                }
            }
        }
    }
    flush(&mut word, &mut items);
    SotSequence::from_items(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sot::{serialize, TimedWord};

    #[test]
    fn char_ids_round_trip() {
        for c in ('a'..='z').chain('A'..='Z').chain(std::iter::once(' ')) {
            assert_eq!(id_char(char_id(c).unwrap()), Some(c));
        }
        assert!(char_id('!').is_none());
        assert!(id_char(BLANK_ID).is_none());
        assert!(id_char(VOCAB_SIZE).is_none());
    }

    #[test]
    fn sot_token_stream_round_trips() {
        let words = vec![
            TimedWord::new("ab", Speaker::Wearer, 0, 100).unwrap(),
            TimedWord::new("c", Speaker::Wearer, 150, 200).unwrap(),
            TimedWord::new("XY", Speaker::Partner, 250, 400).unwrap(),
        ];
        let seq = serialize(&words);
        let ids = sot_to_ids(&seq);
        assert_eq!(
            ids,
            vec![
                SELF_TAG_ID,
                char_id('a').unwrap(),
                char_id('b').unwrap(),
                SPACE_ID,
                char_id('c').unwrap(),
                OTHER_TAG_ID,
                char_id('X').unwrap(),
                char_id('Y').unwrap()
            ]
        );
        assert_eq!(ids_to_sot(&ids), seq);
    }

    #[test]
    fn translation_mapping_flips_case() {
        assert_eq!(translate_word("abc"), "ABC");
        assert_eq!(translate_word("XY"), "xy");
    }
}
