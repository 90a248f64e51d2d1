//! Synthetic task generators: monotonic recognition, pair-swap reordering
//! translation, and two-speaker bilingual conversations with overlap.
//!
//! Every generator is a pure function of its arguments; a fixed seed
//! regenerates the dataset byte for byte.

use crate::numcore::Rng;
use crate::sot::{Speaker, SpeakerTranslation, TimedWord, WordAlignment};

use super::data::{Dataset, DatasetRecord, Frames, Split};
use super::vocab::{letter_index, translate_word, FEATURE_DIM, GAP_DIM, GROUP_DIM};

/// Raw feature frame duration; the desk model's time reduction of 3 brings
/// this to its 60 ms encoder frame.
pub const RAW_FRAME_MS: u32 = 20;
/// Every spoken symbol (letter or word gap) occupies this many raw frames.
pub const FRAMES_PER_SYMBOL: usize = 3;
const NOISE_SIGMA: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtMode {
    SwapPairs,
    Copy,
}

fn split_for(i: usize, n_train: usize, n_dev: usize) -> Split {
    if i < n_train {
        Split::Train
    } else if i < n_train + n_dev {
        Split::Dev
    } else {
        Split::Test
    }
}

fn total_records(n: usize) -> (usize, usize, usize) {
    (n, n / 10, n / 10)
}

/// Quantize noise to four decimals: keeps the stored files compact while
/// staying a pure function of the seed.
fn round4(x: f32) -> f32 {
    (x * 1e4).round() / 1e4
}

struct Event {
    frame: usize,
    group: usize,
    sym: usize,
}

fn render_features(events: &[Event], total_frames: usize, rng: &mut Rng) -> Frames {
    let mut data = Vec::with_capacity(total_frames * FEATURE_DIM);
    for _ in 0..total_frames * FEATURE_DIM {
        data.push(round4(rng.normal() * NOISE_SIGMA));
    }
    for e in events {
        data[e.frame * FEATURE_DIM + e.group * GROUP_DIM + e.sym] += 1.0;
    }
    Frames { t: total_frames, d: FEATURE_DIM, frame_ms: RAW_FRAME_MS, data }
}

fn random_word(rng: &mut Rng, vocab: usize, min_len: usize, max_len: usize, upper: bool) -> String {
    let len = rng.range_usize(min_len, max_len);
    (0..len)
        .map(|_| {
            let c = (b'a' + rng.below(vocab) as u8) as char;
            if upper {
                c.to_ascii_uppercase()
            } else {
                c
            }
        })
        .collect()
}

/// Lay one speaker's words on the timeline starting at `start_frame`:
/// letters then a gap symbol between words. Returns (timed words, acoustic
/// events, end frame).
fn lay_words(
    texts: &[String],
    speaker: Speaker,
    start_frame: usize,
) -> (Vec<TimedWord>, Vec<Event>, usize) {
    let group = match speaker {
        Speaker::Wearer => 0,
        Speaker::Partner => 1,
    };
    let mut events = Vec::new();
    let mut words = Vec::new();
    let mut cursor = start_frame;
    for (wi, text) in texts.iter().enumerate() {
        if wi > 0 {
            for k in 0..FRAMES_PER_SYMBOL {
                events.push(Event { frame: cursor + k, group, sym: GAP_DIM });
            }
            cursor += FRAMES_PER_SYMBOL;
        }
        let word_start = cursor;
        for c in text.chars() {
            let sym = letter_index(c).expect("generator vocabulary");
            for k in 0..FRAMES_PER_SYMBOL {
                events.push(Event { frame: cursor + k, group, sym });
            }
            cursor += FRAMES_PER_SYMBOL;
        }
        words.push(
            TimedWord::new(
                text.clone(),
                speaker,
                word_start as u64 * RAW_FRAME_MS as u64,
                cursor as u64 * RAW_FRAME_MS as u64,
            )
            .expect("monotone cursor"),
        );
    }
    (words, events, cursor)
}

/// Single-speaker monotonic recognition task: random words over the first
/// `vocab` lowercase letters, one-hot letter blocks of three frames plus
/// Gaussian noise (sigma 0.1), exact word times. The translation side is
/// the identity so the joint loss stays well-defined.
pub fn gen_toy_asr(n: usize, vocab: usize, seed: u64) -> Dataset {
    assert!((2..=26).contains(&vocab), "vocab must be in 2..=26");
    let mut rng = Rng::new(seed);
    let (n_train, n_dev, n_test) = total_records(n);
    let mut records = Vec::new();
    for i in 0..n_train + n_dev + n_test {
        let word_count = rng.range_usize(2, 4);
        let texts: Vec<String> =
            (0..word_count).map(|_| random_word(&mut rng, vocab, 1, 3, false)).collect();
        let (words, events, end) = lay_words(&texts, Speaker::Wearer, 0);
        let frames = render_features(&events, end, &mut rng);
        records.push(DatasetRecord {
            id: format!("asr-{i}"),
            split: split_for(i, n_train, n_dev),
            frames: Some(frames),
            source_chars: None,
            translation_words: words.clone(),
            words,
        });
    }
    Dataset { records }
}

/// Reorder-task word geometry: every word is a separator space plus
/// `MT_WORD_LEN` letters, so the word pitch equals the fast encoder's
/// five-character chunk and chunk visibility aligns with word boundaries
/// (the one-character right-context only ever reveals the next separator).
pub const MT_WORD_LEN: usize = 4;
pub const MT_WORD_PITCH: usize = MT_WORD_LEN + 1;

/// Gold alignment of the pair-swap task: target 2k comes from source 2k+1
/// and vice versa. An involution.
pub fn pair_swap_alignment(word_count: usize) -> WordAlignment {
    assert!(word_count % 2 == 0, "pair swap needs an even word count");
    let mut pairs = Vec::with_capacity(word_count);
    for k in 0..word_count / 2 {
        pairs.push((2 * k + 1, 2 * k));
        pairs.push((2 * k, 2 * k + 1));
    }
    WordAlignment::new(pairs)
}

/// Half-open character ranges of each word in the reorder stream; the
/// leading separator attaches to its word so the ranges partition the
/// stream.
pub fn mt_word_boundaries(word_count: usize, char_len: usize) -> Vec<(usize, usize)> {
    (0..word_count)
        .map(|i| (MT_WORD_PITCH * i, (MT_WORD_PITCH * (i + 1)).min(char_len)))
        .collect()
}

/// Swapped-pair target words with times inherited from the aligned source.
pub fn swap_pairs_targets(words: &[TimedWord]) -> Result<Vec<TimedWord>, super::HarnessError> {
    if words.len() % 2 != 0 {
        return Err(super::HarnessError::Data(format!(
            "pair swap needs an even word count, got {}",
            words.len()
        )));
    }
    let mut out = Vec::with_capacity(words.len());
    for pair in words.chunks_exact(2) {
        for src in [&pair[1], &pair[0]] {
            out.push(
                TimedWord::new(
                    translate_word(&src.text),
                    src.speaker,
                    src.start_ms,
                    src.end_ms,
                )
                .expect("source times are valid"),
            );
        }
    }
    Ok(out)
}

/// Character-stream reordering task: the source is a stream of
/// `MT_WORD_LEN`-letter words over the first `vocab` lowercase letters,
/// each prefixed by a separator space; the target is the uppercase mapping
/// with adjacent word pairs swapped (or the plain copy). Word times are
/// character positions.
pub fn gen_toy_reorder_mt(n: usize, vocab: usize, seed: u64, mode: MtMode) -> Dataset {
    assert!((2..=26).contains(&vocab), "vocab must be in 2..=26");
    let mut rng = Rng::new(seed);
    let (n_train, n_dev, n_test) = total_records(n);
    let mut records = Vec::new();
    for i in 0..n_train + n_dev + n_test {
        let word_count = match mode {
            MtMode::SwapPairs => 2 * rng.range_usize(1, 4),
            MtMode::Copy => rng.range_usize(1, 8),
        };
        let texts: Vec<String> = (0..word_count)
            .map(|_| random_word(&mut rng, vocab, MT_WORD_LEN, MT_WORD_LEN, false))
            .collect();
        let source_chars: String = texts.iter().map(|t| format!(" {t}")).collect();
        let words: Vec<TimedWord> = texts
            .iter()
            .enumerate()
            .map(|(w, text)| {
                TimedWord::new(
                    text.clone(),
                    Speaker::Wearer,
                    (MT_WORD_PITCH * w) as u64,
                    (MT_WORD_PITCH * (w + 1)) as u64,
                )
                .unwrap()
            })
            .collect();
        let translation_words = match mode {
            MtMode::SwapPairs => swap_pairs_targets(&words).expect("even by construction"),
            MtMode::Copy => words
                .iter()
                .map(|w| {
                    TimedWord::new(translate_word(&w.text), w.speaker, w.start_ms, w.end_ms)
                        .unwrap()
                })
                .collect(),
        };
        records.push(DatasetRecord {
            id: format!("mt-{i}"),
            split: split_for(i, n_train, n_dev),
            frames: None,
            source_chars: Some(source_chars),
            words,
            translation_words,
        });
    }
    Dataset { records }
}

/// Reconstruct the turn structure of a conversation record: maximal runs of
/// one speaker's words in start-time order.
pub fn conversation_turns(words: &[TimedWord]) -> Vec<(Speaker, Vec<usize>)> {
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by_key(|&i| (words[i].start_ms, words[i].end_ms, i));
    let mut turns: Vec<(Speaker, Vec<usize>)> = Vec::new();
    for i in order {
        match turns.last_mut() {
            Some((spk, idxs)) if *spk == words[i].speaker => idxs.push(i),
            _ => turns.push((words[i].speaker, vec![i])),
        }
    }
    turns
}

/// Per-speaker toy translations of a conversation: case-flipped words with a
/// pair-swap inside every turn (an odd trailing word maps in place).
pub fn conversation_translations(words: &[TimedWord]) -> Vec<SpeakerTranslation> {
    Speaker::both()
        .into_iter()
        .map(|spk| {
            // This speaker's words in time order, with turn boundaries.
            let turns = conversation_turns(words);
            let mut speaker_words: Vec<usize> = Vec::new();
            let mut turn_spans = Vec::new();
            for (turn_spk, idxs) in &turns {
                if *turn_spk == spk {
                    let start = speaker_words.len();
                    speaker_words.extend(idxs.iter().copied());
                    turn_spans.push((start, speaker_words.len()));
                }
            }
            let mut target_words = vec![String::new(); speaker_words.len()];
            let mut pairs = Vec::new();
            for &(lo, hi) in &turn_spans {
                let len = hi - lo;
                for j in 0..len {
                    let partner = if j % 2 == 0 && j + 1 < len {
                        j + 1
                    } else if j % 2 == 1 {
                        j - 1
                    } else {
                        j // odd trailing word
                    };
                    target_words[lo + j] = translate_word(&words[speaker_words[lo + partner]].text);
                    pairs.push((lo + partner, lo + j));
                }
            }
            SpeakerTranslation { speaker: spk, words: target_words, alignment: WordAlignment::new(pairs) }
        })
        .collect()
}

/// Two-speaker bilingual conversation: SELF speaks lowercase words, OTHER
/// uppercase; turns alternate, and with probability `overlap_prob` a turn
/// starts before the previous one ends. Features carry one direction
/// channel group per speaker. The recognition target is the serialized word
/// stream; the translation target applies the case-flip mapping with a
/// per-turn pair swap, times inherited through the alignment.
pub fn gen_conversation(n: usize, seed: u64, overlap_prob: f32) -> Dataset {
    assert!((0.0..=1.0).contains(&overlap_prob));
    let mut rng = Rng::new(seed);
    let (n_train, n_dev, n_test) = total_records(n);
    let mut records = Vec::new();
    for i in 0..n_train + n_dev + n_test {
        let turn_count = rng.range_usize(2, 3);
        let mut all_words = Vec::new();
        let mut all_events = Vec::new();
        let mut total_frames = 0usize;
        let mut prev_span: Option<(usize, usize)> = None;
        for turn in 0..turn_count {
            let speaker = if turn % 2 == 0 { Speaker::Wearer } else { Speaker::Partner };
            let word_count = rng.range_usize(1, 2);
            let texts: Vec<String> = (0..word_count)
                .map(|_| random_word(&mut rng, 26, 1, 2, speaker == Speaker::Partner))
                .collect();
            let start = match prev_span {
                None => 0,
                Some((prev_start, prev_end)) => {
                    let turn_len = prev_end - prev_start;
                    if turn_len > 1 && rng.chance(overlap_prob) {
                        prev_end - rng.range_usize(1, (turn_len - 1).min(4))
                    } else {
                        prev_end + 1
                    }
                }
            };
            let (words, events, end) = lay_words(&texts, speaker, start);
            prev_span = Some((start, end));
            total_frames = total_frames.max(end);
            all_words.extend(words);
            all_events.extend(events);
        }
        let frames = render_features(&all_events, total_frames, &mut rng);

        // Target-language words in per-speaker target order with inherited
        // times; the stored list reserializes into the translation stream.
        let translations = conversation_translations(&all_words);
        let mut translation_words = Vec::new();
        for tr in &translations {
            let speaker_words: Vec<&TimedWord> =
                conversation_turns(&all_words)
                    .iter()
                    .filter(|(s, _)| *s == tr.speaker)
                    .flat_map(|(_, idxs)| idxs.iter().map(|&i| &all_words[i]))
                    .collect();
            for (t, text) in tr.words.iter().enumerate() {
                let sources = tr.alignment.sources_of(t);
                let start = sources.iter().map(|&s| speaker_words[s].start_ms).min().unwrap();
                let end = sources.iter().map(|&s| speaker_words[s].end_ms).max().unwrap();
                translation_words
                    .push(TimedWord::new(text.clone(), tr.speaker, start, end).unwrap());
            }
        }

        records.push(DatasetRecord {
            id: format!("conv-{i}"),
            split: split_for(i, n_train, n_dev),
            frames: Some(frames),
            source_chars: None,
            words: all_words,
            translation_words,
        });
    }
    Dataset { records }
}

/// Fraction of turn transitions where the next turn starts before the
/// previous one ends.
pub fn overlap_fraction(dataset: &Dataset) -> f64 {
    let mut overlapping = 0usize;
    let mut transitions = 0usize;
    for r in &dataset.records {
        let turns = conversation_turns(&r.words);
        for pair in turns.windows(2) {
            let prev_end = pair[0].1.iter().map(|&i| r.words[i].end_ms).max().unwrap();
            let next_start = pair[1].1.iter().map(|&i| r.words[i].start_ms).min().unwrap();
            transitions += 1;
            if next_start < prev_end {
                overlapping += 1;
            }
        }
    }
    if transitions == 0 {
        0.0
    } else {
        overlapping as f64 / transitions as f64
    }
}
