//! Evaluation metrics: word error rate, speaker-attributed WER over SOT
//! streams, and corpus BLEU.

use crate::sot::{SotSequence, Speaker};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("corpus size mismatch: {refs} references vs {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("hypothesis contains words before any speaker tag")]
    UntaggedHypothesis,
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Levenshtein distance with unit substitution/deletion/insertion costs.
pub fn edit_distance<A: AsRef<str>, B: AsRef<str>>(reference: &[A], hypothesis: &[B]) -> usize {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Word error rate: edit distance divided by reference length.
pub fn wer<A: AsRef<str>, B: AsRef<str>>(reference: &[A], hypothesis: &[B]) -> Result<f64> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerWer {
    pub self_wer: f64,
    pub other_wer: f64,
}

/// Speaker-attributed WER: both streams are split by speaker tag (the tags
/// are semantic, so no permutation search), WER is computed per speaker, and
/// the overall rate is total errors over total reference words.
pub fn sa_wer(reference: &SotSequence, hypothesis: &SotSequence) -> Result<(f64, SpeakerWer)> {
    let mut seen_tag = false;
    for item in hypothesis.items() {
        match item {
            crate::sot::SotItem::Tag(_) => seen_tag = true,
            crate::sot::SotItem::Word(_) if !seen_tag => {
                return Err(MetricError::UntaggedHypothesis)
            }
            _ => {}
        }
    }
    if reference.word_count() == 0 {
        return Err(MetricError::EmptyReference);
    }

    let mut total_errors = 0usize;
    let mut total_ref = 0usize;
    let mut per = [0.0f64; 2];
    for (i, spk) in Speaker::both().into_iter().enumerate() {
        let r = reference.words_of(spk);
        let h = hypothesis.words_of(spk);
        let errors = edit_distance(&r, &h);
        total_errors += errors;
        total_ref += r.len();
        per[i] = if r.is_empty() {
            if h.is_empty() {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            errors as f64 / r.len() as f64
        };
    }
    Ok((total_errors as f64 / total_ref as f64, SpeakerWer { self_wer: per[0], other_wer: per[1] }))
}

/// Corpus BLEU-4 in [0, 100]: geometric mean of modified n-gram precisions
/// (add-1 smoothing for n >= 2) times the brevity penalty
/// `exp(min(0, 1 - ref_len/hyp_len))`. Tokenization is whitespace split.
pub fn bleu<A: AsRef<str>, B: AsRef<str>>(references: &[A], hypotheses: &[B]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(MetricError::LengthMismatch { refs: references.len(), hyps: hypotheses.len() });
    }
    if references.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }

    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let mut ref_len = 0u64;
    let mut hyp_len = 0u64;
    for (r, h) in references.iter().zip(hypotheses) {
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        ref_len += r.len() as u64;
        hyp_len += h.len() as u64;
        for n in 1..=4usize {
            if h.len() < n {
                continue;
            }
            totals[n - 1] += (h.len() - n + 1) as u64;
            let mut ref_counts: std::collections::HashMap<&[&str], u64> =
                std::collections::HashMap::new();
            if r.len() >= n {
                for gram in r.windows(n) {
                    *ref_counts.entry(gram).or_insert(0) += 1;
                }
            }
            for gram in h.windows(n) {
                if let Some(c) = ref_counts.get_mut(gram) {
                    if *c > 0 {
                        *c -= 1;
                        matches[n - 1] += 1;
                    }
                }
            }
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0f64;
    for n in 0..4 {
        let (m, t) = if n == 0 {
            (matches[0] as f64, totals[0] as f64)
        } else {
            (matches[n] as f64 + 1.0, totals[n] as f64 + 1.0)
        };
        if m == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        log_sum += (m / t).ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sot::{serialize, SotItem, Speaker, TimedWord};

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn wer_identical_is_zero() {
        assert_eq!(wer(&words("a b c"), &words("a b c")).unwrap(), 0.0);
    }

    #[test]
    fn wer_single_substitution() {
        let r = wer(&words("a b c"), &words("a x c")).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wer_all_deletions() {
        assert_eq!(wer(&words("a b"), &Vec::<&str>::new()).unwrap(), 1.0);
    }

    #[test]
    fn wer_empty_reference_errors() {
        assert!(matches!(
            wer(&Vec::<&str>::new(), &words("a")),
            Err(MetricError::EmptyReference)
        ));
    }

    #[test]
    fn edit_distance_is_symmetric() {
        let a = words("the quick brown fox jumps");
        let b = words("quick brown the fox leaps now");
        assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
    }

    fn sot(pairs: &[(Speaker, &str)]) -> SotSequence {
        let mut t = 0;
        let mut tw = Vec::new();
        for &(spk, text) in pairs {
            for word in text.split_whitespace() {
                tw.push(TimedWord::new(word, spk, t, t + 10).unwrap());
                t += 20;
            }
        }
        serialize(&tw)
    }

    #[test]
    fn sa_wer_perfect_is_zero() {
        let r = sot(&[(Speaker::Wearer, "a b"), (Speaker::Partner, "C D")]);
        let (overall, per) = sa_wer(&r, &r).unwrap();
        assert_eq!(overall, 0.0);
        assert_eq!(per.self_wer, 0.0);
        assert_eq!(per.other_wer, 0.0);
    }

    #[test]
    fn sa_wer_swapped_tags_counted_by_split_oracle() {
        // Reference: SELF says "a b", OTHER says "c". Hypothesis has all
        // words right but every tag flipped. Oracle by hand: SELF stream
        // ref [a b] vs hyp [c] -> 2 errors; OTHER stream ref [c] vs
        // hyp [a b] -> 2 errors; overall 4/3.
        let r = sot(&[(Speaker::Wearer, "a b"), (Speaker::Partner, "c")]);
        let h = sot(&[(Speaker::Partner, "a b"), (Speaker::Wearer, "c")]);
        let (overall, per) = sa_wer(&r, &h).unwrap();
        assert!((overall - 4.0 / 3.0).abs() < 1e-12);
        assert!((per.self_wer - 1.0).abs() < 1e-12);
        assert!((per.other_wer - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sa_wer_missing_speaker_is_total_deletion() {
        let r = sot(&[(Speaker::Wearer, "a"), (Speaker::Partner, "x y")]);
        let h = sot(&[(Speaker::Wearer, "a")]);
        let (_, per) = sa_wer(&r, &h).unwrap();
        assert_eq!(per.other_wer, 1.0);
    }

    #[test]
    fn sa_wer_untagged_hypothesis_rejected() {
        let r = sot(&[(Speaker::Wearer, "a")]);
        let h = SotSequence::from_items(vec![
            SotItem::Word("stray".into()),
            SotItem::Tag(Speaker::Wearer),
            SotItem::Word("a".into()),
        ]);
        assert!(matches!(sa_wer(&r, &h), Err(MetricError::UntaggedHypothesis)));
    }

    #[test]
    fn sa_wer_single_speaker_equals_plain_wer() {
        let r = sot(&[(Speaker::Wearer, "a b c d")]);
        let h = sot(&[(Speaker::Wearer, "a x c")]);
        let (overall, per) = sa_wer(&r, &h).unwrap();
        let plain = wer(&words("a b c d"), &words("a x c")).unwrap();
        assert_eq!(overall, plain);
        assert_eq!(per.self_wer, plain);
    }

    #[test]
    fn bleu_perfect_match_is_100() {
        let c = vec!["the cat sat on the mat", "a b c d e"];
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_empty_hypotheses_score_zero() {
        let r = vec!["the cat sat"];
        let h = vec![""];
        assert_eq!(bleu(&r, &h).unwrap(), 0.0);
    }

    #[test]
    fn bleu_matches_hand_worked_precisions() {
        // ref "the cat sat on the mat" (6), hyp "the cat on the mat" (5).
        // 1-grams: clipped matches 5 of 5.
        // 2-grams: "the cat", "on the", "the mat" match -> 3 of 4, smoothed (3+1)/(4+1).
        // 3-grams: "on the mat" -> 1 of 3, smoothed (1+1)/(3+1).
        // 4-grams: none of 2, smoothed (0+1)/(2+1).
        // BP = exp(1 - 6/5).
        let p1: f64 = 5.0 / 5.0;
        let p2: f64 = 4.0 / 5.0;
        let p3: f64 = 2.0 / 4.0;
        let p4: f64 = 1.0 / 3.0;
        let expected = 100.0
            * (1.0f64 - 6.0 / 5.0).exp()
            * ((p1.ln() + p2.ln() + p3.ln() + p4.ln()) / 4.0).exp();
        let got = bleu(&["the cat sat on the mat"], &["the cat on the mat"]).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn bleu_is_invariant_to_corpus_order() {
        let refs = vec!["one two three four", "five six seven", "eight nine ten eleven twelve"];
        let hyps = vec!["one two three five", "five six seven", "eight nine twelve"];
        let a = bleu(&refs, &hyps).unwrap();
        let perm = [2usize, 0, 1];
        let refs2: Vec<&str> = perm.iter().map(|&i| refs[i]).collect();
        let hyps2: Vec<&str> = perm.iter().map(|&i| hyps[i]).collect();
        let b = bleu(&refs2, &hyps2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bleu_length_mismatch_rejected() {
        assert!(matches!(
            bleu(&["a"], &Vec::<&str>::new()),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            bleu(&Vec::<&str>::new(), &Vec::<&str>::new()),
            Err(MetricError::EmptyCorpus)
        ));
    }
}
