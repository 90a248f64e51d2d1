//! Streaming greedy and beam decoding for transducer heads, token
//! finalization, and latency accounting.
//!
//! Decoding is frame-synchronous. During beam search a token becomes *final*
//! once it lies in the longest common prefix of every live hypothesis; since
//! hypotheses only ever extend, that prefix can only grow, so finalized
//! tokens never change. Emission and finalization times run on the stream
//! clock implied by the frame index plus the encoder's theoretical latency.

use crate::numcore::log_softmax_row;
use crate::rnnt::BLANK;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("latency statistics need at least one segment")]
    NoSegments,
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// A decodable transducer head: per-frame joiner logits conditioned on an
/// autoregressive label-side state.
pub trait TransducerHead {
    type State: Clone;

    fn num_frames(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Duration of one encoder frame on the stream clock.
    fn frame_ms(&self) -> u32;
    /// Mean algorithmic delay of the encoder feeding this head.
    fn encoder_latency_ms(&self) -> f64;
    /// Label-side state after consuming begin-of-stream.
    fn initial_state(&self) -> Self::State;
    fn advance(&self, state: &Self::State, token: usize) -> Self::State;
    /// Raw logits over the vocabulary at `frame` given the label state.
    fn logits(&self, frame: usize, state: &Self::State) -> Vec<f32>;
}

/// A decoding beam entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// 0-based encoder frame at which each token was emitted; non-decreasing.
    pub emit_frame: Vec<usize>,
    /// Log probability.
    pub score: f64,
    /// Length of the immutable prefix established during streaming.
    pub finalized_len: usize,
}

impl Hypothesis {
    fn empty() -> Self {
        Hypothesis { tokens: Vec::new(), emit_frame: Vec::new(), score: 0.0, finalized_len: 0 }
    }
}

/// A finalized output token with its stream-clock timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub token: usize,
    pub emit_time_ms: f64,
    pub finalize_time_ms: f64,
}

pub struct BeamResult {
    /// Hypotheses sorted by score, best first.
    pub nbest: Vec<Hypothesis>,
    /// One event per token of the top hypothesis, in emission order.
    pub events: Vec<EmissionEvent>,
}

/// Per frame, repeatedly take the distribution argmax: emit non-blank tokens
/// (advancing the label state) until blank wins or the per-frame cap is hit,
/// then move to the next frame. Ties prefer blank.
pub fn greedy_decode<H: TransducerHead>(head: &H, max_symbols_per_frame: usize) -> Hypothesis {
    assert!(max_symbols_per_frame >= 1);
    let mut hyp = Hypothesis::empty();
    let mut state = head.initial_state();
    for t in 0..head.num_frames() {
        let mut emitted = 0;
        loop {
            let mut lp = head.logits(t, &state);
            log_softmax_row(&mut lp);
            let best = argmax(&lp);
            if best == BLANK || emitted == max_symbols_per_frame {
                hyp.score += lp[BLANK] as f64;
                break;
            }
            hyp.score += lp[best] as f64;
            hyp.tokens.push(best);
            hyp.emit_frame.push(t);
            state = head.advance(&state, best);
            emitted += 1;
        }
    }
    hyp.finalized_len = hyp.tokens.len();
    hyp
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

struct Live<S> {
    tokens: Vec<usize>,
    emit_frame: Vec<usize>,
    score: f64,
    state: S,
}

impl<S: Clone> Clone for Live<S> {
    fn clone(&self) -> Self {
        Live {
            tokens: self.tokens.clone(),
            emit_frame: self.emit_frame.clone(),
            score: self.score,
            state: self.state.clone(),
        }
    }
}

/// Frame-synchronous beam search with carried state: feed frames one at a
/// time (`push_frame`) or all at once via [`beam_decode`]; the result is
/// identical either way.
pub struct BeamDecoder<H: TransducerHead> {
    beam: Vec<Live<H::State>>,
    beam_size: usize,
    max_symbols: usize,
    /// Finalized prefix so far: (token, emit_frame, finalize frame).
    finalized: Vec<(usize, usize, usize)>,
}

impl<H: TransducerHead> BeamDecoder<H> {
    pub fn new(head: &H, beam_size: usize, max_symbols_per_frame: usize) -> Self {
        assert!(beam_size >= 1);
        assert!(max_symbols_per_frame >= 1);
        BeamDecoder {
            beam: vec![Live {
                tokens: Vec::new(),
                emit_frame: Vec::new(),
                score: 0.0,
                state: head.initial_state(),
            }],
            beam_size,
            max_symbols: max_symbols_per_frame,
            finalized: Vec::new(),
        }
    }

    /// Tokens finalized so far (token, emit_frame, finalize_frame).
    pub fn finalized(&self) -> &[(usize, usize, usize)] {
        &self.finalized
    }

    pub fn push_frame(&mut self, head: &H, t: usize) {
        // (hypothesis, has taken its blank for this frame)
        let mut frontier: Vec<(Live<H::State>, bool)> =
            self.beam.drain(..).map(|h| (h, false)).collect();

        for _round in 0..self.max_symbols {
            if frontier.iter().all(|(_, moved)| *moved) {
                break;
            }
            let mut cands: Vec<(Live<H::State>, bool)> = Vec::new();
            for (h, moved) in frontier.drain(..) {
                if moved {
                    cands.push((h, true));
                    continue;
                }
                let mut lp = head.logits(t, &h.state);
                log_softmax_row(&mut lp);
                // Blank: park the hypothesis for this frame.
                let mut parked = h.clone();
                parked.score += lp[BLANK] as f64;
                cands.push((parked, true));
                // Top-K non-blank expansions keep expanding.
                for tok in top_k_non_blank(&lp, self.beam_size) {
                    let mut next = h.clone();
                    next.score += lp[tok] as f64;
                    next.tokens.push(tok);
                    next.emit_frame.push(t);
                    next.state = head.advance(&h.state, tok);
                    cands.push((next, false));
                }
            }
            sort_candidates(&mut cands);
            cands.truncate(self.beam_size);
            frontier = cands;
        }

        // Hypotheses still expanding at the cap take a forced blank.
        for (h, moved) in frontier.iter_mut() {
            if !*moved {
                let mut lp = head.logits(t, &h.state);
                log_softmax_row(&mut lp);
                h.score += lp[BLANK] as f64;
                *moved = true;
            }
        }
        sort_candidates(&mut frontier);
        self.beam = frontier.into_iter().map(|(h, _)| h).collect();

        // Finalize the longest common prefix of the beam. Hypotheses only
        // extend, so the prefix never shrinks.
        let lcp = beam_lcp(&self.beam);
        debug_assert!(lcp >= self.finalized.len());
        for i in self.finalized.len()..lcp {
            self.finalized.push((self.beam[0].tokens[i], self.beam[0].emit_frame[i], t));
        }
    }

    pub fn finish(self, head: &H) -> BeamResult {
        let frame_ms = head.frame_ms() as f64;
        let latency = head.encoder_latency_ms();
        let clock = |frame: usize| (frame + 1) as f64 * frame_ms + latency;
        let end_of_stream = head.num_frames() as f64 * frame_ms + latency;

        let finalized_len = self.finalized.len();
        let nbest: Vec<Hypothesis> = self
            .beam
            .iter()
            .map(|h| Hypothesis {
                tokens: h.tokens.clone(),
                emit_frame: h.emit_frame.clone(),
                score: h.score,
                finalized_len,
            })
            .collect();

        let mut events = Vec::new();
        if let Some(top) = self.beam.first() {
            for (i, (&tok, &ef)) in top.tokens.iter().zip(&top.emit_frame).enumerate() {
                let finalize_time_ms = if i < self.finalized.len() {
                    clock(self.finalized[i].2)
                } else {
                    // Unresolved at stream end: decoding is over, so the
                    // token becomes final when the stream does.
                    end_of_stream
                };
                events.push(EmissionEvent {
                    token: tok,
                    emit_time_ms: clock(ef),
                    finalize_time_ms,
                });
            }
        }
        BeamResult { nbest, events }
    }
}

fn top_k_non_blank(lp: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lp.len()).filter(|&i| i != BLANK).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn sort_candidates<S>(cands: &mut [(Live<S>, bool)]) {
    cands.sort_by(|(a, _), (b, _)| {
        b.score
            .total_cmp(&a.score)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
}

fn beam_lcp<S>(beam: &[Live<S>]) -> usize {
    let Some(first) = beam.first() else { return 0 };
    let mut lcp = first.tokens.len();
    for h in &beam[1..] {
        let mut n = 0;
        while n < lcp && n < h.tokens.len() && h.tokens[n] == first.tokens[n] {
            n += 1;
        }
        lcp = lcp.min(n);
    }
    lcp
}

/// Frame-synchronous beam search over the whole stream with N-best output
/// and per-token finalization events.
pub fn beam_decode<H: TransducerHead>(
    head: &H,
    beam_size: usize,
    max_symbols_per_frame: usize,
) -> BeamResult {
    let mut decoder = BeamDecoder::new(head, beam_size, max_symbols_per_frame);
    for t in 0..head.num_frames() {
        decoder.push_frame(head, t);
    }
    decoder.finish(head)
}

/// Mean algorithmic delay of a chunked streaming encoder: half a chunk plus
/// the right context.
pub fn theoretical_latency(chunk_ms: f64, right_context_ms: f64) -> f64 {
    chunk_ms / 2.0 + right_context_ms
}

/// Events of one decoded segment with the segment's stream-time bounds.
#[derive(Debug, Clone)]
pub struct SegmentEvents {
    pub events: Vec<EmissionEvent>,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    /// Median over segments of (first token finalize time - segment start).
    pub first_token_p50_ms: f64,
    /// Median over segments of (last token finalize time - segment end).
    pub last_token_p50_ms: f64,
    /// Finalize-minus-emit delay of every token, in stream order.
    pub per_token_delay_ms: Vec<f64>,
}

/// P50 latency of the first and last finalized token across segments.
/// Segments without events contribute nothing to the medians; the medians
/// are NaN when no segment produced output. The median of an even count is
/// the lower of the two middle values.
pub fn latency_stats(segments: &[SegmentEvents]) -> Result<LatencyStats> {
    if segments.is_empty() {
        return Err(DecodeError::NoSegments);
    }
    let mut firsts = Vec::new();
    let mut lasts = Vec::new();
    let mut delays = Vec::new();
    for seg in segments {
        if let (Some(first), Some(last)) = (seg.events.first(), seg.events.last()) {
            firsts.push(first.finalize_time_ms - seg.start_ms);
            lasts.push(last.finalize_time_ms - seg.end_ms);
        }
        for e in &seg.events {
            delays.push(e.finalize_time_ms - e.emit_time_ms);
        }
    }
    Ok(LatencyStats {
        first_token_p50_ms: median_lower(&mut firsts),
        last_token_p50_ms: median_lower(&mut lasts),
        per_token_delay_ms: delays,
    })
}

fn median_lower(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}
