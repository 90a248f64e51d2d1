//! Decodable head views over a frozen model.

use crate::decode::{theoretical_latency, TransducerHead};
use crate::numcore::Tensor;

use super::infer::PredState;
use super::{AsrPosition, FeatureSequence, Model, Result, Variant};

/// Which output head of the model a decoder drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Recognition (source-language) head.
    Asr,
    /// Translation (target-language) head.
    St,
}

/// A frozen model, one head, and precomputed encoder projections:
/// everything a frame-synchronous decoder needs.
pub struct ModelHead<'m> {
    model: &'m Model,
    kind: HeadKind,
    enc_proj: Tensor,
    frame_ms: u32,
    latency_ms: f64,
}

impl Model {
    fn head_chunk(&self, kind: HeadKind) -> usize {
        match (kind, self.config.asr_position) {
            (HeadKind::Asr, AsrPosition::Fast) => self.config.chunk_fast,
            _ => self.config.chunk_slow,
        }
    }

    fn build_head(&self, kind: HeadKind, enc: Tensor, frame_ms: u32) -> ModelHead<'_> {
        let chunk_ms = self.config.chunk_ms(self.head_chunk(kind));
        let rc_ms = self.config.right_context as f64 * self.config.frame_ms as f64;
        ModelHead {
            model: self,
            kind,
            enc_proj: self.enc_head_projection(kind, &enc),
            frame_ms,
            latency_ms: theoretical_latency(chunk_ms, rc_ms),
        }
    }

    /// Head over feature input (joint-model variant).
    pub fn feature_head(&self, kind: HeadKind, features: &FeatureSequence) -> Result<ModelHead<'_>> {
        debug_assert_eq!(self.config.variant, Variant::Jstar);
        let (fast, slow) = self.encode_features(features)?;
        let frame_ms = fast.frame_ms;
        let enc = match (kind, self.config.asr_position) {
            (HeadKind::Asr, AsrPosition::Fast) => fast.frames,
            _ => slow.frames,
        };
        Ok(self.build_head(kind, enc, frame_ms))
    }

    /// Head over already-encoded frames (for streaming prefix decoding).
    pub fn encoded_head(&self, kind: HeadKind, enc: &FeatureSequence) -> ModelHead<'_> {
        self.build_head(kind, enc.frames.clone(), enc.frame_ms)
    }

    /// Head over character input (MT variant).
    pub fn char_head(&self, kind: HeadKind, chars: &[usize]) -> Result<ModelHead<'_>> {
        debug_assert_eq!(self.config.variant, Variant::MtChar);
        let (fast, slow) = self.encode_chars(chars)?;
        let enc = match kind {
            HeadKind::Asr => fast,
            HeadKind::St => slow,
        };
        Ok(self.build_head(kind, enc, self.config.frame_ms))
    }
}

impl TransducerHead for ModelHead<'_> {
    type State = PredState;

    fn num_frames(&self) -> usize {
        self.enc_proj.shape()[0]
    }

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn frame_ms(&self) -> u32 {
        self.frame_ms
    }

    fn encoder_latency_ms(&self) -> f64 {
        self.latency_ms
    }

    fn initial_state(&self) -> PredState {
        self.model.pred_start(self.kind)
    }

    fn advance(&self, state: &PredState, token: usize) -> PredState {
        self.model.pred_advance(self.kind, state, token)
    }

    fn logits(&self, frame: usize, state: &PredState) -> Vec<f32> {
        self.model.head_logits_values(self.kind, self.enc_proj.row(frame), state.output())
    }
}
