//! Architecture and training hyper-parameters.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Feature input with time reduction; fast/slow encoders; joint
    /// recognition + translation heads.
    Jstar,
    /// Character input via a trainable embedding, no time reduction; the
    /// fast-side head predicts source-language pieces, the slow-side head
    /// target-language pieces.
    MtChar,
}

/// Which encoder output feeds the recognition head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsrPosition {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub fast_layers: usize,
    pub slow_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Chunk sizes in encoder frames (characters for `MtChar`).
    pub chunk_fast: usize,
    pub chunk_slow: usize,
    pub right_context: usize,
    pub left_context: usize,
    /// Encoder frame duration after time reduction.
    pub frame_ms: u32,
    /// Front-end frame stacking factor (1 for `MtChar`).
    pub time_reduce: usize,
    /// Feature dimension before stacking (`Jstar`) or input character
    /// vocabulary size (`MtChar`).
    pub input_dim: usize,
    /// Output vocabulary including blank (0) and speaker tags (1, 2).
    pub vocab_size: usize,
    pub predictor_dim: usize,
    pub joiner_dim: usize,
    /// Weight of the auxiliary loss: recognition for `Jstar`, source-piece
    /// prediction for `MtChar`.
    pub lambda: f64,
    pub dropout: f32,
    pub asr_position: AsrPosition,
}

impl ModelConfig {
    /// The full-scale configuration: 20 fast + 10 slow conformer-style
    /// layers, hidden 320, 4 heads, FFN 2048, chunks of 5/10 frames at 60 ms
    /// with 1 frame right-context and 10 frames left-context, 256-dim LSTM
    /// predictors, vocabulary 9001, lambda 0.5.
    pub fn full_jstar() -> Self {
        ModelConfig {
            variant: Variant::Jstar,
            fast_layers: 20,
            slow_layers: 10,
            hidden_dim: 320,
            ffn_dim: 2048,
            heads: 4,
            chunk_fast: 5,
            chunk_slow: 10,
            right_context: 1,
            left_context: 10,
            frame_ms: 60,
            time_reduce: 6,
            input_dim: 221,
            vocab_size: 9001,
            predictor_dim: 256,
            joiner_dim: 768,
            lambda: 0.5,
            dropout: 0.1,
            asr_position: AsrPosition::Fast,
        }
    }

    /// Desk-scale joint model: trains in minutes while exercising every
    /// contract. Input features are two direction-channel groups of 27 dims.
    pub fn desk_jstar() -> Self {
        ModelConfig {
            variant: Variant::Jstar,
            fast_layers: 2,
            slow_layers: 2,
            hidden_dim: 64,
            ffn_dim: 128,
            heads: 2,
            chunk_fast: 4,
            chunk_slow: 8,
            right_context: 1,
            left_context: 8,
            frame_ms: 60,
            time_reduce: 3,
            input_dim: 54,
            vocab_size: 56,
            predictor_dim: 64,
            joiner_dim: 64,
            lambda: 0.5,
            dropout: 0.0,
            asr_position: AsrPosition::Fast,
        }
    }

    /// Desk-scale character-input translation model: chunks of 5 and 10
    /// characters with one character right-context, source-piece loss weight
    /// 0.1.
    pub fn desk_mt() -> Self {
        ModelConfig {
            variant: Variant::MtChar,
            chunk_fast: 5,
            chunk_slow: 10,
            time_reduce: 1,
            input_dim: 56,
            lambda: 0.1,
            ..Self::desk_jstar()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.chunk_fast == 0 || self.chunk_slow == 0 {
            return fail("chunk sizes must be >= 1".into());
        }
        if self.time_reduce == 0 {
            return fail("time_reduce must be >= 1".into());
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must include blank and at least one label".into());
        }
        if self.lambda < 0.0 {
            return fail("lambda must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)".into());
        }
        if self.input_dim == 0 || self.fast_layers == 0 || self.slow_layers == 0 {
            return fail("layer counts and input_dim must be >= 1".into());
        }
        if self.variant == Variant::MtChar && self.time_reduce != 1 {
            return fail("character input does not use time reduction".into());
        }
        Ok(())
    }

    /// Encoder input width after front-end stacking.
    pub fn stacked_dim(&self) -> usize {
        self.input_dim * self.time_reduce
    }

    pub fn chunk_ms(&self, chunk_frames: usize) -> f64 {
        chunk_frames as f64 * self.frame_ms as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_is_valid() {
        ModelConfig::full_jstar().validate().unwrap();
        assert_eq!(ModelConfig::full_jstar().stacked_dim(), 1326);
    }

    #[test]
    fn desk_configs_are_valid() {
        ModelConfig::desk_jstar().validate().unwrap();
        ModelConfig::desk_mt().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::desk_jstar();
        c.chunk_fast = 0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk_jstar();
        c.heads = 3; // does not divide 64
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk_mt();
        c.time_reduce = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ModelConfig::desk_jstar();
        let s = serde_json::to_string(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.hidden_dim, c.hidden_dim);
        assert_eq!(back.variant, c.variant);
    }
}
