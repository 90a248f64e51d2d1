//! The joint streaming recognition + translation model.
//!
//! Assembly: a synthetic front-end (frame stacking + linear projection, or a
//! character embedding for the MT variant) feeds a fast chunked-attention
//! encoder; the slow encoder consumes the fast encoder's output with a
//! larger chunk. The recognition head (predictor + joiner) reads the fast
//! output, the translation head reads the slow output, and training
//! minimizes `loss_st + lambda * loss_asr` with both terms exact lattice
//! losses.

mod checkpoint;
pub mod config;
pub mod depset;
mod heads;
mod infer;
mod layers;

use std::rc::Rc;

pub use checkpoint::{Checkpoint, InitScope};
pub use config::{AsrPosition, ModelConfig, Variant};
pub use depset::DependencySet;
pub use heads::{HeadKind, ModelHead};
pub use infer::PredState;

use crate::numcore::{Graph, NodeId, NumError, ParamSet, Rng, Tensor};
use crate::rnnt::{rnnt_loss, RnntError, RnntLattice};
use layers::{BlockParams, Fwd, JoinerParams, LinearParams, PredictorParams};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Rnnt(#[from] RnntError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("shape mismatch for parameter '{name}': checkpoint {got:?}, model {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint is missing required parameter '{0}'")]
    MissingKey(String),
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A `[T, D]` frame matrix with its frame duration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_ms: u32,
}

impl FeatureSequence {
    pub fn new(frames: Tensor, frame_ms: u32) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(ModelError::BadInput(format!(
                "features must be [T, D], got {:?}",
                frames.shape()
            )));
        }
        Ok(FeatureSequence { frames, frame_ms })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Stack `factor` consecutive frames: `T' = ceil(T/factor)`, `D' = D*factor`,
/// trailing partial group zero-padded, frame duration multiplied.
pub fn time_reduce(seq: &FeatureSequence, factor: usize) -> Result<FeatureSequence> {
    if factor == 0 {
        return Err(ModelError::BadInput("time reduction factor must be >= 1".into()));
    }
    let (t, d) = (seq.len(), seq.dim());
    let t_out = t.div_ceil(factor);
    let mut out = vec![0.0f32; t_out * d * factor];
    for src in 0..t {
        let group = src / factor;
        let slot = src % factor;
        let dst = group * d * factor + slot * d;
        out[dst..dst + d].copy_from_slice(seq.frames.row(src));
    }
    Ok(FeatureSequence {
        frames: Tensor::new(vec![t_out, d * factor], out)?,
        frame_ms: seq.frame_ms * factor as u32,
    })
}

/// Which encoder a call refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderSide {
    Fast,
    Slow,
}

/// Standard sinusoidal position table for `[len, dim]` frames.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0f32; len * dim];
    for t in 0..len {
        for i in 0..dim / 2 {
            let rate = (t as f64) / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[t * dim + 2 * i] = rate.sin() as f32;
            data[t * dim + 2 * i + 1] = rate.cos() as f32;
        }
    }
    Tensor::new(vec![len, dim], data).expect("table shape")
}

/// Forward mode: training may apply dropout drawn from the caller's stream.
pub enum Mode<'r> {
    Train { rng: &'r mut Rng },
    Eval,
}

enum Front {
    Proj(LinearParams),
    Embed(crate::numcore::ParamId),
}

/// One completed forward pass, ready for `graph.backward_seeded`.
pub struct ForwardOut {
    pub graph: Graph,
    pub loss_node: NodeId,
    /// `loss_st + lambda * loss_asr`, combined in f64.
    pub loss: f64,
    pub loss_asr: f64,
    pub loss_st: f64,
    pub asr_lattice: NodeId,
    pub st_lattice: NodeId,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    front: Front,
    fast: Vec<BlockParams>,
    slow: Vec<BlockParams>,
    asr_pred: PredictorParams,
    st_pred: PredictorParams,
    asr_join: JoinerParams,
    st_join: JoinerParams,
}

impl Model {
    /// Fresh model with uniform(-1/sqrt(fan_in), ..) weights, zero biases,
    /// LSTM forget-gate bias 1. Registration order is fixed, so identical
    /// seeds give bit-identical models.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let c = &config;

        let front = match c.variant {
            Variant::Jstar => Front::Proj(LinearParams::register(
                &mut params,
                &mut rng,
                "front.proj",
                c.stacked_dim(),
                c.hidden_dim,
            )?),
            Variant::MtChar => Front::Embed(params.register(
                "front.embed.table",
                Tensor::from_fn(&[c.input_dim, c.hidden_dim], |_| {
                    let bound = 1.0 / (c.hidden_dim as f32).sqrt();
                    rng.range_f32(-bound, bound)
                }),
            )?),
        };

        let mut fast = Vec::with_capacity(c.fast_layers);
        for i in 0..c.fast_layers {
            fast.push(BlockParams::register(
                &mut params,
                &mut rng,
                &format!("fast.{i}"),
                c.hidden_dim,
                c.ffn_dim,
            )?);
        }
        let asr_pred = PredictorParams::register(
            &mut params,
            &mut rng,
            "asr_pred",
            c.vocab_size,
            c.predictor_dim,
            c.joiner_dim,
        )?;
        let asr_join = JoinerParams::register(
            &mut params,
            &mut rng,
            "asr_join",
            c.hidden_dim,
            c.joiner_dim,
            c.vocab_size,
        )?;

        let mut slow = Vec::with_capacity(c.slow_layers);
        for i in 0..c.slow_layers {
            slow.push(BlockParams::register(
                &mut params,
                &mut rng,
                &format!("slow.{i}"),
                c.hidden_dim,
                c.ffn_dim,
            )?);
        }
        let st_pred = PredictorParams::register(
            &mut params,
            &mut rng,
            "st_pred",
            c.vocab_size,
            c.predictor_dim,
            c.joiner_dim,
        )?;
        let st_join = JoinerParams::register(
            &mut params,
            &mut rng,
            "st_join",
            c.hidden_dim,
            c.joiner_dim,
            c.vocab_size,
        )?;

        Ok(Model { config, params, front, fast, slow, asr_pred, st_pred, asr_join, st_join })
    }

    fn run_stack(&self, f: &mut Fwd, x: NodeId, side: EncoderSide) -> Result<NodeId> {
        let t = f.g.value(x).shape()[0];
        let (blocks, chunk) = match side {
            EncoderSide::Fast => (&self.fast, self.config.chunk_fast),
            EncoderSide::Slow => (&self.slow, self.config.chunk_slow),
        };
        let spans = Rc::new(depset::layer_spans(
            t,
            chunk,
            self.config.left_context,
            self.config.right_context,
        ));
        // Attention is order-blind inside a chunk; sinusoidal encodings make
        // frame positions visible (the role convolution plays in conformer
        // blocks). Positions are absolute, so streaming prefixes see the
        // same values.
        let pe = f.g.input(positional_encoding(t, self.config.hidden_dim));
        let mut h = f.g.add(x, pe)?;
        for block in blocks {
            h = block.forward(f, h, self.config.heads, &spans)?;
        }
        Ok(h)
    }

    /// Run one encoder on already-prepared input frames. `Fast` expects
    /// stacked features of width `input_dim * time_reduce` (the front
    /// projection is applied first); `Slow` expects fast-encoder output of
    /// width `hidden_dim`. An empty sequence yields an empty output.
    pub fn encoder_forward(&self, seq: &FeatureSequence, side: EncoderSide) -> Result<FeatureSequence> {
        if seq.is_empty() {
            return Ok(FeatureSequence {
                frames: Tensor::zeros(&[0, self.config.hidden_dim]),
                frame_ms: seq.frame_ms,
            });
        }
        let mut f = Fwd::new(&self.params);
        let x = f.g.input(seq.frames.clone());
        let out = match side {
            EncoderSide::Fast => {
                let expected = self.config.stacked_dim();
                if seq.dim() != expected {
                    return Err(ModelError::BadInput(format!(
                        "fast encoder expects stacked width {expected}, got {}",
                        seq.dim()
                    )));
                }
                let h = match &self.front {
                    Front::Proj(p) => p.forward(&mut f, x)?,
                    Front::Embed(_) => {
                        return Err(ModelError::BadInput(
                            "character-input model has no feature front-end".into(),
                        ))
                    }
                };
                self.run_stack(&mut f, h, EncoderSide::Fast)?
            }
            EncoderSide::Slow => {
                if seq.dim() != self.config.hidden_dim {
                    return Err(ModelError::BadInput(format!(
                        "slow encoder expects width {}, got {}",
                        self.config.hidden_dim,
                        seq.dim()
                    )));
                }
                self.run_stack(&mut f, x, EncoderSide::Slow)?
            }
        };
        Ok(FeatureSequence { frames: f.g.value(out).clone(), frame_ms: seq.frame_ms })
    }

    /// Full feature pipeline values: (fast output, slow output), both
    /// `[T_enc, hidden]` at the reduced frame rate.
    pub fn encode_features(&self, features: &FeatureSequence) -> Result<(FeatureSequence, FeatureSequence)> {
        let reduced = time_reduce(features, self.config.time_reduce)?;
        let fast = self.encoder_forward(&reduced, EncoderSide::Fast)?;
        let slow = self.encoder_forward(&fast, EncoderSide::Slow)?;
        Ok((fast, slow))
    }

    /// Encoder outputs for character input (MT variant).
    pub fn encode_chars(&self, chars: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut f = Fwd::new(&self.params);
        let (fast, slow) = self.char_pipeline(&mut f, chars)?;
        Ok((f.g.value(fast).clone(), f.g.value(slow).clone()))
    }

    fn char_pipeline(&self, f: &mut Fwd, chars: &[usize]) -> Result<(NodeId, NodeId)> {
        let table = match &self.front {
            Front::Embed(t) => *t,
            Front::Proj(_) => {
                return Err(ModelError::BadInput(
                    "feature-input model does not take characters".into(),
                ))
            }
        };
        if chars.is_empty() {
            return Err(ModelError::BadInput("empty character sequence".into()));
        }
        for &ch in chars {
            if ch >= self.config.input_dim {
                return Err(ModelError::BadInput(format!(
                    "character id {ch} outside input vocabulary of {}",
                    self.config.input_dim
                )));
            }
        }
        let table_node = f.p(table);
        let x = f.g.embed(table_node, Rc::new(chars.to_vec()))?;
        let fast = self.run_stack(f, x, EncoderSide::Fast)?;
        let slow = self.run_stack(f, fast, EncoderSide::Slow)?;
        Ok((fast, slow))
    }

    fn dropout_mask(&self, rng: &mut Rng, rows: usize, dim: usize) -> Option<Tensor> {
        let p = self.config.dropout;
        if p <= 0.0 {
            return None;
        }
        let keep = 1.0 - p;
        Some(Tensor::from_fn(&[rows, dim], |_| {
            if rng.uniform() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }

    fn head_loss(
        &self,
        f: &mut Fwd,
        enc_out: NodeId,
        target: &[usize],
        pred: &PredictorParams,
        join: &JoinerParams,
        mode: &mut Mode,
    ) -> Result<(NodeId, NodeId, f64)> {
        let mask = match mode {
            Mode::Train { rng } => {
                self.dropout_mask(rng, target.len() + 1, self.config.predictor_dim)
            }
            Mode::Eval => None,
        };
        let pred_out = pred.forward(f, target, self.config.predictor_dim, mask)?;
        let lattice = join.lattice(f, enc_out, pred_out)?;
        let (loss, grad) = rnnt_loss(&RnntLattice::new(f.g.value(lattice).clone())?, target)?;
        let loss_node = f.g.external_loss(lattice, loss, grad)?;
        Ok((lattice, loss_node, loss))
    }

    /// Joint forward pass: recognition head on the fast encoder (or slow,
    /// per `asr_position`), translation head on the slow encoder, total loss
    /// `loss_st + lambda * loss_asr`.
    pub fn jstar_forward(
        &self,
        features: &FeatureSequence,
        asr_target: &[usize],
        st_target: &[usize],
        mut mode: Mode,
    ) -> Result<ForwardOut> {
        if self.config.variant != Variant::Jstar {
            return Err(ModelError::BadInput("jstar_forward requires the jstar variant".into()));
        }
        if features.is_empty() {
            return Err(ModelError::BadInput("empty feature sequence".into()));
        }
        if features.dim() != self.config.input_dim {
            return Err(ModelError::BadInput(format!(
                "feature width {} does not match input_dim {}",
                features.dim(),
                self.config.input_dim
            )));
        }

        let mut f = Fwd::new(&self.params);
        let reduced = time_reduce(features, self.config.time_reduce)?;
        let x = f.g.input(reduced.frames);
        let h = match &self.front {
            Front::Proj(p) => p.forward(&mut f, x)?,
            Front::Embed(_) => unreachable!("jstar variant always has a projection front"),
        };
        let fast_out = self.run_stack(&mut f, h, EncoderSide::Fast)?;
        let slow_out = self.run_stack(&mut f, fast_out, EncoderSide::Slow)?;
        let asr_enc = match self.config.asr_position {
            AsrPosition::Fast => fast_out,
            AsrPosition::Slow => slow_out,
        };

        let (asr_lattice, asr_node, loss_asr) =
            self.head_loss(&mut f, asr_enc, asr_target, &self.asr_pred, &self.asr_join, &mut mode)?;
        let (st_lattice, st_node, loss_st) =
            self.head_loss(&mut f, slow_out, st_target, &self.st_pred, &self.st_join, &mut mode)?;

        let lambda = self.config.lambda;
        let loss_node = f.g.weighted_sum(&[(st_node, 1.0), (asr_node, lambda)])?;
        Ok(ForwardOut {
            graph: f.g,
            loss_node,
            loss: loss_st + lambda * loss_asr,
            loss_asr,
            loss_st,
            asr_lattice,
            st_lattice,
        })
    }

    /// Character-input translation forward pass: the fast-side head predicts
    /// source-language pieces, the slow-side head target-language pieces,
    /// total loss `loss_tgt + lambda * loss_src` (lambda defaults to 0.1 for
    /// this variant).
    pub fn mt_forward(
        &self,
        source_chars: &[usize],
        source_pieces: &[usize],
        target_pieces: &[usize],
        mut mode: Mode,
    ) -> Result<ForwardOut> {
        if self.config.variant != Variant::MtChar {
            return Err(ModelError::BadInput("mt_forward requires the character variant".into()));
        }
        let mut f = Fwd::new(&self.params);
        let (fast_out, slow_out) = self.char_pipeline(&mut f, source_chars)?;
        let (src_lattice, src_node, loss_src) = self.head_loss(
            &mut f,
            fast_out,
            source_pieces,
            &self.asr_pred,
            &self.asr_join,
            &mut mode,
        )?;
        let (tgt_lattice, tgt_node, loss_tgt) =
            self.head_loss(&mut f, slow_out, target_pieces, &self.st_pred, &self.st_join, &mut mode)?;
        let lambda = self.config.lambda;
        let loss_node = f.g.weighted_sum(&[(tgt_node, 1.0), (src_node, lambda)])?;
        Ok(ForwardOut {
            graph: f.g,
            loss_node,
            loss: loss_tgt + lambda * loss_src,
            loss_asr: loss_src,
            loss_st: loss_tgt,
            asr_lattice: src_lattice,
            st_lattice: tgt_lattice,
        })
    }

    /// Whole-encoder dependency set of the named head over encoder frames.
    pub fn head_dependency(&self, side: EncoderSide, enc_len: usize) -> DependencySet {
        let c = &self.config;
        let fast = DependencySet::for_encoder(
            enc_len,
            c.chunk_fast,
            c.left_context,
            c.right_context,
            c.fast_layers,
        );
        match side {
            EncoderSide::Fast => fast,
            EncoderSide::Slow => {
                let slow = DependencySet::for_encoder(
                    enc_len,
                    c.chunk_slow,
                    c.left_context,
                    c.right_context,
                    c.slow_layers,
                );
                slow.compose(&fast)
            }
        }
    }
}
