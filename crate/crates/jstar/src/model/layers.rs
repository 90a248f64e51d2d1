//! Layer parameter bundles and their graph forward passes.

use std::rc::Rc;

use crate::numcore::{Graph, NodeId, ParamId, ParamSet, Rng, Tensor};

use super::Result;

/// Memoizes parameter leaf nodes so each parameter appears once per graph.
pub(crate) struct Fwd<'m> {
    pub g: Graph,
    params: &'m ParamSet,
    cache: Vec<Option<NodeId>>,
}

impl<'m> Fwd<'m> {
    pub fn new(params: &'m ParamSet) -> Self {
        Fwd { g: Graph::new(), params, cache: vec![None; params.len()] }
    }

    pub fn p(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.cache[id] {
            return n;
        }
        let n = self.g.param(self.params, id);
        self.cache[id] = Some(n);
        n
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
fn init_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.range_f32(-bound, bound))
}

// ── Linear ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearParams {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = params.register(format!("{prefix}.w"), init_uniform(rng, &[in_dim, out_dim], in_dim))?;
        let b = params.register(format!("{prefix}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(LinearParams { w, b })
    }

    pub fn forward(&self, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let w = f.p(self.w);
        let b = f.p(self.b);
        let h = f.g.matmul(x, w)?;
        Ok(f.g.add_bias(h, b)?)
    }
}

// ── Layer norm ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct LnParams {
    pub g: ParamId,
    pub b: ParamId,
}

impl LnParams {
    pub fn register(params: &mut ParamSet, prefix: &str, dim: usize) -> Result<Self> {
        let g = params.register(format!("{prefix}.g"), Tensor::full(&[dim], 1.0))?;
        let b = params.register(format!("{prefix}.b"), Tensor::zeros(&[dim]))?;
        Ok(LnParams { g, b })
    }

    pub fn forward(&self, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let g = f.p(self.g);
        let b = f.p(self.b);
        Ok(f.g.layer_norm(x, g, b)?)
    }
}

// ── Chunked multi-head self-attention block ─────────────────────────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnParams {
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub o: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockParams {
    pub ln1: LnParams,
    pub attn: AttnParams,
    pub ln2: LnParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
}

impl BlockParams {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        hidden: usize,
        ffn: usize,
    ) -> Result<Self> {
        Ok(BlockParams {
            ln1: LnParams::register(params, &format!("{prefix}.ln1"), hidden)?,
            attn: AttnParams {
                q: LinearParams::register(params, rng, &format!("{prefix}.attn.q"), hidden, hidden)?,
                k: LinearParams::register(params, rng, &format!("{prefix}.attn.k"), hidden, hidden)?,
                v: LinearParams::register(params, rng, &format!("{prefix}.attn.v"), hidden, hidden)?,
                o: LinearParams::register(params, rng, &format!("{prefix}.attn.o"), hidden, hidden)?,
            },
            ln2: LnParams::register(params, &format!("{prefix}.ln2"), hidden)?,
            ffn1: LinearParams::register(params, rng, &format!("{prefix}.ffn1"), hidden, ffn)?,
            ffn2: LinearParams::register(params, rng, &format!("{prefix}.ffn2"), ffn, hidden)?,
        })
    }

    /// Pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)) with ReLU inside.
    /// The mask spans are the layer's dependency intervals.
    pub fn forward(
        &self,
        f: &mut Fwd,
        x: NodeId,
        heads: usize,
        spans: &Rc<Vec<(usize, usize)>>,
    ) -> Result<NodeId> {
        let h = self.ln1.forward(f, x)?;
        let q = self.attn.q.forward(f, h)?;
        let k = self.attn.k.forward(f, h)?;
        let v = self.attn.v.forward(f, h)?;

        let hidden = f.g.value(q).shape()[1];
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut per_head = Vec::with_capacity(heads);
        for head in 0..heads {
            let qs = f.g.slice_cols(q, head * dh, dh)?;
            let ks = f.g.slice_cols(k, head * dh, dh)?;
            let vs = f.g.slice_cols(v, head * dh, dh)?;
            let scores = f.g.matmul_bt(qs, ks)?;
            let scores = f.g.scale(scores, scale)?;
            let weights = f.g.masked_softmax_lastdim(scores, Rc::clone(spans))?;
            per_head.push(f.g.matmul(weights, vs)?);
        }
        let merged = f.g.concat_cols(&per_head)?;
        let attn_out = self.attn.o.forward(f, merged)?;
        let x = f.g.add(x, attn_out)?;

        let h2 = self.ln2.forward(f, x)?;
        let ff = self.ffn1.forward(f, h2)?;
        let ff = f.g.relu(ff)?;
        let ff = self.ffn2.forward(f, ff)?;
        Ok(f.g.add(x, ff)?)
    }
}

// ── Predictor: embedding + single LSTM + dropout + LN + projection ──────

#[derive(Debug, Clone, Copy)]
pub(crate) struct PredictorParams {
    pub embed: ParamId,
    pub wx: ParamId,
    pub wh: ParamId,
    pub bias: ParamId,
    pub ln: LnParams,
    pub proj: LinearParams,
}

impl PredictorParams {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        vocab: usize,
        dim: usize,
        joiner_dim: usize,
    ) -> Result<Self> {
        let embed = params
            .register(format!("{prefix}.embed.table"), init_uniform(rng, &[vocab, dim], dim))?;
        let wx =
            params.register(format!("{prefix}.lstm.wx"), init_uniform(rng, &[dim, 4 * dim], dim))?;
        let wh =
            params.register(format!("{prefix}.lstm.wh"), init_uniform(rng, &[dim, 4 * dim], dim))?;
        // Gate order i, f, g, o; forget-gate bias starts at 1.
        let mut bias = Tensor::zeros(&[4 * dim]);
        for j in dim..2 * dim {
            bias.data_mut()[j] = 1.0;
        }
        let bias = params.register(format!("{prefix}.lstm.b"), bias)?;
        Ok(PredictorParams {
            embed,
            wx,
            wh,
            bias,
            ln: LnParams::register(params, &format!("{prefix}.ln"), dim)?,
            proj: LinearParams::register(params, rng, &format!("{prefix}.proj"), dim, joiner_dim)?,
        })
    }

    /// Label-side states for positions 0..=U: position 0 is the start state
    /// (blank consumed as begin-of-stream), position u conditions on
    /// target[..u]. Returns `[U+1, joiner_dim]`.
    ///
    /// The input-side gate projection is batched over all positions; only
    /// the recurrent half runs per step.
    pub fn forward(
        &self,
        f: &mut Fwd,
        target: &[usize],
        dim: usize,
        dropout_mask: Option<Tensor>,
    ) -> Result<NodeId> {
        let mut ids = Vec::with_capacity(target.len() + 1);
        ids.push(crate::rnnt::BLANK);
        ids.extend_from_slice(target);
        let table = f.p(self.embed);
        let embedded = f.g.embed(table, Rc::new(ids))?;
        let wx = f.p(self.wx);
        let wh = f.p(self.wh);
        let b = f.p(self.bias);
        let gx = f.g.matmul(embedded, wx)?;
        let gx = f.g.add_bias(gx, b)?;

        let mut h = f.g.input(Tensor::zeros(&[1, dim]));
        let mut c = f.g.input(Tensor::zeros(&[1, dim]));
        let mut states = Vec::with_capacity(target.len() + 1);
        for u in 0..=target.len() {
            let gx_u = f.g.slice_rows(gx, u, 1)?;
            let gh = f.g.matmul(h, wh)?;
            let gates = f.g.add(gx_u, gh)?;
            let hc = f.g.lstm_cell(gates, c)?;
            h = f.g.slice_rows(hc, 0, 1)?;
            c = f.g.slice_rows(hc, 1, 1)?;
            states.push(h);
        }
        let mut seq = f.g.concat_rows(&states)?;
        if let Some(mask) = dropout_mask {
            let m = f.g.input(mask);
            seq = f.g.mul(seq, m)?;
        }
        let seq = self.ln.forward(f, seq)?;
        self.proj.forward(f, seq)
    }
}

// ── Joiner: ReLU of encoder+predictor grid, then linear to vocab ────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct JoinerParams {
    pub enc: LinearParams,
    pub out: LinearParams,
}

impl JoinerParams {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        hidden: usize,
        joiner_dim: usize,
        vocab: usize,
    ) -> Result<Self> {
        Ok(JoinerParams {
            enc: LinearParams::register(params, rng, &format!("{prefix}.enc"), hidden, joiner_dim)?,
            out: LinearParams::register(params, rng, &format!("{prefix}.out"), joiner_dim, vocab)?,
        })
    }

    /// Full lattice of raw logits `[T, U+1, V]` from encoder output `[T, H]`
    /// and predictor output `[U+1, J]`.
    pub fn lattice(&self, f: &mut Fwd, enc_out: NodeId, pred_out: NodeId) -> Result<NodeId> {
        let enc = self.enc.forward(f, enc_out)?;
        let t = f.g.value(enc).shape()[0];
        let u1 = f.g.value(pred_out).shape()[0];
        let grid = f.g.outer_add(enc, pred_out)?;
        let grid = f.g.relu(grid)?;
        let logits = self.out.forward(f, grid)?;
        let vocab = f.g.value(logits).shape()[1];
        Ok(f.g.reshape(logits, vec![t, u1, vocab])?)
    }
}
