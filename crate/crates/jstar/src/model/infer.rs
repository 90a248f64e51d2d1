//! Value-mode (inference) predictor and joiner math for decoding.
//!
//! Uses the same kernels as the graph ops, in the same order, so decoding a
//! frozen model reproduces the training-time forward numerics.

use crate::numcore::{matmul_kernel, sigmoid_f32, Tensor};
use crate::rnnt::BLANK;

use super::heads::HeadKind;
use super::layers::{JoinerParams, PredictorParams};
use super::Model;

/// Label-side decoder state: LSTM carry plus the projected output vector
/// the joiner consumes.
#[derive(Debug, Clone)]
pub struct PredState {
    h: Vec<f32>,
    c: Vec<f32>,
    out: Vec<f32>,
}

impl PredState {
    pub fn output(&self) -> &[f32] {
        &self.out
    }
}

impl Model {
    pub(crate) fn head_parts(&self, kind: HeadKind) -> (&PredictorParams, &JoinerParams) {
        match kind {
            HeadKind::Asr => (&self.asr_pred, &self.asr_join),
            HeadKind::St => (&self.st_pred, &self.st_join),
        }
    }

    /// Predictor state after consuming begin-of-stream (the blank token).
    pub fn pred_start(&self, kind: HeadKind) -> PredState {
        let d = self.config.predictor_dim;
        self.pred_step(kind, &vec![0.0; d], &vec![0.0; d], BLANK)
    }

    pub fn pred_advance(&self, kind: HeadKind, state: &PredState, token: usize) -> PredState {
        self.pred_step(kind, &state.h, &state.c, token)
    }

    fn pred_step(&self, kind: HeadKind, h: &[f32], c: &[f32], token: usize) -> PredState {
        let (pp, _) = self.head_parts(kind);
        let d = self.config.predictor_dim;
        let x = self.params.value(pp.embed).row(token);
        let wx = self.params.value(pp.wx);
        let wh = self.params.value(pp.wh);
        let bias = self.params.value(pp.bias);

        let mut gx = vec![0.0f32; 4 * d];
        matmul_kernel(x, wx.data(), 1, d, 4 * d, &mut gx);
        let mut gh = vec![0.0f32; 4 * d];
        matmul_kernel(h, wh.data(), 1, d, 4 * d, &mut gh);
        // Same association order as the training graph: (x*Wx + b) + h*Wh.
        let gates: Vec<f32> =
            (0..4 * d).map(|j| (gx[j] + bias.data()[j]) + gh[j]).collect();

        let mut c_next = vec![0.0f32; d];
        let mut h_next = vec![0.0f32; d];
        for j in 0..d {
            let i_gate = sigmoid_f32(gates[j]);
            let f_gate = sigmoid_f32(gates[d + j]);
            let g_gate = gates[2 * d + j].tanh();
            let o_gate = sigmoid_f32(gates[3 * d + j]);
            c_next[j] = f_gate * c[j] + i_gate * g_gate;
            h_next[j] = o_gate * c_next[j].tanh();
        }

        // Layer norm then projection, mirroring the training path.
        let g = self.params.value(pp.ln.g).data();
        let b = self.params.value(pp.ln.b).data();
        let mean = h_next.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var =
            h_next.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + 1e-5).sqrt();
        let normed: Vec<f32> = h_next
            .iter()
            .enumerate()
            .map(|(j, &v)| ((v as f64 - mean) * rstd) as f32 * g[j] + b[j])
            .collect();

        let j_dim = self.config.joiner_dim;
        let proj_w = self.params.value(pp.proj.w);
        let proj_b = self.params.value(pp.proj.b);
        let mut out = vec![0.0f32; j_dim];
        matmul_kernel(&normed, proj_w.data(), 1, d, j_dim, &mut out);
        for (o, &bv) in out.iter_mut().zip(proj_b.data()) {
            *o += bv;
        }
        PredState { h: h_next, c: c_next, out }
    }

    /// Joiner-side projection of encoder output: `[T, H] -> [T, J]`.
    pub(crate) fn enc_head_projection(&self, kind: HeadKind, enc: &Tensor) -> Tensor {
        let (_, jp) = self.head_parts(kind);
        let (t, h) = (enc.shape()[0], enc.shape()[1]);
        let j = self.config.joiner_dim;
        let w = self.params.value(jp.enc.w);
        let b = self.params.value(jp.enc.b);
        let mut out = vec![0.0f32; t * j];
        matmul_kernel(enc.data(), w.data(), t, h, j, &mut out);
        for r in 0..t {
            for (col, &bv) in b.data().iter().enumerate() {
                out[r * j + col] += bv;
            }
        }
        Tensor::new(vec![t, j], out).expect("projection shape")
    }

    /// Raw joiner logits for one (frame, label-state) pair.
    pub(crate) fn head_logits_values(
        &self,
        kind: HeadKind,
        enc_proj_row: &[f32],
        pred_out: &[f32],
    ) -> Vec<f32> {
        let (_, jp) = self.head_parts(kind);
        let j = self.config.joiner_dim;
        let v = self.config.vocab_size;
        let act: Vec<f32> =
            (0..j).map(|i| (enc_proj_row[i] + pred_out[i]).max(0.0)).collect();
        let w = self.params.value(jp.out.w);
        let b = self.params.value(jp.out.b);
        let mut out = vec![0.0f32; v];
        matmul_kernel(&act, w.data(), 1, j, v, &mut out);
        for (o, &bv) in out.iter_mut().zip(b.data()) {
            *o += bv;
        }
        out
    }
}
