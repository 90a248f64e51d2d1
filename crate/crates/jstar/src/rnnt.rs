//! Exact log-space transducer lattice loss, its analytic gradient, a
//! brute-force enumeration oracle, and best-path (Viterbi) alignment.
//!
//! The lattice joins `T` encoder frames with `U` target labels. A monotonic
//! alignment starts at node (1,0), advances the frame axis with a blank or
//! the label axis with the next target label, and terminates with a blank at
//! (T,U) — exactly `T` blanks and `U` labels. The loss is the negative log
//! of the total probability over all such alignments, computed with a
//! forward recursion over f64 accumulators; the gradient comes from
//! forward-backward occupancies rather than graph autodiff, which keeps it
//! O(T·U·V) exact.

use crate::numcore::Tensor;

/// Reserved blank token ID.
pub const BLANK: usize = 0;

/// Largest T+U the enumeration oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum RnntError {
    #[error("lattice must be [T, U+1, V] with T >= 1 and V >= 2, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("lattice does not match target: {0}")]
    TargetMismatch(String),
    #[error("target contains the blank ID at position {0}")]
    BlankInTarget(usize),
    #[error("target token {token} at position {pos} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, pos: usize, vocab: usize },
    #[error("non-finite logit in lattice")]
    NonFinite,
    #[error("lattice too large for enumeration: T+U = {0} > {BRUTE_FORCE_LIMIT}")]
    TooLarge(usize),
}

pub type Result<T> = std::result::Result<T, RnntError>;

/// Joiner outputs before log-softmax over a `[T, U+1, V]` grid.
#[derive(Debug, Clone)]
pub struct RnntLattice {
    values: Tensor,
}

impl RnntLattice {
    pub fn new(values: Tensor) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] < 1 || s[1] < 1 || s[2] < 2 {
            return Err(RnntError::BadShape(s.to_vec()));
        }
        Ok(RnntLattice { values })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    /// Number of label rows, i.e. U + 1.
    pub fn label_rows(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn vocab(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.len() + 1 != self.label_rows() {
            return Err(RnntError::TargetMismatch(format!(
                "target of {} labels against lattice with {} label rows",
                target.len(),
                self.label_rows()
            )));
        }
        for (pos, &tok) in target.iter().enumerate() {
            if tok == BLANK {
                return Err(RnntError::BlankInTarget(pos));
            }
            if tok >= self.vocab() {
                return Err(RnntError::TokenOutOfRange { token: tok, pos, vocab: self.vocab() });
            }
        }
        if !self.values.is_finite() {
            return Err(RnntError::NonFinite);
        }
        Ok(())
    }

    /// Per-node log-probabilities (f64 log-softmax over the vocabulary axis).
    fn log_probs(&self) -> Vec<f64> {
        let v = self.vocab();
        let mut out = Vec::with_capacity(self.values.numel());
        for node in 0..self.values.numel() / v {
            let row = &self.values.data()[node * v..(node + 1) * v];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let denom: f64 = row.iter().map(|&x| ((x as f64) - max).exp()).sum();
            let ld = denom.ln() + max;
            out.extend(row.iter().map(|&x| x as f64 - ld));
        }
        out
    }
}

/// One alignment step at lattice node (t, u); `t` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub t: usize,
    pub u: usize,
    pub emit: Emit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Blank,
    Label,
}

/// A monotonic lattice path: starts at (1,0), each step advances t (blank)
/// or u (label), ends with a blank at (T,U).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pub steps: Vec<PathStep>,
    pub log_prob: f64,
}

impl AlignmentPath {
    /// 1-based frame index at which each label is emitted.
    pub fn label_frames(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.emit == Emit::Label).map(|s| s.t).collect()
    }
}

/// Negative log-likelihood and exact gradient with respect to the raw logits.
pub fn rnnt_loss(lattice: &RnntLattice, target: &[usize]) -> Result<(f64, Tensor)> {
    lattice.check_target(target)?;
    let (tn, u1, v) = (lattice.frames(), lattice.label_rows(), lattice.vocab());
    let u_len = u1 - 1;
    let lp = lattice.log_probs();
    let at = |t: usize, u: usize, tok: usize| lp[(t * u1 + u) * v + tok];

    // Forward.
    let mut alpha = vec![f64::NEG_INFINITY; tn * u1];
    alpha[0] = 0.0;
    for t in 0..tn {
        for u in 0..u1 {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 { alpha[(t - 1) * u1 + u] + at(t - 1, u, BLANK) } else { f64::NEG_INFINITY };
            let from_label = if u > 0 { alpha[t * u1 + u - 1] + at(t, u - 1, target[u - 1]) } else { f64::NEG_INFINITY };
            alpha[t * u1 + u] = log_add(from_blank, from_label);
        }
    }
    let log_z = alpha[(tn - 1) * u1 + u_len] + at(tn - 1, u_len, BLANK);

    // Backward.
    let mut beta = vec![f64::NEG_INFINITY; tn * u1];
    beta[(tn - 1) * u1 + u_len] = at(tn - 1, u_len, BLANK);
    for t in (0..tn).rev() {
        for u in (0..u1).rev() {
            if t == tn - 1 && u == u_len {
                continue;
            }
            let via_blank = if t + 1 < tn { at(t, u, BLANK) + beta[(t + 1) * u1 + u] } else { f64::NEG_INFINITY };
            let via_label = if u < u_len { at(t, u, target[u]) + beta[t * u1 + u + 1] } else { f64::NEG_INFINITY };
            beta[t * u1 + u] = log_add(via_blank, via_label);
        }
    }
    debug_assert!(
        (beta[0] - log_z).abs() < 1e-6 || !log_z.is_finite(),
        "forward/backward disagree: {} vs {log_z}",
        beta[0]
    );

    // Occupancies -> gradient w.r.t. raw logits.
    let mut grad = vec![0.0f32; tn * u1 * v];
    for t in 0..tn {
        for u in 0..u1 {
            let a = alpha[t * u1 + u];
            if a == f64::NEG_INFINITY {
                continue;
            }
            let occ_blank = if t == tn - 1 && u == u_len {
                (a + at(t, u, BLANK) - log_z).exp()
            } else if t + 1 < tn {
                (a + at(t, u, BLANK) + beta[(t + 1) * u1 + u] - log_z).exp()
            } else {
                0.0
            };
            let occ_label = if u < u_len {
                (a + at(t, u, target[u]) + beta[t * u1 + u + 1] - log_z).exp()
            } else {
                0.0
            };
            let occ = occ_blank + occ_label;
            if occ == 0.0 {
                continue;
            }
            let base = (t * u1 + u) * v;
            for tok in 0..v {
                let p = at(t, u, tok).exp();
                let mut g = p * occ;
                if tok == BLANK {
                    g -= occ_blank;
                } else if u < u_len && tok == target[u] {
                    g -= occ_label;
                }
                grad[base + tok] = g as f32;
            }
        }
    }
    Ok((-log_z, Tensor::new(vec![tn, u1, v], grad).expect("grad shape")))
}

/// Negative log-likelihood by explicit enumeration of every monotonic path;
/// probabilities are summed in linear f64 space. Only for small lattices.
pub fn rnnt_brute_force(lattice: &RnntLattice, target: &[usize]) -> Result<f64> {
    lattice.check_target(target)?;
    let (tn, u_len) = (lattice.frames(), lattice.label_rows() - 1);
    if tn + u_len > BRUTE_FORCE_LIMIT {
        return Err(RnntError::TooLarge(tn + u_len));
    }
    let u1 = lattice.label_rows();
    let v = lattice.vocab();
    let lp = lattice.log_probs();
    let prob = |t: usize, u: usize, tok: usize| lp[(t * u1 + u) * v + tok].exp();

    fn walk(
        t: usize,
        u: usize,
        p: f64,
        tn: usize,
        u_len: usize,
        target: &[usize],
        prob: &dyn Fn(usize, usize, usize) -> f64,
        total: &mut f64,
    ) {
        if t == tn - 1 && u == u_len {
            *total += p * prob(t, u, BLANK);
            return;
        }
        if t + 1 < tn {
            walk(t + 1, u, p * prob(t, u, BLANK), tn, u_len, target, prob, total);
        }
        if u < u_len {
            walk(t, u + 1, p * prob(t, u, target[u]), tn, u_len, target, prob, total);
        }
    }

    let mut total = 0.0;
    walk(0, 0, 1.0, tn, u_len, target, &prob, &mut total);
    Ok(-total.ln())
}

/// Maximum-probability alignment; ties prefer the blank (advance the frame
/// axis first).
pub fn viterbi_align(lattice: &RnntLattice, target: &[usize]) -> Result<AlignmentPath> {
    lattice.check_target(target)?;
    let (tn, u1, v) = (lattice.frames(), lattice.label_rows(), lattice.vocab());
    let u_len = u1 - 1;
    let lp = lattice.log_probs();
    let at = |t: usize, u: usize, tok: usize| lp[(t * u1 + u) * v + tok];

    // Best completion score from each node, choosing blank on ties.
    let mut best = vec![f64::NEG_INFINITY; tn * u1];
    let mut take_blank = vec![false; tn * u1];
    best[(tn - 1) * u1 + u_len] = at(tn - 1, u_len, BLANK);
    take_blank[(tn - 1) * u1 + u_len] = true;
    for t in (0..tn).rev() {
        for u in (0..u1).rev() {
            if t == tn - 1 && u == u_len {
                continue;
            }
            let via_blank = if t + 1 < tn { at(t, u, BLANK) + best[(t + 1) * u1 + u] } else { f64::NEG_INFINITY };
            let via_label = if u < u_len { at(t, u, target[u]) + best[t * u1 + u + 1] } else { f64::NEG_INFINITY };
            if via_blank >= via_label {
                best[t * u1 + u] = via_blank;
                take_blank[t * u1 + u] = true;
            } else {
                best[t * u1 + u] = via_label;
            }
        }
    }

    let mut steps = Vec::with_capacity(tn + u_len);
    let (mut t, mut u) = (0usize, 0usize);
    loop {
        if t == tn - 1 && u == u_len {
            steps.push(PathStep { t: t + 1, u, emit: Emit::Blank });
            break;
        }
        if take_blank[t * u1 + u] {
            steps.push(PathStep { t: t + 1, u, emit: Emit::Blank });
            t += 1;
        } else {
            steps.push(PathStep { t: t + 1, u, emit: Emit::Label });
            u += 1;
        }
    }
    Ok(AlignmentPath { steps, log_prob: best[0] })
}

/// The lattice DP on caller-supplied per-node log scores (`[T, U+1, V]`
/// row-major, already normalized or not). Raising the score of an edge on
/// some path can only increase total path probability, so this form makes
/// evidence monotonicity exact.
pub fn lattice_nll_from_log_scores(
    scores: &[f64],
    frames: usize,
    label_rows: usize,
    vocab: usize,
    target: &[usize],
) -> f64 {
    assert_eq!(scores.len(), frames * label_rows * vocab);
    assert_eq!(target.len() + 1, label_rows);
    let at = |t: usize, u: usize, tok: usize| scores[(t * label_rows + u) * vocab + tok];
    let u_len = label_rows - 1;
    let mut alpha = vec![f64::NEG_INFINITY; frames * label_rows];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..label_rows {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[(t - 1) * label_rows + u] + at(t - 1, u, BLANK)
            } else {
                f64::NEG_INFINITY
            };
            let from_label = if u > 0 {
                alpha[t * label_rows + u - 1] + at(t, u - 1, target[u - 1])
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * label_rows + u] = log_add(from_blank, from_label);
        }
    }
    -(alpha[(frames - 1) * label_rows + u_len] + at(frames - 1, u_len, BLANK))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn lattice(t: usize, u1: usize, v: usize, data: Vec<f32>) -> RnntLattice {
        RnntLattice::new(Tensor::new(vec![t, u1, v], data).unwrap()).unwrap()
    }

    fn random_lattice(rng: &mut Rng, t: usize, u1: usize, v: usize) -> RnntLattice {
        lattice(t, u1, v, (0..t * u1 * v).map(|_| rng.range_f32(-2.0, 2.0)).collect())
    }

    fn random_target(rng: &mut Rng, u: usize, v: usize) -> Vec<usize> {
        (0..u).map(|_| 1 + rng.below(v - 1)).collect()
    }

    #[test]
    fn single_forced_blank_path() {
        // T=1, U=0, V=2 with p(blank) = 0.8: loss = -ln 0.8.
        let l = lattice(1, 1, 2, vec![0.8f32.ln(), 0.2f32.ln()]);
        let (loss, _) = rnnt_loss(&l, &[]).unwrap();
        assert!((loss - 0.22314355).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn single_forced_label_path() {
        // T=1, U=1: the only path emits y at (1,0) then blank at (1,1).
        let mut rng = Rng::new(2);
        let l = random_lattice(&mut rng, 1, 2, 3);
        let (loss, _) = rnnt_loss(&l, &[2]).unwrap();
        let lp = l.log_probs();
        let expect = -(lp[2] + lp[3]);
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn two_path_uniform_lattice() {
        // T=2, U=1, V=2, all distributions uniform: two alignments of
        // probability (1/2)^3 each, total 1/4, loss = ln 4.
        let l = lattice(2, 2, 2, vec![0.0; 8]);
        let (loss, _) = rnnt_loss(&l, &[1]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-9, "loss {loss}");
        let brute = rnnt_brute_force(&l, &[1]).unwrap();
        assert!((brute - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn brute_force_pure_blank_path() {
        let mut rng = Rng::new(3);
        let l = random_lattice(&mut rng, 4, 1, 3);
        let lp = l.log_probs();
        let expect: f64 = -(0..4).map(|t| lp[t * 3 + BLANK]).sum::<f64>();
        let got = rnnt_brute_force(&l, &[]).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_brute_force_on_random_lattices() {
        let mut rng = Rng::new(0xabcd);
        for trial in 0..200 {
            let t = 1 + rng.below(4);
            let u = rng.below(4);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let (loss, _) = rnnt_loss(&l, &target).unwrap();
            let brute = rnnt_brute_force(&l, &target).unwrap();
            assert!(
                (loss - brute).abs() < 1e-6,
                "trial {trial}: T={t} U={u} V={v}: {loss} vs {brute}"
            );
        }
    }

    #[test]
    fn blank_in_target_rejected() {
        let mut rng = Rng::new(4);
        let l = random_lattice(&mut rng, 2, 2, 3);
        assert!(matches!(rnnt_loss(&l, &[BLANK]), Err(RnntError::BlankInTarget(0))));
        assert!(matches!(rnnt_brute_force(&l, &[BLANK]), Err(RnntError::BlankInTarget(0))));
    }

    #[test]
    fn oversized_lattice_rejected_by_enumeration() {
        let mut rng = Rng::new(5);
        let l = random_lattice(&mut rng, 14, 4, 2);
        assert!(matches!(rnnt_brute_force(&l, &[1, 1, 1]), Err(RnntError::TooLarge(17))));
    }

    #[test]
    fn non_finite_logits_rejected() {
        let l = lattice(1, 1, 2, vec![f32::NAN, 0.0]);
        assert!(matches!(rnnt_loss(&l, &[]), Err(RnntError::NonFinite)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(0xfeed);
        for _ in 0..30 {
            let t = 1 + rng.below(3);
            let u = rng.below(3);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let (_, grad) = rnnt_loss(&l, &target).unwrap();
            let eps = 1e-3f32;
            for i in 0..l.values().numel() {
                let mut plus = l.values().data().to_vec();
                plus[i] += eps;
                let lp = rnnt_loss(
                    &RnntLattice::new(Tensor::new(vec![t, u + 1, v], plus.clone()).unwrap())
                        .unwrap(),
                    &target,
                )
                .unwrap()
                .0;
                plus[i] -= 2.0 * eps;
                let lm = rnnt_loss(
                    &RnntLattice::new(Tensor::new(vec![t, u + 1, v], plus).unwrap()).unwrap(),
                    &target,
                )
                .unwrap()
                .0;
                let fd = (lp - lm) / (2.0 * eps as f64);
                let a = grad.data()[i] as f64;
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-3, "elem {i}: analytic {a} vs fd {fd} (rel {rel:.2e})");
            }
        }
    }

    #[test]
    fn shift_invariance_per_node() {
        // Adding a constant to all V logits at one node leaves the loss
        // unchanged within 1e-6.
        let mut rng = Rng::new(0x51f7);
        for _ in 0..50 {
            let t = 1 + rng.below(3);
            let u = rng.below(3);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let (loss, _) = rnnt_loss(&l, &target).unwrap();

            let node = rng.below(t * (u + 1));
            let c = rng.range_f32(-3.0, 3.0);
            let mut shifted = l.values().data().to_vec();
            for tok in 0..v {
                shifted[node * v + tok] += c;
            }
            let l2 = RnntLattice::new(Tensor::new(vec![t, u + 1, v], shifted).unwrap()).unwrap();
            let (loss2, _) = rnnt_loss(&l2, &target).unwrap();
            assert!((loss - loss2).abs() < 1e-6, "{loss} vs {loss2}");
        }
    }

    #[test]
    fn raising_target_label_score_never_increases_nll() {
        // On the DP over given log scores, raising the score of a target
        // label edge raises every path through it and no other.
        let mut rng = Rng::new(0x0a0b);
        for _ in 0..100 {
            let t = 1 + rng.below(4);
            let u = 1 + rng.below(3);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let scores: Vec<f64> = l.log_probs();
            let base = lattice_nll_from_log_scores(&scores, t, u + 1, v, &target);

            let node_t = rng.below(t);
            let node_u = rng.below(u); // label edges exist for u < U
            let mut bumped = scores.clone();
            bumped[(node_t * (u + 1) + node_u) * v + target[node_u]] += 0.5;
            let after = lattice_nll_from_log_scores(&bumped, t, u + 1, v, &target);
            assert!(after <= base + 1e-9, "raising evidence increased loss: {base} -> {after}");
        }
    }

    #[test]
    fn viterbi_unique_path() {
        let mut rng = Rng::new(6);
        let l = random_lattice(&mut rng, 1, 2, 3);
        let path = viterbi_align(&l, &[1]).unwrap();
        assert_eq!(
            path.steps,
            vec![
                PathStep { t: 1, u: 0, emit: Emit::Label },
                PathStep { t: 1, u: 1, emit: Emit::Blank }
            ]
        );
    }

    #[test]
    fn viterbi_prefers_strong_late_emission() {
        // T=2, U=1, V=2 with p(y at t=2) >> p(y at t=1): label emitted at t=2.
        let data = vec![
            // t=1: (u=0) blank likely, y unlikely; (u=1) anything
            2.0, -2.0, 0.0, 0.0,
            // t=2: (u=0) y strongly likely; (u=1) blank fine
            -2.0, 3.0, 1.0, 0.0,
        ];
        let l = lattice(2, 2, 2, data);
        let path = viterbi_align(&l, &[1]).unwrap();
        assert_eq!(
            path.steps,
            vec![
                PathStep { t: 1, u: 0, emit: Emit::Blank },
                PathStep { t: 2, u: 0, emit: Emit::Label },
                PathStep { t: 2, u: 1, emit: Emit::Blank }
            ]
        );
        assert_eq!(path.label_frames(), vec![2]);
    }

    #[test]
    fn viterbi_matches_best_enumerated_path() {
        let mut rng = Rng::new(0xbead);
        for _ in 0..100 {
            let t = 1 + rng.below(3);
            let u = rng.below(3);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let path = viterbi_align(&l, &target).unwrap();

            // Enumerate all paths, track the max log-prob.
            let u1 = u + 1;
            let lp = l.log_probs();
            let at = |tt: usize, uu: usize, tok: usize| lp[(tt * u1 + uu) * v + tok];
            fn walk(
                tt: usize,
                uu: usize,
                acc: f64,
                t: usize,
                u: usize,
                target: &[usize],
                at: &dyn Fn(usize, usize, usize) -> f64,
                best: &mut f64,
            ) {
                if tt == t - 1 && uu == u {
                    *best = best.max(acc + at(tt, uu, BLANK));
                    return;
                }
                if tt + 1 < t {
                    walk(tt + 1, uu, acc + at(tt, uu, BLANK), t, u, target, at, best);
                }
                if uu < u {
                    walk(tt, uu + 1, acc + at(tt, uu, target[uu]), t, u, target, at, best);
                }
            }
            let mut best = f64::NEG_INFINITY;
            walk(0, 0, 0.0, t, u, &target, &at, &mut best);
            assert!((path.log_prob - best).abs() < 1e-9, "{} vs {best}", path.log_prob);

            // Best single path cannot beat the sum over all paths.
            let (loss, _) = rnnt_loss(&l, &target).unwrap();
            assert!(path.log_prob <= -loss + 1e-9);
        }
    }

    #[test]
    fn path_shape_invariants() {
        let mut rng = Rng::new(0xcafe);
        for _ in 0..50 {
            let t = 1 + rng.below(4);
            let u = rng.below(4);
            let v = 2 + rng.below(3);
            let l = random_lattice(&mut rng, t, u + 1, v);
            let target = random_target(&mut rng, u, v);
            let path = viterbi_align(&l, &target).unwrap();
            assert_eq!(path.steps.len(), t + u);
            assert_eq!(path.steps[0].t, 1);
            assert_eq!(path.steps[0].u, 0);
            let blanks = path.steps.iter().filter(|s| s.emit == Emit::Blank).count();
            assert_eq!(blanks, t);
            let last = path.steps.last().unwrap();
            assert_eq!((last.t, last.u, last.emit), (t, u, Emit::Blank));
        }
    }
}
