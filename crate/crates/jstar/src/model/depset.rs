//! Dependency-set arithmetic for chunked streaming attention.
//!
//! Each layer lets output frame t (in chunk k spanning [s, e]) read input
//! frames in the closed interval [max(0, s - left), min(T-1, e + right)].
//! Stacking layers composes the interval maps; since both endpoints are
//! monotone, the k-layer set is the k-fold application to each endpoint.
//! All indices here are 0-based; the attention masks are built from the
//! same function, so the contract and the implementation cannot drift.

/// Closed input interval one chunked-attention layer allows for query `t`.
pub fn layer_interval(
    t: usize,
    chunk: usize,
    left: usize,
    right: usize,
    len: usize,
) -> (usize, usize) {
    debug_assert!(t < len);
    let chunk_start = (t / chunk) * chunk;
    let chunk_end = chunk_start + chunk - 1;
    let lo = chunk_start.saturating_sub(left);
    let hi = (chunk_end + right).min(len - 1);
    (lo, hi)
}

/// Closed input interval after stacking `layers` identical layers.
pub fn stack_interval(
    t: usize,
    chunk: usize,
    left: usize,
    right: usize,
    len: usize,
    layers: usize,
) -> (usize, usize) {
    let (mut lo, mut hi) = (t, t);
    for _ in 0..layers {
        lo = layer_interval(lo, chunk, left, right, len).0;
        hi = layer_interval(hi, chunk, left, right, len).1;
    }
    (lo, hi)
}

/// For each output frame, the closed interval of input frames it may depend
/// on, over a whole encoder (or any composition of encoders).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencySet {
    pub intervals: Vec<(usize, usize)>,
}

impl DependencySet {
    pub fn identity(len: usize) -> Self {
        DependencySet { intervals: (0..len).map(|t| (t, t)).collect() }
    }

    pub fn for_encoder(len: usize, chunk: usize, left: usize, right: usize, layers: usize) -> Self {
        DependencySet {
            intervals: (0..len).map(|t| stack_interval(t, chunk, left, right, len, layers)).collect(),
        }
    }

    /// Dependency of `self` composed on top of `inner` (frames of `self`'s
    /// input are outputs of `inner`).
    pub fn compose(&self, inner: &DependencySet) -> DependencySet {
        DependencySet {
            intervals: self
                .intervals
                .iter()
                .map(|&(lo, hi)| (inner.intervals[lo].0, inner.intervals[hi].1))
                .collect(),
        }
    }

    /// Map encoder-frame intervals back to raw frames through a stacking
    /// front-end of the given factor.
    pub fn through_time_reduce(&self, factor: usize, raw_len: usize) -> DependencySet {
        DependencySet {
            intervals: self
                .intervals
                .iter()
                .map(|&(lo, hi)| (lo * factor, (hi * factor + factor - 1).min(raw_len - 1)))
                .collect(),
        }
    }

    pub fn contains(&self, t: usize, input_frame: usize) -> bool {
        let (lo, hi) = self.intervals[t];
        (lo..=hi).contains(&input_frame)
    }

    /// Every interval of `self` contains the corresponding interval of
    /// `other`.
    pub fn is_superset_of(&self, other: &DependencySet) -> bool {
        self.intervals
            .iter()
            .zip(&other.intervals)
            .all(|(&(lo, hi), &(olo, ohi))| lo <= olo && hi >= ohi)
    }
}

/// Attention mask rows (half-open column spans) for one layer.
pub fn layer_spans(len: usize, chunk: usize, left: usize, right: usize) -> Vec<(usize, usize)> {
    (0..len)
        .map(|t| {
            let (lo, hi) = layer_interval(t, chunk, left, right, len);
            (lo, hi + 1)
        })
        .collect()
}
