//! Transformer state encoder: token + learned position embeddings, post-norm encoder
//! layers with key padding, and the CLS row as the pooled output.
//!
//! Inputs are packed: the non-PAD prefix of every state is concatenated into one
//! `[tokens, dim]` matrix and attention runs per sample over its own rows. Because PAD
//! keys are excluded from attention and PAD ids only ever form a suffix, dropping them
//! before the first layer gives the same CLS output as running the full 256 positions.
//! The last layer only evaluates the CLS query rows, since nothing else is read.

use rand::Rng;
use serde::{Deserialize, Serialize};

use davinci_core::encoding::{EncodedState, MAX_HISTORY_LEN, VOCAB_SIZE};

use crate::layers::{
    apply_mask, dropout, relu_backward, relu_in_place, LayerNorm, LayerNormCache, Linear, Param, ParamList,
    ParamListMut,
};
use crate::scalar::{gemm, Scalar, View, ViewMut};
use crate::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `x = norm(x + sublayer(x))`.
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub norm_placement: NormPlacement,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            model_dim: 128,
            num_layers: 3,
            num_heads: 4,
            feedforward_dim: 256,
            dropout: 0.1,
            max_len: MAX_HISTORY_LEN,
            norm_placement: NormPlacement::Post,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for gradient checks.
    pub fn tiny() -> Self {
        Self { model_dim: 8, num_layers: 1, num_heads: 2, feedforward_dim: 16, ..Self::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [self.vocab_size, self.model_dim, self.num_layers, self.num_heads, self.feedforward_dim, self.max_len];
        if positive.contains(&0) {
            return Err(LearnError::Config("encoder sizes must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(LearnError::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LearnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Packed token ids of several states; sample `i` owns rows `offsets[i]..offsets[i+1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<u16>,
    pub offsets: Vec<usize>,
}

impl Batch {
    pub fn from_contents<'a>(contents: impl IntoIterator<Item = &'a [u16]>) -> Self {
        let mut tokens = Vec::new();
        let mut offsets = vec![0];
        for c in contents {
            tokens.extend_from_slice(c);
            offsets.push(tokens.len());
        }
        Self { tokens, offsets }
    }

    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a EncodedState>) -> Self {
        Self::from_contents(states.into_iter().map(EncodedState::content))
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    fn check(&self, config: &EncoderConfig) -> Result<(), LearnError> {
        for w in self.offsets.windows(2) {
            let n = w[1] - w[0];
            if n == 0 || n > config.max_len {
                return Err(LearnError::Shape(format!("sample length {n} outside 1..={}", config.max_len)));
            }
        }
        if let Some(bad) = self.tokens.iter().find(|t| **t as usize >= config.vocab_size) {
            return Err(LearnError::Shape(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }
}

/// Dropout source for a forward pass; `None` means evaluation mode.
pub type Dropout<'a, R> = Option<&'a mut R>;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub ln1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln2: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    cls_only: bool,
    /// Query-side input rows when they differ from the full input.
    xq: Option<Vec<T>>,
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    prob_offsets: Vec<usize>,
    attn_drop: Option<Vec<T>>,
    a: Vec<T>,
    drop1: Option<Vec<T>>,
    ln1: LayerNormCache<T>,
    x1: Vec<T>,
    h: Vec<T>,
    h_drop: Vec<T>,
    drop_ff: Option<Vec<T>>,
    drop2: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
}

fn query_offsets(offsets: &[usize], cls_only: bool) -> Vec<usize> {
    if cls_only {
        (0..offsets.len()).collect()
    } else {
        offsets.to_vec()
    }
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(config: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = config.model_dim;
        let f = config.feedforward_dim;
        Self {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            ln1: LayerNorm::new(d),
            ff1: Linear::new(d, f, rng),
            ff2: Linear::new(f, d, rng),
            ln2: LayerNorm::new(d),
        }
    }

    /// Runs the layer. With `cls_only`, only the first row of each sample is produced.
    pub fn forward<R: Rng>(
        &self,
        config: &EncoderConfig,
        x: Vec<T>,
        offsets: &[usize],
        cls_only: bool,
        mut rng: Dropout<'_, R>,
    ) -> (Vec<T>, LayerCache<T>) {
        let d = config.model_dim;
        let heads = config.num_heads;
        let dh = config.head_dim();
        let p = config.dropout;
        let n = *offsets.last().expect("offsets start at 0");
        let q_off = query_offsets(offsets, cls_only);
        let m = *q_off.last().expect("offsets start at 0");
        let xq = cls_only.then(|| {
            let mut rows = Vec::with_capacity(m * d);
            for &o in &offsets[..offsets.len() - 1] {
                rows.extend_from_slice(&x[o * d..(o + 1) * d]);
            }
            rows
        });
        let xq_ref = xq.as_deref().unwrap_or(&x);
        let q = self.wq.forward(xq_ref, m);
        let k = self.wk.forward(&x, n);
        let v = self.wv.forward(&x, n);

        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut prob_offsets = vec![0usize];
        for s in 0..offsets.len() - 1 {
            let nk = offsets[s + 1] - offsets[s];
            let nq = q_off[s + 1] - q_off[s];
            prob_offsets.push(prob_offsets[s] + heads * nq * nk);
        }
        let mut probs = vec![T::zero(); *prob_offsets.last().unwrap()];
        let mut a = vec![T::zero(); m * d];
        let mut attn_drop_all: Option<Vec<T>> = rng.as_ref().map(|_| Vec::with_capacity(probs.len()));
        let mut dropped = Vec::new();
        for s in 0..offsets.len() - 1 {
            let (ks, nk) = (offsets[s], offsets[s + 1] - offsets[s]);
            let (qs, nq) = (q_off[s], q_off[s + 1] - q_off[s]);
            for h in 0..heads {
                let base = prob_offsets[s] + h * nq * nk;
                let block = &mut probs[base..base + nq * nk];
                gemm(
                    scale,
                    View::block(&q, qs * d + h * dh, nq, dh, d),
                    View::block(&k, ks * d + h * dh, nk, dh, d).t(),
                    T::zero(),
                    ViewMut::dense(block, nq, nk),
                );
                softmax_rows(block, nk);
                let used: &[T] = match (rng.as_deref_mut(), attn_drop_all.as_mut()) {
                    (Some(r), Some(masks)) => {
                        dropped.clear();
                        dropped.extend_from_slice(block);
                        let mask = dropout(&mut dropped, p, r);
                        masks.extend_from_slice(&mask);
                        &dropped
                    }
                    _ => block,
                };
                gemm(
                    T::one(),
                    View::dense(used, nq, nk),
                    View::block(&v, ks * d + h * dh, nk, dh, d),
                    T::zero(),
                    ViewMut::block(&mut a, qs * d + h * dh, nq, dh, d),
                );
            }
        }

        let mut attn_out = self.wo.forward(&a, m);
        let drop1 = rng.as_deref_mut().map(|r| dropout(&mut attn_out, p, r));
        for (o, xv) in attn_out.iter_mut().zip(xq_ref) {
            *o += *xv;
        }
        let (x1, ln1) = self.ln1.forward(&attn_out, m);

        let mut h = self.ff1.forward(&x1, m);
        relu_in_place(&mut h);
        let mut h_drop = h.clone();
        let drop_ff = rng.as_deref_mut().map(|r| dropout(&mut h_drop, p, r));
        let mut f = self.ff2.forward(&h_drop, m);
        let drop2 = rng.map(|r| dropout(&mut f, p, r));
        for (o, xv) in f.iter_mut().zip(&x1) {
            *o += *xv;
        }
        let (out, ln2) = self.ln2.forward(&f, m);
        let cache = LayerCache {
            cls_only,
            xq,
            x,
            q,
            k,
            v,
            probs,
            prob_offsets,
            attn_drop: attn_drop_all,
            a,
            drop1,
            ln1,
            x1,
            h,
            h_drop,
            drop_ff,
            drop2,
            ln2,
        };
        (out, cache)
    }

    /// Returns the gradient with respect to the full layer input `[tokens, dim]`.
    pub fn backward(&mut self, config: &EncoderConfig, cache: &LayerCache<T>, offsets: &[usize], dout: &[T]) -> Vec<T> {
        let d = config.model_dim;
        let heads = config.num_heads;
        let dh = config.head_dim();
        let n = *offsets.last().unwrap();
        let q_off = query_offsets(offsets, cache.cls_only);
        let m = *q_off.last().unwrap();
        let xq = cache.xq.as_deref().unwrap_or(&cache.x);

        let dr2 = self.ln2.backward(&cache.ln2, dout, m);
        let mut df = dr2.clone();
        apply_mask(&mut df, cache.drop2.as_ref());
        let mut dh_drop = self.ff2.backward(&cache.h_drop, &df, m);
        apply_mask(&mut dh_drop, cache.drop_ff.as_ref());
        relu_backward(&cache.h, &mut dh_drop);
        let mut dx1 = self.ff1.backward(&cache.x1, &dh_drop, m);
        for (g, r) in dx1.iter_mut().zip(&dr2) {
            *g += *r;
        }
        let dr1 = self.ln1.backward(&cache.ln1, &dx1, m);
        let mut dattn = dr1.clone();
        apply_mask(&mut dattn, cache.drop1.as_ref());
        let da = self.wo.backward(&cache.a, &dattn, m);

        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut dq = vec![T::zero(); m * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut used = Vec::new();
        let mut dp = Vec::new();
        for s in 0..offsets.len() - 1 {
            let (ks, nk) = (offsets[s], offsets[s + 1] - offsets[s]);
            let (qs, nq) = (q_off[s], q_off[s + 1] - q_off[s]);
            for h in 0..heads {
                let base = cache.prob_offsets[s] + h * nq * nk;
                let probs = &cache.probs[base..base + nq * nk];
                let mask = cache.attn_drop.as_ref().map(|m| &m[base..base + nq * nk]);
                used.clear();
                used.extend_from_slice(probs);
                if let Some(mask) = mask {
                    for (u, mv) in used.iter_mut().zip(mask) {
                        *u *= *mv;
                    }
                }
                gemm(
                    T::one(),
                    View::dense(&used, nq, nk).t(),
                    View::block(&da, qs * d + h * dh, nq, dh, d),
                    T::zero(),
                    ViewMut::block(&mut dv, ks * d + h * dh, nk, dh, d),
                );
                dp.clear();
                dp.resize(nq * nk, T::zero());
                gemm(
                    T::one(),
                    View::block(&da, qs * d + h * dh, nq, dh, d),
                    View::block(&cache.v, ks * d + h * dh, nk, dh, d).t(),
                    T::zero(),
                    ViewMut::dense(&mut dp, nq, nk),
                );
                if let Some(mask) = mask {
                    for (g, mv) in dp.iter_mut().zip(mask) {
                        *g *= *mv;
                    }
                }
                for r in 0..nq {
                    let prow = &probs[r * nk..(r + 1) * nk];
                    let grow = &mut dp[r * nk..(r + 1) * nk];
                    let dot: T = prow.iter().zip(grow.iter()).map(|(pv, gv)| *pv * *gv).sum();
                    for (g, pv) in grow.iter_mut().zip(prow) {
                        *g = *pv * (*g - dot) * scale;
                    }
                }
                gemm(
                    T::one(),
                    View::dense(&dp, nq, nk),
                    View::block(&cache.k, ks * d + h * dh, nk, dh, d),
                    T::zero(),
                    ViewMut::block(&mut dq, qs * d + h * dh, nq, dh, d),
                );
                gemm(
                    T::one(),
                    View::dense(&dp, nq, nk).t(),
                    View::block(&cache.q, qs * d + h * dh, nq, dh, d),
                    T::zero(),
                    ViewMut::block(&mut dk, ks * d + h * dh, nk, dh, d),
                );
            }
        }

        let mut dxq = self.wq.backward(xq, &dq, m);
        for (g, r) in dxq.iter_mut().zip(&dr1) {
            *g += *r;
        }
        let mut dx = self.wk.backward(&cache.x, &dk, n);
        let dxv = self.wv.backward(&cache.x, &dv, n);
        for (g, v) in dx.iter_mut().zip(&dxv) {
            *g += *v;
        }
        if cache.cls_only {
            for (s, &o) in offsets[..offsets.len() - 1].iter().enumerate() {
                for j in 0..d {
                    dx[o * d + j] += dxq[s * d + j];
                }
            }
        } else {
            for (g, v) in dx.iter_mut().zip(&dxq) {
                *g += *v;
            }
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, T>) {
        self.wq.params(&format!("{prefix}.attn.q"), out);
        self.wk.params(&format!("{prefix}.attn.k"), out);
        self.wv.params(&format!("{prefix}.attn.v"), out);
        self.wo.params(&format!("{prefix}.attn.out"), out);
        self.ln1.params(&format!("{prefix}.norm1"), out);
        self.ff1.params(&format!("{prefix}.ff1"), out);
        self.ff2.params(&format!("{prefix}.ff2"), out);
        self.ln2.params(&format!("{prefix}.norm2"), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamListMut<'a, T>) {
        self.wq.params_mut(&format!("{prefix}.attn.q"), out);
        self.wk.params_mut(&format!("{prefix}.attn.k"), out);
        self.wv.params_mut(&format!("{prefix}.attn.v"), out);
        self.wo.params_mut(&format!("{prefix}.attn.out"), out);
        self.ln1.params_mut(&format!("{prefix}.norm1"), out);
        self.ff1.params_mut(&format!("{prefix}.ff1"), out);
        self.ff2.params_mut(&format!("{prefix}.ff2"), out);
        self.ln2.params_mut(&format!("{prefix}.norm2"), out);
    }
}

/// Numerically stable softmax applied to each row of width `cols`.
pub fn softmax_rows<T: Scalar>(x: &mut [T], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder<T> {
    pub config: EncoderConfig,
    pub token_embedding: Param<T>,
    pub position_embedding: Param<T>,
    pub layers: Vec<EncoderLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> StateEncoder<T> {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self, LearnError> {
        config.validate()?;
        let d = config.model_dim;
        let bound = 1.0 / (d as f64).sqrt();
        let token_embedding = Param::uniform(&[config.vocab_size, d], bound, rng);
        let position_embedding = Param::uniform(&[config.max_len, d], bound, rng);
        let layers = (0..config.num_layers).map(|_| EncoderLayer::new(&config, rng)).collect();
        Ok(Self { config, token_embedding, position_embedding, layers })
    }

    /// CLS outputs `[batch, model_dim]`; dropout is active iff `rng` is given.
    pub fn forward<R: Rng>(&self, batch: &Batch, mut rng: Dropout<'_, R>) -> Result<(Vec<T>, EncoderCache<T>), LearnError> {
        batch.check(&self.config)?;
        let d = self.config.model_dim;
        let mut x = vec![T::zero(); batch.rows() * d];
        for s in 0..batch.len() {
            for (pos, row) in (batch.offsets[s]..batch.offsets[s + 1]).enumerate() {
                let tok = batch.tokens[row] as usize;
                let out = &mut x[row * d..(row + 1) * d];
                let te = &self.token_embedding.value[tok * d..(tok + 1) * d];
                let pe = &self.position_embedding.value[pos * d..(pos + 1) * d];
                for j in 0..d {
                    out[j] = te[j] + pe[j];
                }
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&self.config, x, &batch.offsets, i == last, rng.as_deref_mut());
            caches.push(cache);
            x = y;
        }
        Ok((x, EncoderCache { layers: caches }))
    }

    pub fn backward(&mut self, batch: &Batch, cache: &EncoderCache<T>, dcls: &[T]) {
        let d = self.config.model_dim;
        let mut g = dcls.to_vec();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            g = layer.backward(&self.config, lc, &batch.offsets, &g);
        }
        for s in 0..batch.len() {
            for (pos, row) in (batch.offsets[s]..batch.offsets[s + 1]).enumerate() {
                let tok = batch.tokens[row] as usize;
                let gr = &g[row * d..(row + 1) * d];
                for j in 0..d {
                    self.token_embedding.grad[tok * d + j] += gr[j];
                    self.position_embedding.grad[pos * d + j] += gr[j];
                }
            }
        }
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut ParamList<'a, T>) {
        out.push((format!("{prefix}.token_embedding"), &self.token_embedding));
        out.push((format!("{prefix}.position_embedding"), &self.position_embedding));
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("{prefix}.layers.{i}"), out);
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamListMut<'a, T>) {
        out.push((format!("{prefix}.token_embedding"), &mut self.token_embedding));
        out.push((format!("{prefix}.position_embedding"), &mut self.position_embedding));
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.params_mut(&format!("{prefix}.layers.{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig { num_heads: 3, ..EncoderConfig::default() };
        assert!(matches!(bad.validate(), Err(LearnError::Config(_))));
        let bad = EncoderConfig { dropout: 1.0, ..EncoderConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut x = vec![1.0f64, 2.0, 3.0, -1e9, 0.0, 0.0];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(x[3], 0.0);
        assert!((x[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn output_has_model_dim_per_sample_and_eval_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = StateEncoder::<f32>::new(EncoderConfig::default(), &mut rng).unwrap();
        let batch = Batch::from_contents([&[57u16, 51, 3, 4][..], &[57, 52][..]]);
        let (a, _) = enc.forward::<SmallRng>(&batch, None).unwrap();
        let (b, _) = enc.forward::<SmallRng>(&batch, None).unwrap();
        assert_eq!(a.len(), 2 * 128);
        assert_eq!(a, b);
    }

    #[test]
    fn samples_do_not_interact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = StateEncoder::<f64>::new(EncoderConfig::tiny(), &mut rng).unwrap();
        let s1: &[u16] = &[57, 51, 3, 4, 9];
        let s2: &[u16] = &[57, 52, 30];
        let (both, _) = enc.forward::<SmallRng>(&Batch::from_contents([s1, s2]), None).unwrap();
        let (alone, _) = enc.forward::<SmallRng>(&Batch::from_contents([s2]), None).unwrap();
        assert_eq!(&both[8..], &alone[..]);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = StateEncoder::<f64>::new(EncoderConfig::tiny(), &mut rng).unwrap();
        assert!(enc.forward::<SmallRng>(&Batch::from_contents([&[][..]]), None).is_err());
        assert!(enc.forward::<SmallRng>(&Batch::from_contents([&[200u16][..]]), None).is_err());
        let long = vec![1u16; 257];
        assert!(enc.forward::<SmallRng>(&Batch::from_contents([&long[..]]), None).is_err());
    }
}
