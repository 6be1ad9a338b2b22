//! Per-iteration weight heads: `W_i = softmax(MLP_i(F'))`.
//!
//! # Binary layout
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`.
//!
//! | bytes            | content                                              |
//! |------------------|------------------------------------------------------|
//! | 8                | magic `DSNETWH\0`                                    |
//! | 4                | format version (1)                                   |
//! | 4 × 4            | feature dim `D`, hidden width `H`, candidates `l`, iterations `I` |
//! | 8 × l            | bandwidth candidates (meters)                        |
//! | 8 × D            | feature means                                        |
//! | 8 × D            | feature scales (inverse std)                         |
//! | 8 × I × P        | parameters, iteration-major                          |
//!
//! Per iteration (`P` reals): with `H > 0`, `W1` (D×H row-major), `b1` (H),
//! `W2` (H×l), `b2` (l); with `H = 0`, `W` (D×l) and `b` (l).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Matrix, Result};

pub const HEAD_MAGIC: &[u8; 8] = b"DSNETWH\0";
pub const HEAD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadDims {
    pub feature_dim: usize,
    /// Hidden width; 0 makes each iteration a plain affine map.
    pub hidden: usize,
    pub candidates: usize,
    pub iterations: usize,
}

impl HeadDims {
    pub fn params_per_iteration(&self) -> usize {
        let (d, h, l) = (self.feature_dim, self.hidden, self.candidates);
        if h == 0 {
            d * l + l
        } else {
            d * h + h + h * l + l
        }
    }

    pub fn param_count(&self) -> usize {
        self.iterations * self.params_per_iteration()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightHead {
    pub dims: HeadDims,
    pub bandwidths: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
}

/// Forward intermediates for one iteration, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub(crate) normalized: Matrix,
    pub(crate) hidden_pre: Option<Matrix>,
    pub weights: Matrix,
}

impl WeightHead {
    /// All parameters zero: every iteration outputs uniform weights.
    pub fn zeros(dims: HeadDims, bandwidths: &[f64]) -> Self {
        assert_eq!(bandwidths.len(), dims.candidates, "one bandwidth per candidate");
        Self {
            dims,
            bandwidths: bandwidths.to_vec(),
            input_mean: vec![0.0; dims.feature_dim],
            input_scale: vec![1.0; dims.feature_dim],
            params: vec![0.0; dims.param_count()],
        }
    }

    /// Glorot-uniform hidden layer, zero output layer (uniform initial weights).
    pub fn random(dims: HeadDims, bandwidths: &[f64], seed: u64) -> Self {
        let mut head = Self::zeros(dims, bandwidths);
        if dims.hidden > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limit = libm::sqrt(6.0 / (dims.feature_dim + dims.hidden) as f64);
            let per = dims.params_per_iteration();
            for it in 0..dims.iterations {
                let w1 = &mut head.params[it * per..it * per + dims.feature_dim * dims.hidden];
                for v in w1 {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        head
    }

    /// Sets the input standardization from the rows of `features`.
    pub fn fit_normalization<'a>(&mut self, features: impl IntoIterator<Item = &'a Matrix>) {
        let d = self.dims.feature_dim;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for m in features {
            for r in 0..m.rows {
                for (k, &v) in m.row(r).iter().enumerate().take(d) {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        for k in 0..d {
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean).max(0.0);
            let std = libm::sqrt(var);
            self.input_mean[k] = mean;
            self.input_scale[k] = if std > 1e-12 { 1.0 / std } else { 1.0 };
        }
    }

    fn check_features(&self, features: &Matrix, iteration: usize) -> Result<()> {
        if features.cols != self.dims.feature_dim {
            return Err(Error::LengthMismatch {
                what: "feature columns",
                expected: self.dims.feature_dim,
                got: features.cols,
            });
        }
        if iteration >= self.dims.iterations {
            return Err(Error::InvalidConfig(format!(
                "iteration {iteration} outside a head with {} iterations",
                self.dims.iterations
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: &Matrix, iteration: usize) -> Result<Matrix> {
        Ok(self.forward_cached(features, iteration)?.weights)
    }

    pub(crate) fn forward_cached(&self, features: &Matrix, iteration: usize) -> Result<HeadCache> {
        self.check_features(features, iteration)?;
        let HeadDims {
            feature_dim: d,
            hidden: h,
            candidates: l,
            ..
        } = self.dims;
        let rows = features.rows;
        let mut normalized = features.clone();
        for r in 0..rows {
            for (k, v) in normalized.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.input_mean[k]) * self.input_scale[k];
            }
        }
        let block = self.block(iteration);
        let mut logits = Matrix::zeros(rows, l);
        let hidden_pre = if h == 0 {
            let (w, b) = block.split_at(d * l);
            affine(&normalized, w, b, &mut logits);
            None
        } else {
            let (w1, rest) = block.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * l);
            let mut pre = Matrix::zeros(rows, h);
            affine(&normalized, w1, b1, &mut pre);
            let mut act = pre.clone();
            for v in &mut act.data {
                *v = v.max(0.0);
            }
            affine(&act, w2, b2, &mut logits);
            Some(pre)
        };
        for r in 0..rows {
            softmax_in_place(logits.row_mut(r));
        }
        Ok(HeadCache {
            normalized,
            hidden_pre,
            weights: logits,
        })
    }

    /// Accumulates `dL/dparams` for `iteration` into `grad`, given `dL/dW`.
    pub(crate) fn backward(&self, cache: &HeadCache, iteration: usize, d_weights: &Matrix, grad: &mut [f64]) {
        let HeadDims {
            feature_dim: d,
            hidden: h,
            candidates: l,
            ..
        } = self.dims;
        let rows = cache.weights.rows;
        let mut dz = Matrix::zeros(rows, l);
        for r in 0..rows {
            let w = cache.weights.row(r);
            let g = d_weights.row(r);
            let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            for (j, out) in dz.row_mut(r).iter_mut().enumerate() {
                *out = w[j] * (g[j] - dot);
            }
        }
        let per = self.dims.params_per_iteration();
        let block_grad = &mut grad[iteration * per..(iteration + 1) * per];
        if h == 0 {
            let (gw, gb) = block_grad.split_at_mut(d * l);
            affine_backward(&cache.normalized, &dz, gw, gb);
            return;
        }
        let block = self.block(iteration);
        let w2 = &block[d * h + h..d * h + h + h * l];
        let pre = cache.hidden_pre.as_ref().expect("hidden cache");
        let mut act = pre.clone();
        for v in &mut act.data {
            *v = v.max(0.0);
        }
        let (gw1, rest) = block_grad.split_at_mut(d * h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h * l);
        affine_backward(&act, &dz, gw2, gb2);
        let mut dpre = Matrix::zeros(rows, h);
        for r in 0..rows {
            let dzr = dz.row(r);
            let pr = pre.row(r);
            for (k, out) in dpre.row_mut(r).iter_mut().enumerate() {
                if pr[k] > 0.0 {
                    *out = (0..l).map(|j| dzr[j] * w2[k * l + j]).sum();
                }
            }
        }
        affine_backward(&cache.normalized, &dpre, gw1, gb1);
    }

    fn block(&self, iteration: usize) -> &[f64] {
        let per = self.dims.params_per_iteration();
        &self.params[iteration * per..(iteration + 1) * per]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * (self.bandwidths.len() + 2 * self.dims.feature_dim + self.params.len()));
        out.extend_from_slice(HEAD_MAGIC);
        for v in [
            HEAD_VERSION,
            self.dims.feature_dim as u32,
            self.dims.hidden as u32,
            self.dims.candidates as u32,
            self.dims.iterations as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self
            .bandwidths
            .iter()
            .chain(&self.input_mean)
            .chain(&self.input_scale)
            .chain(&self.params)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..8] != HEAD_MAGIC {
            return Err(Error::HeadFormat("missing magic bytes".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        if word(0) as u32 != HEAD_VERSION {
            return Err(Error::HeadFormat(format!("unsupported version {}", word(0))));
        }
        let dims = HeadDims {
            feature_dim: word(1),
            hidden: word(2),
            candidates: word(3),
            iterations: word(4),
        };
        let reals = dims.candidates + 2 * dims.feature_dim + dims.param_count();
        if bytes.len() != 28 + 8 * reals {
            return Err(Error::HeadFormat(format!(
                "expected {} bytes, found {}",
                28 + 8 * reals,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[28..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (bandwidths, rest) = values.split_at(dims.candidates);
        let (input_mean, rest) = rest.split_at(dims.feature_dim);
        let (input_scale, params) = rest.split_at(dims.feature_dim);
        Ok(Self {
            dims,
            bandwidths: bandwidths.to_vec(),
            input_mean: input_mean.to_vec(),
            input_scale: input_scale.to_vec(),
            params: params.to_vec(),
        })
    }
}

/// `out = x W + b` with `W` stored row-major `x.cols × out.cols`.
fn affine(x: &Matrix, w: &[f64], b: &[f64], out: &mut Matrix) {
    let k = out.cols;
    for r in 0..x.rows {
        let xr = x.row(r);
        let o = out.row_mut(r);
        o.copy_from_slice(b);
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[i * k..(i + 1) * k];
            for (ov, &wv) in o.iter_mut().zip(wr) {
                *ov += xv * wv;
            }
        }
    }
}

fn affine_backward(x: &Matrix, d_out: &Matrix, gw: &mut [f64], gb: &mut [f64]) {
    let k = d_out.cols;
    for r in 0..x.rows {
        let g = d_out.row(r);
        for (bv, &gv) in gb.iter_mut().zip(g) {
            *bv += gv;
        }
        for (i, &xv) in x.row(r).iter().enumerate() {
            let wr = &mut gw[i * k..(i + 1) * k];
            for (wv, &gv) in wr.iter_mut().zip(g) {
                *wv += xv * gv;
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `W_i = softmax(MLP_i(features))`, one row per seed.
pub fn weight_head_forward(features: &Matrix, iteration: usize, head: &WeightHead) -> Result<Matrix> {
    head.forward(features, iteration)
}
