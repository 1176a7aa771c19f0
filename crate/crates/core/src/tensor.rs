//! Dense tensor container and the primitive numeric operations every
//! attention block is built from.
//!
//! Layout is row-major with the last axis fastest. Feature clips are stored
//! channels-last as (T, H, W, C), so the flattened (T*H*W, C) view used by
//! the matrix-form blocks is a pure reshape. All reductions accumulate in
//! 64-bit regardless of storage precision.

use crate::element::Element;
use crate::error::{argument, dimension, Result};

/// Dense tensor: a shape and a contiguous row-major value buffer.
///
/// Tensors are immutable after construction; every operation returns a new
/// tensor, so values may be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Tensor<E>> {
        if shape.is_empty() {
            return Err(argument("tensor shape must have at least one axis"));
        }
        if shape.contains(&0) {
            return Err(argument(format!("all extents must be >= 1, got {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(dimension(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                count,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Tensor<E>> {
        let count: usize = shape.iter().product();
        Tensor::new(shape, vec![E::ZERO; count])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Tensor<E>> {
        let count: usize = shape.iter().product();
        Tensor::new(shape, vec![E::from_f64(value); count])
    }

    pub fn scalar(value: f64) -> Tensor<E> {
        Tensor {
            shape: vec![1],
            data: vec![E::from_f64(value)],
        }
    }

    /// Identity matrix of extent n.
    pub fn eye(n: usize) -> Result<Tensor<E>> {
        let mut data = vec![E::ZERO; n * n];
        for i in 0..n {
            data[i * n + i] = E::ONE;
        }
        Tensor::new(vec![n, n], data)
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> Result<Tensor<E>> {
        Tensor::new(shape, values.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|v| v.to_f64())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Re-interpret the same buffer under a new shape. Consumes self, moves
    /// the allocation; the round-trip is bit-exact by construction.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor<E>> {
        let count: usize = shape.iter().product();
        if count != self.data.len() || shape.contains(&0) {
            return Err(dimension(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<E>> {
        self.clone().reshape(shape)
    }

    fn require_rank2(&self, op: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(dimension(format!(
                "{op} expects a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Matrix product with 64-bit accumulation: c[i][j] = sum_p a[i][p]*b[p][j].
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (m, k) = self.require_rank2("matmul")?;
        let (k2, n) = other.require_rank2("matmul")?;
        if k != k2 {
            return Err(dimension(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![E::ZERO; m * n];
        let mut acc = vec![0.0f64; n];
        for i in 0..m {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..k {
                let a = self.data[i * k + p].to_f64();
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                for (slot, &b) in acc.iter_mut().zip(row.iter()) {
                    *slot += a * b.to_f64();
                }
            }
            for (j, &v) in acc.iter().enumerate() {
                out[i * n + j] = E::from_f64(v);
            }
        }
        let result = Tensor::new(vec![m, n], out)?;
        debug_check_finite(&result, "matmul");
        Ok(result)
    }

    /// Row-wise softmax with max-subtraction for stability; each output row
    /// sums to 1 and all entries lie in (0, 1].
    pub fn softmax_rows(&self) -> Result<Tensor<E>> {
        let (m, n) = self.require_rank2("softmax_rows")?;
        if !self.all_finite() {
            return Err(argument("softmax_rows requires finite entries"));
        }
        let mut out = vec![E::ZERO; m * n];
        let mut row = vec![0.0f64; n];
        for i in 0..m {
            let src = &self.data[i * n..(i + 1) * n];
            let max = src
                .iter()
                .map(|v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0f64;
            for (slot, v) in row.iter_mut().zip(src.iter()) {
                let e = (v.to_f64() - max).exp();
                *slot = e;
                sum += e;
            }
            for (j, &e) in row.iter().enumerate() {
                out[i * n + j] = E::from_f64(e / sum);
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        let data = self
            .data
            .iter()
            .map(|&v| if v.to_f64() > 0.0 { v } else { E::ZERO })
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Clamp into [0, 1]. Removes the rounding excess above one that
    /// normalized self-similarities can carry.
    pub fn clamp_unit(&self) -> Result<Tensor<E>> {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let x = v.to_f64();
                if x <= 0.0 {
                    E::ZERO
                } else if x >= 1.0 {
                    E::ONE
                } else {
                    v
                }
            })
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        broadcast_binary(self, other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        broadcast_binary(self, other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        broadcast_binary(self, other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Result<Tensor<E>> {
        let data = self
            .data
            .iter()
            .map(|v| E::from_f64(v.to_f64() * k))
            .collect();
        let out = Tensor::new(self.shape.clone(), data)?;
        debug_check_finite(&out, "scale");
        Ok(out)
    }

    /// Exact elementwise division by a scalar (one rounding, not a
    /// reciprocal multiply).
    pub fn div_scalar(&self, d: f64) -> Result<Tensor<E>> {
        if d == 0.0 {
            return Err(argument("division by zero"));
        }
        let data = self
            .data
            .iter()
            .map(|v| E::from_f64(v.to_f64() / d))
            .collect();
        let out = Tensor::new(self.shape.clone(), data)?;
        debug_check_finite(&out, "div_scalar");
        Ok(out)
    }

    pub fn transpose2d(&self) -> Result<Tensor<E>> {
        let (m, n) = self.require_rank2("transpose2d")?;
        let mut out = vec![E::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Sum of all elements, accumulated in 64-bit, as a shape-(1) tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        let sum: f64 = self.iter_f64().sum();
        Tensor::scalar(sum)
    }

    /// Column means of a rank-2 tensor: (m, n) -> (1, n).
    pub fn mean_rows(&self) -> Result<Tensor<E>> {
        let (m, n) = self.require_rank2("mean_rows")?;
        let mut acc = vec![0.0f64; n];
        for i in 0..m {
            for (slot, v) in acc.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *slot += v.to_f64();
            }
        }
        let inv = 1.0 / m as f64;
        Tensor::new(vec![1, n], acc.iter().map(|&v| E::from_f64(v * inv)).collect())
    }

    /// Per-channel affine normalization over the last axis of a rank-2
    /// tensor: (x - mean) / sqrt(var + eps) * gamma + beta.
    pub fn batch_norm_rows(
        &self,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        mean: &Tensor<E>,
        var: &Tensor<E>,
        eps: f64,
    ) -> Result<Tensor<E>> {
        let (m, c) = self.require_rank2("batch_norm_rows")?;
        for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
            if t.len() != c {
                return Err(dimension(format!(
                    "batch_norm {name} has {} entries, expected {c}",
                    t.len()
                )));
            }
        }
        if var.iter_f64().any(|v| v < 0.0) {
            return Err(argument("batch_norm variance entries must be >= 0"));
        }
        let inv_sigma: Vec<f64> = var
            .iter_f64()
            .map(|v| 1.0 / (v + eps).sqrt())
            .collect();
        let mut out = vec![E::ZERO; m * c];
        for i in 0..m {
            for j in 0..c {
                let x = self.data[i * c + j].to_f64();
                let y = (x - mean.data[j].to_f64()) * inv_sigma[j] * gamma.data[j].to_f64()
                    + beta.data[j].to_f64();
                out[i * c + j] = E::from_f64(y);
            }
        }
        let result = Tensor::new(vec![m, c], out)?;
        debug_check_finite(&result, "batch_norm_rows");
        Ok(result)
    }
}

/// Elementwise binary op with size-1 axis broadcast.
///
/// Operands must have equal rank; along each axis the extents must either
/// match or one of them must be 1, in which case that operand is replicated.
fn broadcast_binary<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    op: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor<E>> {
    if a.shape.len() != b.shape.len() {
        return Err(dimension(format!(
            "{op}: rank mismatch {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out_shape = Vec::with_capacity(a.shape.len());
    for (&da, &db) in a.shape.iter().zip(&b.shape) {
        if da == db {
            out_shape.push(da);
        } else if da == 1 {
            out_shape.push(db);
        } else if db == 1 {
            out_shape.push(da);
        } else {
            return Err(dimension(format!(
                "{op}: shapes {:?} and {:?} are not broadcastable",
                a.shape, b.shape
            )));
        }
    }
    if a.shape == b.shape {
        // Fast path; also keeps the zero-broadcast identity bit-exact.
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| E::from_f64(f(x.to_f64(), y.to_f64())))
            .collect();
        let out = Tensor::new(out_shape, data)?;
        debug_check_finite(&out, op);
        return Ok(out);
    }
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let count: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(count);
    let mut coords = vec![0usize; out_shape.len()];
    for _ in 0..count {
        let ia: usize = coords.iter().zip(&sa).map(|(&c, &s)| c * s).sum();
        let ib: usize = coords.iter().zip(&sb).map(|(&c, &s)| c * s).sum();
        out.push(E::from_f64(f(a.data[ia].to_f64(), b.data[ib].to_f64())));
        for axis in (0..coords.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < out_shape[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
    let out = Tensor::new(out_shape, out)?;
    debug_check_finite(&out, op);
    Ok(out)
}

/// Row-major strides with 0 on axes where the operand has extent 1.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut stride = 1usize;
    for axis in (0..shape.len()).rev() {
        strides[axis] = if shape[axis] == 1 && out_shape[axis] != 1 {
            0
        } else {
            stride
        };
        stride *= shape[axis];
    }
    strides
}

/// Operations must not manufacture NaN/Inf from finite input; verified in
/// debug builds only.
#[inline]
pub(crate) fn debug_check_finite<E: Element>(t: &Tensor<E>, op: &str) {
    debug_assert!(
        t.all_finite(),
        "{op} produced a non-finite value on finite input"
    );
}

/// Space-time feature clip: a rank-4 (T, H, W, C) tensor with named extents.
///
/// The flattened view stacks positions row-major over (t, h, w), so position
/// index p = (t*H + h)*W + w, each row holding that position's C channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip<E: Element> {
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    tensor: Tensor<E>,
}

impl<E: Element> FeatureClip<E> {
    pub fn new(tensor: Tensor<E>) -> Result<FeatureClip<E>> {
        if tensor.rank() != 4 {
            return Err(dimension(format!(
                "a feature clip is rank-4 (T,H,W,C), got shape {:?}",
                tensor.shape()
            )));
        }
        let s = tensor.shape();
        Ok(FeatureClip {
            t: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            tensor,
        })
    }

    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Result<FeatureClip<E>> {
        FeatureClip::new(Tensor::zeros(vec![t, h, w, c])?)
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Number of space-time positions P = T*H*W.
    pub fn positions(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t, self.h, self.w, self.c)
    }

    pub fn tensor(&self) -> &Tensor<E> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<E> {
        self.tensor
    }

    /// The (P, C) view; a pure reshape of the channels-last layout.
    pub fn flatten(&self) -> Tensor<E> {
        self.tensor
            .clone()
            .reshape(vec![self.positions(), self.c])
            .expect("flatten preserves the element count")
    }

    /// Inverse of `flatten`; bit-exact round trip.
    pub fn unflatten(t: usize, h: usize, w: usize, flat: Tensor<E>) -> Result<FeatureClip<E>> {
        if flat.rank() != 2 || flat.shape()[0] != t * h * w {
            return Err(dimension(format!(
                "unflatten expects ({}, C), got {:?}",
                t * h * w,
                flat.shape()
            )));
        }
        let c = flat.shape()[1];
        FeatureClip::new(flat.reshape(vec![t, h, w, c])?)
    }

    pub fn value(&self, t: usize, h: usize, w: usize, ch: usize) -> f64 {
        self.tensor.data[((t * self.h + h) * self.w + w) * self.c + ch].to_f64()
    }

    pub fn position_index(&self, t: usize, h: usize, w: usize) -> Result<usize> {
        if t >= self.t || h >= self.h || w >= self.w {
            return Err(argument(format!(
                "position ({t},{h},{w}) outside clip extents ({},{},{})",
                self.t, self.h, self.w
            )));
        }
        Ok((t * self.h + h) * self.w + w)
    }

    /// Pointwise (1x1x1) convolution over channels: each position's channel
    /// vector is multiplied by `weight` (cin x cout), plus an optional bias.
    pub fn conv1x1(&self, weight: &Tensor<E>, bias: Option<&Tensor<E>>) -> Result<FeatureClip<E>> {
        let (cin, cout) = weight.require_rank2("conv1x1 weight")?;
        if cin != self.c {
            return Err(dimension(format!(
                "conv1x1: input has {} channels, weight expects {cin}",
                self.c
            )));
        }
        if let Some(b) = bias {
            if b.len() != cout {
                return Err(dimension(format!(
                    "conv1x1: bias has {} entries, expected {cout}",
                    b.len()
                )));
            }
        }
        let p = self.positions();
        let x = &self.tensor.data;
        let mut out = vec![E::ZERO; p * cout];
        for i in 0..p {
            let row = &x[i * cin..(i + 1) * cin];
            for j in 0..cout {
                let mut acc = match bias {
                    Some(b) => b.data[j].to_f64(),
                    None => 0.0,
                };
                for (ch, &v) in row.iter().enumerate() {
                    acc += v.to_f64() * weight.data[ch * cout + j].to_f64();
                }
                out[i * cout + j] = E::from_f64(acc);
            }
        }
        let flat = Tensor::new(vec![p, cout], out)?;
        debug_check_finite(&flat, "conv1x1");
        FeatureClip::unflatten(self.t, self.h, self.w, flat)
    }

    /// Inference-mode batch normalization with per-channel statistics.
    pub fn batch_norm_inference(
        &self,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        mean: &Tensor<E>,
        var: &Tensor<E>,
        eps: f64,
    ) -> Result<FeatureClip<E>> {
        let flat = self.flatten().batch_norm_rows(gamma, beta, mean, var, eps)?;
        FeatureClip::unflatten(self.t, self.h, self.w, flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
        let count: usize = shape.iter().product();
        let data: Vec<f64> = (0..count).map(|_| rng.uniform(1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_case() {
        let id = Tensor::<f64>::eye(2).unwrap();
        let m = Tensor::from_f64_slice(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(id.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_projector_case() {
        let p = Tensor::<f64>::from_f64_slice(vec![2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = Tensor::from_f64_slice(vec![2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        let out = p.matmul(&m).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_reference() {
        let mut rng = Rng::new(11);
        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        let got = a.matmul(&b).unwrap();
        // Naive triple loop, the stated oracle.
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                let g = got.data()[i * 2 + j];
                let rel = (g - acc).abs() / acc.abs().max(1e-8);
                assert!(rel <= 1e-12, "rel err {rel} at ({i},{j})");
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![4, 2]).unwrap();
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn matmul_is_bilinear() {
        let mut rng = Rng::new(5);
        let a = random_tensor(vec![4, 3], &mut rng);
        let a2 = random_tensor(vec![4, 3], &mut rng);
        let b = random_tensor(vec![3, 5], &mut rng);
        let lhs = a.add(&a2).unwrap().matmul(&b).unwrap();
        let rhs = a.matmul(&b).unwrap().add(&a2.matmul(&b).unwrap()).unwrap();
        for (x, y) in lhs.iter_f64().zip(rhs.iter_f64()) {
            let rel = (x - y).abs() / x.abs().max(1e-8);
            assert!(rel <= 1e-10);
        }
    }

    #[test]
    fn softmax_uniform_row() {
        let t = Tensor::<f64>::from_f64_slice(vec![1, 3], &[0.0, 0.0, 0.0]).unwrap();
        let s = t.softmax_rows().unwrap();
        for v in s.iter_f64() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let t = Tensor::<f64>::from_f64_slice(vec![1, 2], &[1000.0, 0.0]).unwrap();
        let s = t.softmax_rows().unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(9);
        let t = random_tensor(vec![5, 7], &mut rng).scale(1000.0).unwrap();
        let s = t.softmax_rows().unwrap();
        for i in 0..5 {
            let sum: f64 = s.data()[i * 7..(i + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn softmax_rows_sum_f32() {
        let mut rng = Rng::new(13);
        let data: Vec<f32> = (0..35).map(|_| (rng.uniform(1000.0)) as f32).collect();
        let t = Tensor::<f32>::new(vec![5, 7], data).unwrap();
        let s = t.softmax_rows().unwrap();
        for i in 0..5 {
            let sum: f64 = s.data()[i * 7..(i + 1) * 7].iter().map(|v| *v as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn relu_basic() {
        let t = Tensor::<f64>::from_f64_slice(vec![3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn broadcast_add_replicates_row() {
        let big = Tensor::<f64>::from_f64_slice(vec![3, 2], &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let row = Tensor::from_f64_slice(vec![1, 2], &[10.0, 20.0]).unwrap();
        let out = big.add(&row).unwrap();
        assert_eq!(out.data(), &[10.0, 20.0, 11.0, 21.0, 12.0, 22.0]);
    }

    #[test]
    fn broadcast_add_zero_is_identity_bit_exact() {
        let mut rng = Rng::new(3);
        let t = random_tensor(vec![4, 3], &mut rng);
        let zero_row = Tensor::<f64>::zeros(vec![1, 3]).unwrap();
        let out = t.add(&zero_row).unwrap();
        assert_eq!(out.data(), t.data());
        let zero_same = Tensor::<f64>::zeros(vec![4, 3]).unwrap();
        assert_eq!(t.add(&zero_same).unwrap().data(), t.data());
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut rng = Rng::new(4);
        let t = random_tensor(vec![2, 5], &mut rng);
        let ones = Tensor::<f64>::full(vec![2, 5], 1.0).unwrap();
        assert_eq!(t.hadamard(&ones).unwrap(), t);
    }

    #[test]
    fn non_broadcastable_shapes_error() {
        let a = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![2, 4]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn flatten_unflatten_round_trip_bit_exact() {
        let mut rng = Rng::new(21);
        let t = random_tensor(vec![2, 3, 4, 5], &mut rng);
        let clip = FeatureClip::new(t.clone()).unwrap();
        let flat = clip.flatten();
        assert_eq!(flat.shape(), &[24, 5]);
        let back = FeatureClip::unflatten(2, 3, 4, flat).unwrap();
        assert_eq!(back.tensor().data(), t.data());
    }

    #[test]
    fn conv1x1_identity_weight() {
        let mut rng = Rng::new(8);
        let clip = FeatureClip::new(random_tensor(vec![2, 2, 2, 3], &mut rng)).unwrap();
        let id = Tensor::<f64>::eye(3).unwrap();
        let out = clip.conv1x1(&id, None).unwrap();
        assert_eq!(out.tensor().data(), clip.tensor().data());
    }

    #[test]
    fn conv1x1_zero_weight_with_bias() {
        let clip = FeatureClip::<f64>::zeros(1, 2, 2, 3).unwrap();
        let w = Tensor::<f64>::zeros(vec![3, 2]).unwrap();
        let b = Tensor::from_f64_slice(vec![2], &[4.0, -1.5]).unwrap();
        let out = clip.conv1x1(&w, Some(&b)).unwrap();
        for pos in 0..4 {
            assert_eq!(out.tensor().data()[pos * 2], 4.0);
            assert_eq!(out.tensor().data()[pos * 2 + 1], -1.5);
        }
    }

    #[test]
    fn conv1x1_matches_flattened_matmul() {
        let mut rng = Rng::new(17);
        let clip = FeatureClip::new(random_tensor(vec![2, 3, 3, 4], &mut rng)).unwrap();
        let w = random_tensor(vec![4, 6], &mut rng);
        let direct = clip.conv1x1(&w, None).unwrap();
        let via_matmul = clip.flatten().matmul(&w).unwrap();
        for (a, b) in direct.flatten().iter_f64().zip(via_matmul.iter_f64()) {
            let rel = (a - b).abs() / a.abs().max(1e-8);
            assert!(rel <= 1e-12);
        }
    }

    #[test]
    fn batch_norm_identity_params() {
        let mut rng = Rng::new(6);
        let clip = FeatureClip::new(random_tensor(vec![1, 2, 2, 3], &mut rng)).unwrap();
        let gamma = Tensor::<f64>::full(vec![3], 1.0).unwrap();
        let beta = Tensor::<f64>::zeros(vec![3]).unwrap();
        let mean = Tensor::<f64>::zeros(vec![3]).unwrap();
        let var = Tensor::<f64>::full(vec![3], 1.0).unwrap();
        let out = clip.batch_norm_inference(&gamma, &beta, &mean, &var, 0.0).unwrap();
        assert_eq!(out.tensor().data(), clip.tensor().data());
    }

    #[test]
    fn batch_norm_zero_gamma_outputs_beta() {
        let mut rng = Rng::new(7);
        let clip = FeatureClip::new(random_tensor(vec![1, 2, 2, 2], &mut rng)).unwrap();
        let gamma = Tensor::<f64>::zeros(vec![2]).unwrap();
        let beta = Tensor::from_f64_slice(vec![2], &[3.0, -2.0]).unwrap();
        let mean = Tensor::<f64>::zeros(vec![2]).unwrap();
        let var = Tensor::<f64>::full(vec![2], 1.0).unwrap();
        let out = clip.batch_norm_inference(&gamma, &beta, &mean, &var, 1e-5).unwrap();
        for pos in 0..4 {
            assert_eq!(out.tensor().data()[pos * 2], 3.0);
            assert_eq!(out.tensor().data()[pos * 2 + 1], -2.0);
        }
    }

    #[test]
    fn batch_norm_matches_scalar_loop() {
        let mut rng = Rng::new(19);
        let clip = FeatureClip::new(random_tensor(vec![2, 2, 2, 3], &mut rng)).unwrap();
        let gamma = random_tensor(vec![3], &mut rng);
        let beta = random_tensor(vec![3], &mut rng);
        let mean = random_tensor(vec![3], &mut rng);
        let var = Tensor::from_f64_slice(vec![3], &[0.5, 1.5, 0.1]).unwrap();
        let eps = 1e-5;
        let out = clip
            .batch_norm_inference(&gamma, &beta, &mean, &var, eps)
            .unwrap();
        let (t, h, w, c) = clip.dims();
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    for ch in 0..c {
                        let x = clip.value(ti, hi, wi, ch);
                        let expect = (x - mean.data()[ch]) / (var.data()[ch] + eps).sqrt()
                            * gamma.data()[ch]
                            + beta.data()[ch];
                        let got = out.value(ti, hi, wi, ch);
                        assert!((got - expect).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_norm_negative_variance_rejected() {
        let clip = FeatureClip::<f64>::zeros(1, 1, 1, 2).unwrap();
        let ones = Tensor::<f64>::full(vec![2], 1.0).unwrap();
        let zeros = Tensor::<f64>::zeros(vec![2]).unwrap();
        let var = Tensor::from_f64_slice(vec![2], &[1.0, -0.5]).unwrap();
        let err = clip
            .batch_norm_inference(&ones, &zeros, &zeros, &var, 1e-5)
            .unwrap_err();
        assert!(err.to_string().starts_with("argument error"));
    }

    #[test]
    fn zero_extent_shapes_rejected() {
        assert!(Tensor::<f64>::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
