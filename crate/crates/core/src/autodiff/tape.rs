use crate::aggregation::{aggregate, AggregationMode, RegionKernel};
use crate::element::Element;
use crate::error::{argument, contract, dimension, Error, Result};
use crate::similarity::{row_normalize, COSINE_NORM_EPS};
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug)]
enum OpKind<E: Element> {
    Leaf {
        differentiable: bool,
    },
    Matmul,
    SoftmaxRows,
    Relu,
    ClampUnit,
    Add,
    Hadamard,
    Scale(f64),
    DivScalar(f64),
    Transpose2d,
    Reshape,
    SumAll,
    MeanRows,
    /// parents: [x, w] or [x, w, bias]
    Conv1x1,
    /// parents: [x, gamma, beta]; the statistics are inference-time
    /// constants, not differentiable.
    BatchNorm {
        mean: Tensor<E>,
        var: Tensor<E>,
        eps: f64,
    },
    /// parents: [x] for pooling, [x, weights] or [x, weights, bias] for conv.
    Aggregate {
        mode: AggregationMode,
        kt: usize,
        kh: usize,
        kw: usize,
    },
    RowNormalize,
    TemporalShift {
        /// channels shifted per direction
        group: usize,
    },
    /// Forward-only embedding of an externally computed value; backward
    /// through it is an unsupported-op error.
    Opaque {
        name: String,
    },
}

struct Node<E: Element> {
    op: OpKind<E>,
    parents: Vec<usize>,
    value: Tensor<E>,
}

/// Gradients keyed by variable, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<E: Element> {
    by_node: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// The accumulated gradient for `var`, if any path reached it.
    pub fn get(&self, var: VarId) -> Option<&Tensor<E>> {
        self.by_node[var.0].as_ref()
    }
}

/// Recording tape. Single-owner while recording and during backward;
/// independent tapes may run on separate threads.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Tape<E> {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, var: VarId) -> &Tensor<E> {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: OpKind<E>, parents: Vec<usize>, value: Tensor<E>) -> VarId {
        self.nodes.push(Node { op, parents, value });
        VarId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<E>) -> VarId {
        self.push(OpKind::Leaf { differentiable: true }, vec![], value)
    }

    /// Non-differentiable input; gradients stop here silently.
    pub fn constant(&mut self, value: Tensor<E>) -> VarId {
        self.push(OpKind::Leaf { differentiable: false }, vec![], value)
    }

    /// Externally computed value with declared dependencies but no backward
    /// rule. Backward reaching it fails with an unsupported-op error.
    pub fn opaque(&mut self, name: &str, value: Tensor<E>, parents: &[VarId]) -> VarId {
        self.push(
            OpKind::Opaque { name: name.to_string() },
            parents.iter().map(|v| v.0).collect(),
            value,
        )
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(OpKind::Matmul, vec![a.0, b.0], value))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).softmax_rows()?;
        Ok(self.push(OpKind::SoftmaxRows, vec![a.0], value))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).relu()?;
        Ok(self.push(OpKind::Relu, vec![a.0], value))
    }

    pub fn clamp_unit(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).clamp_unit()?;
        Ok(self.push(OpKind::ClampUnit, vec![a.0], value))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(OpKind::Add, vec![a.0, b.0], value))
    }

    pub fn hadamard(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(OpKind::Hadamard, vec![a.0, b.0], value))
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> Result<VarId> {
        let value = self.value(a).scale(k)?;
        Ok(self.push(OpKind::Scale(k), vec![a.0], value))
    }

    pub fn div_scalar(&mut self, a: VarId, d: f64) -> Result<VarId> {
        let value = self.value(a).div_scalar(d)?;
        Ok(self.push(OpKind::DivScalar(d), vec![a.0], value))
    }

    pub fn transpose2d(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).transpose2d()?;
        Ok(self.push(OpKind::Transpose2d, vec![a.0], value))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(OpKind::Reshape, vec![a.0], value))
    }

    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).sum_all();
        Ok(self.push(OpKind::SumAll, vec![a.0], value))
    }

    pub fn mean_rows(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).mean_rows()?;
        Ok(self.push(OpKind::MeanRows, vec![a.0], value))
    }

    pub fn conv1x1(&mut self, x: VarId, w: VarId, bias: Option<VarId>) -> Result<VarId> {
        let clip = crate::tensor::FeatureClip::new(self.value(x).clone())?;
        let value = clip
            .conv1x1(self.value(w), bias.map(|b| self.value(b)))?
            .into_tensor();
        let mut parents = vec![x.0, w.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        Ok(self.push(OpKind::Conv1x1, parents, value))
    }

    /// Inference batch norm over the last axis of a rank-2 tensor.
    pub fn batch_norm(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        mean: Tensor<E>,
        var: Tensor<E>,
        eps: f64,
    ) -> Result<VarId> {
        let value = self.value(x).batch_norm_rows(
            self.value(gamma),
            self.value(beta),
            &mean,
            &var,
            eps,
        )?;
        Ok(self.push(
            OpKind::BatchNorm { mean, var, eps },
            vec![x.0, gamma.0, beta.0],
            value,
        ))
    }

    pub fn aggregate(
        &mut self,
        x: VarId,
        mode: AggregationMode,
        (kt, kh, kw): (usize, usize, usize),
        weights: Option<VarId>,
        bias: Option<VarId>,
    ) -> Result<VarId> {
        let clip = crate::tensor::FeatureClip::new(self.value(x).clone())?;
        let kernel = match mode {
            AggregationMode::ChannelWiseConv => {
                let w = weights.ok_or_else(|| argument("conv aggregation needs weights"))?;
                RegionKernel::conv(self.value(w).clone(), bias.map(|b| self.value(b).clone()))?
            }
            _ => {
                if weights.is_some() || bias.is_some() {
                    return Err(argument("pooling aggregation takes no weights"));
                }
                RegionKernel::pooling(mode, kt, kh, kw)?
            }
        };
        if kernel.kt != kt || kernel.kh != kh || kernel.kw != kw {
            return Err(dimension(format!(
                "kernel weights disagree with declared geometry {kt}x{kh}x{kw}"
            )));
        }
        let value = aggregate(&clip, &kernel)?.into_tensor();
        let mut parents = vec![x.0];
        if let Some(w) = weights {
            parents.push(w.0);
        }
        if let Some(b) = bias {
            parents.push(b.0);
        }
        Ok(self.push(OpKind::Aggregate { mode, kt, kh, kw }, parents, value))
    }

    pub fn row_normalize(&mut self, a: VarId) -> Result<VarId> {
        let value = row_normalize(self.value(a))?;
        Ok(self.push(OpKind::RowNormalize, vec![a.0], value))
    }

    /// Shift `group` channels one frame forward and the next `group` one
    /// frame back, zero-filling at clip boundaries.
    pub fn temporal_shift(&mut self, x: VarId, group: usize) -> Result<VarId> {
        let value = apply_temporal_shift(self.value(x), group, false)?;
        Ok(self.push(OpKind::TemporalShift { group }, vec![x.0], value))
    }

    /// Reverse-mode sweep from a scalar-valued root.
    ///
    /// Gradients have the same shape as their variables; fan-out accumulates
    /// by addition in reverse recording order.
    pub fn backward(&self, root: VarId) -> Result<Gradients<E>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(contract(format!(
                "backward root must be scalar-valued, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0)?);

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.backward_step(node, &grad)?;
            for (parent, contribution) in node.parents.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                // Gradients stop at non-differentiable leaves.
                if let OpKind::Leaf { differentiable: false } = self.nodes[*parent].op {
                    continue;
                }
                grads[*parent] = Some(match grads[*parent].take() {
                    Some(existing) => existing.add(&contribution)?,
                    None => contribution,
                });
            }
        }
        Ok(Gradients { by_node: grads })
    }

    /// Per-parent gradient contributions for one node; `None` marks a parent
    /// the rule deliberately does not differentiate.
    fn backward_step(&self, node: &Node<E>, grad: &Tensor<E>) -> Result<Vec<Option<Tensor<E>>>> {
        let parent_value = |i: usize| &self.nodes[node.parents[i]].value;
        match &node.op {
            OpKind::Leaf { .. } => Ok(vec![]),
            OpKind::Opaque { name } => Err(Error::UnsupportedOp(format!(
                "no backward rule registered for '{name}'"
            ))),
            OpKind::Matmul => {
                let a = parent_value(0);
                let b = parent_value(1);
                let da = grad.matmul(&b.transpose2d()?)?;
                let db = a.transpose2d()?.matmul(grad)?;
                Ok(vec![Some(da), Some(db)])
            }
            OpKind::SoftmaxRows => {
                let s = &node.value;
                let (m, n) = (s.shape()[0], s.shape()[1]);
                let mut out = vec![E::ZERO; m * n];
                for i in 0..m {
                    let srow = &s.data()[i * n..(i + 1) * n];
                    let grow = &grad.data()[i * n..(i + 1) * n];
                    let dot: f64 = srow
                        .iter()
                        .zip(grow)
                        .map(|(a, g)| a.to_f64() * g.to_f64())
                        .sum();
                    for j in 0..n {
                        out[i * n + j] =
                            E::from_f64(srow[j].to_f64() * (grow[j].to_f64() - dot));
                    }
                }
                Ok(vec![Some(Tensor::new(vec![m, n], out)?)])
            }
            OpKind::Relu => {
                let x = parent_value(0);
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v.to_f64() > 0.0 { g } else { E::ZERO })
                    .collect();
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            OpKind::ClampUnit => {
                let x = parent_value(0);
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| {
                        let v = v.to_f64();
                        if v > 0.0 && v < 1.0 {
                            g
                        } else {
                            E::ZERO
                        }
                    })
                    .collect();
                Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
            }
            OpKind::Add => {
                let da = reduce_to_shape(grad, parent_value(0).shape())?;
                let db = reduce_to_shape(grad, parent_value(1).shape())?;
                Ok(vec![Some(da), Some(db)])
            }
            OpKind::Hadamard => {
                let a = parent_value(0);
                let b = parent_value(1);
                let da = reduce_to_shape(&grad.hadamard(b)?, a.shape())?;
                let db = reduce_to_shape(&grad.hadamard(a)?, b.shape())?;
                Ok(vec![Some(da), Some(db)])
            }
            OpKind::Scale(k) => Ok(vec![Some(grad.scale(*k)?)]),
            OpKind::DivScalar(d) => Ok(vec![Some(grad.div_scalar(*d)?)]),
            OpKind::Transpose2d => Ok(vec![Some(grad.transpose2d()?)]),
            OpKind::Reshape => {
                Ok(vec![Some(grad.reshaped(parent_value(0).shape().to_vec())?)])
            }
            OpKind::SumAll => {
                let x = parent_value(0);
                let g = grad.data()[0].to_f64();
                Ok(vec![Some(Tensor::full(x.shape().to_vec(), g)?)])
            }
            OpKind::MeanRows => {
                let x = parent_value(0);
                let (m, n) = (x.shape()[0], x.shape()[1]);
                let inv = 1.0 / m as f64;
                let mut out = vec![E::ZERO; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = E::from_f64(grad.data()[j].to_f64() * inv);
                    }
                }
                Ok(vec![Some(Tensor::new(vec![m, n], out)?)])
            }
            OpKind::Conv1x1 => {
                let x = parent_value(0);
                let w = parent_value(1);
                let (cin, cout) = (w.shape()[0], w.shape()[1]);
                let p: usize = x.shape()[..3].iter().product();
                let x_flat = x.reshaped(vec![p, cin])?;
                let g_flat = grad.reshaped(vec![p, cout])?;
                let dx = g_flat.matmul(&w.transpose2d()?)?.reshape(x.shape().to_vec())?;
                let dw = x_flat.transpose2d()?.matmul(&g_flat)?;
                let mut out = vec![Some(dx), Some(dw)];
                if node.parents.len() == 3 {
                    let mut db = vec![0.0f64; cout];
                    for i in 0..p {
                        for j in 0..cout {
                            db[j] += g_flat.data()[i * cout + j].to_f64();
                        }
                    }
                    out.push(Some(Tensor::from_f64_slice(vec![cout], &db)?));
                }
                Ok(out)
            }
            OpKind::BatchNorm { mean, var, eps } => {
                let x = parent_value(0);
                let gamma = parent_value(1);
                let (m, c) = (x.shape()[0], x.shape()[1]);
                let inv_sigma: Vec<f64> =
                    var.iter_f64().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut dx = vec![E::ZERO; m * c];
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for i in 0..m {
                    for j in 0..c {
                        let g = grad.data()[i * c + j].to_f64();
                        let xn =
                            (x.data()[i * c + j].to_f64() - mean.data()[j].to_f64()) * inv_sigma[j];
                        dx[i * c + j] =
                            E::from_f64(g * gamma.data()[j].to_f64() * inv_sigma[j]);
                        dgamma[j] += g * xn;
                        dbeta[j] += g;
                    }
                }
                Ok(vec![
                    Some(Tensor::new(vec![m, c], dx)?),
                    Some(Tensor::from_f64_slice(vec![c], &dgamma)?),
                    Some(Tensor::from_f64_slice(vec![c], &dbeta)?),
                ])
            }
            OpKind::Aggregate { mode, kt, kh, kw } => {
                self.aggregate_backward(node, grad, *mode, (*kt, *kh, *kw), parent_value(0))
            }
            OpKind::RowNormalize => {
                let x = parent_value(0);
                let y = &node.value;
                let (p, c) = (x.shape()[0], x.shape()[1]);
                let mut dx = vec![E::ZERO; p * c];
                for i in 0..p {
                    let xrow = &x.data()[i * c..(i + 1) * c];
                    let norm = xrow
                        .iter()
                        .map(|v| v.to_f64() * v.to_f64())
                        .sum::<f64>()
                        .sqrt();
                    if norm < COSINE_NORM_EPS {
                        continue; // zero-gradient region by definition
                    }
                    let yrow = &y.data()[i * c..(i + 1) * c];
                    let grow = &grad.data()[i * c..(i + 1) * c];
                    let proj: f64 = yrow
                        .iter()
                        .zip(grow)
                        .map(|(a, g)| a.to_f64() * g.to_f64())
                        .sum();
                    for j in 0..c {
                        dx[i * c + j] = E::from_f64(
                            (grow[j].to_f64() - yrow[j].to_f64() * proj) / norm,
                        );
                    }
                }
                Ok(vec![Some(Tensor::new(vec![p, c], dx)?)])
            }
            OpKind::TemporalShift { group } => {
                Ok(vec![Some(apply_temporal_shift(grad, *group, true)?)])
            }
        }
    }

    fn aggregate_backward(
        &self,
        node: &Node<E>,
        grad: &Tensor<E>,
        mode: AggregationMode,
        (kt, kh, kw): (usize, usize, usize),
        x: &Tensor<E>,
    ) -> Result<Vec<Option<Tensor<E>>>> {
        let s = x.shape();
        let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (rt, rh, rw) = (kt / 2, kh / 2, kw / 2);
        let index = |ti: usize, hi: usize, wi: usize, ch: usize| ((ti * h + hi) * w + wi) * c + ch;
        let mut dx = vec![0.0f64; x.len()];
        let weights = if node.parents.len() >= 2 {
            Some(&self.nodes[node.parents[1]].value)
        } else {
            None
        };
        let mut dw = weights.map(|w| vec![0.0f64; w.len()]);
        let has_bias = node.parents.len() == 3;
        let mut db = vec![0.0f64; if has_bias { c } else { 0 }];
        let vol_inv = 1.0 / (kt * kh * kw) as f64;

        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    for ch in 0..c {
                        let g = grad.data()[index(ti, hi, wi, ch)].to_f64();
                        if has_bias {
                            db[ch] += g;
                        }
                        // For max mode, first locate the winning cell in the
                        // same scan order as the forward pass.
                        let mut max_val = f64::NEG_INFINITY;
                        let mut max_src = 0usize;
                        for dt in 0..kt {
                            let st = ti as isize + dt as isize - rt as isize;
                            if st < 0 || st >= t as isize {
                                continue;
                            }
                            for dh in 0..kh {
                                let sh = hi as isize + dh as isize - rh as isize;
                                if sh < 0 || sh >= h as isize {
                                    continue;
                                }
                                for dw_ in 0..kw {
                                    let sw = wi as isize + dw_ as isize - rw as isize;
                                    if sw < 0 || sw >= w as isize {
                                        continue;
                                    }
                                    let src =
                                        index(st as usize, sh as usize, sw as usize, ch);
                                    match mode {
                                        AggregationMode::ChannelWiseConv => {
                                            let off = ((dt * kh + dh) * kw + dw_) * c + ch;
                                            let u = weights.unwrap().data()[off].to_f64();
                                            dx[src] += u * g;
                                            dw.as_mut().unwrap()[off] +=
                                                x.data()[src].to_f64() * g;
                                        }
                                        AggregationMode::AvgPool => {
                                            dx[src] += g * vol_inv;
                                        }
                                        AggregationMode::MaxPool => {
                                            let v = x.data()[src].to_f64();
                                            if v > max_val {
                                                max_val = v;
                                                max_src = src;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        if mode == AggregationMode::MaxPool {
                            dx[max_src] += g;
                        }
                    }
                }
            }
        }

        let mut out = vec![Some(Tensor::from_f64_slice(s.to_vec(), &dx)?)];
        if let (Some(dw), Some(w)) = (dw, weights) {
            out.push(Some(Tensor::from_f64_slice(w.shape().to_vec(), &dw)?));
        }
        if has_bias {
            out.push(Some(Tensor::from_f64_slice(vec![c], &db)?));
        }
        Ok(out)
    }

    /// Activation-pattern fingerprint of the recorded forward pass.
    ///
    /// Two evaluations whose fingerprints differ straddle a kink (ReLU sign
    /// change, max-pool winner change, clamp boundary, zero-norm row), so a
    /// central difference across them is not meaningful.
    pub fn kink_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                OpKind::Relu => {
                    let x = &self.nodes[node.parents[0]].value;
                    sig.extend(x.data().iter().map(|v| u32::from(v.to_f64() > 0.0)));
                }
                OpKind::ClampUnit => {
                    // Values within a rounding band of the boundaries share a
                    // class: a normalized self-similarity computes to 1 +/- a
                    // few ulp, and that dust must not read as a kink crossing.
                    const BAND: f64 = 1e-9;
                    let x = &self.nodes[node.parents[0]].value;
                    sig.extend(x.data().iter().map(|v| {
                        let v = v.to_f64();
                        if v < -BAND {
                            0u32
                        } else if v <= BAND {
                            1
                        } else if v < 1.0 - BAND {
                            2
                        } else if v <= 1.0 + BAND {
                            3
                        } else {
                            4
                        }
                    }));
                }
                OpKind::RowNormalize => {
                    // Near the zero-norm singularity the normalized direction
                    // flips with the perturbation sign, so for small rows the
                    // element signs join the signature.
                    const ROW_NORM_GUARD: f64 = 1e-3;
                    let x = &self.nodes[node.parents[0]].value;
                    let (p, c) = (x.shape()[0], x.shape()[1]);
                    for i in 0..p {
                        let row = &x.data()[i * c..(i + 1) * c];
                        let norm = row
                            .iter()
                            .map(|v| v.to_f64() * v.to_f64())
                            .sum::<f64>()
                            .sqrt();
                        sig.push(u32::from(norm < COSINE_NORM_EPS));
                        if norm < ROW_NORM_GUARD {
                            sig.extend(row.iter().map(|v| {
                                let v = v.to_f64();
                                if v < 0.0 {
                                    0u32
                                } else if v == 0.0 {
                                    1
                                } else {
                                    2
                                }
                            }));
                        }
                    }
                }
                OpKind::Aggregate {
                    mode: AggregationMode::MaxPool,
                    kt,
                    kh,
                    kw,
                } => {
                    let x = &self.nodes[node.parents[0]].value;
                    append_max_winners(x, (*kt, *kh, *kw), &mut sig);
                }
                _ => {}
            }
        }
        sig
    }
}

fn append_max_winners<E: Element>(
    x: &Tensor<E>,
    (kt, kh, kw): (usize, usize, usize),
    sig: &mut Vec<u32>,
) {
    let s = x.shape();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (rt, rh, rw) = (kt / 2, kh / 2, kw / 2);
    let index = |ti: usize, hi: usize, wi: usize, ch: usize| ((ti * h + hi) * w + wi) * c + ch;
    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                for ch in 0..c {
                    let mut max_val = f64::NEG_INFINITY;
                    let mut max_src = 0usize;
                    for dt in 0..kt {
                        let st = ti as isize + dt as isize - rt as isize;
                        if st < 0 || st >= t as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let sh = hi as isize + dh as isize - rh as isize;
                            if sh < 0 || sh >= h as isize {
                                continue;
                            }
                            for dw_ in 0..kw {
                                let sw = wi as isize + dw_ as isize - rw as isize;
                                if sw < 0 || sw >= w as isize {
                                    continue;
                                }
                                let src = index(st as usize, sh as usize, sw as usize, ch);
                                let v = x.data()[src].to_f64();
                                if v > max_val {
                                    max_val = v;
                                    max_src = src;
                                }
                            }
                        }
                    }
                    sig.push(max_src as u32);
                }
            }
        }
    }
}

/// Sum `g` down to `target` shape along the axes where `target` has extent 1
/// (inverse of the size-1 broadcast). Shapes must otherwise agree.
fn reduce_to_shape<E: Element>(g: &Tensor<E>, target: &[usize]) -> Result<Tensor<E>> {
    if g.shape() == target {
        return Ok(g.clone());
    }
    if g.rank() != target.len() {
        return Err(dimension(format!(
            "cannot reduce {:?} to {:?}",
            g.shape(),
            target
        )));
    }
    let count: usize = target.iter().product();
    let mut acc = vec![0.0f64; count];
    let strides = {
        let mut s = vec![0usize; target.len()];
        let mut stride = 1;
        for axis in (0..target.len()).rev() {
            s[axis] = if target[axis] == 1 { 0 } else { stride };
            stride *= target[axis];
        }
        s
    };
    let g_shape = g.shape();
    let mut coords = vec![0usize; g_shape.len()];
    for &v in g.data() {
        let idx: usize = coords.iter().zip(&strides).map(|(&c, &s)| c * s).sum();
        acc[idx] += v.to_f64();
        for axis in (0..coords.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < g_shape[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
    Tensor::from_f64_slice(target.to_vec(), &acc)
}

/// Displace the first `group` channels one frame forward and the next
/// `group` one back (or the inverse when `invert` is set), zero-filling at
/// the boundaries. Remaining channels pass through unchanged.
pub(crate) fn apply_temporal_shift<E: Element>(
    x: &Tensor<E>,
    group: usize,
    invert: bool,
) -> Result<Tensor<E>> {
    if x.rank() != 4 {
        return Err(dimension(format!(
            "temporal shift expects a (T,H,W,C) tensor, got {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    if 2 * group > c {
        return Err(argument(format!(
            "shift groups of {group} channels each do not fit in {c} channels"
        )));
    }
    let spatial = h * w;
    let mut out = vec![E::ZERO; x.len()];
    for ti in 0..t {
        for p in 0..spatial {
            for ch in 0..c {
                // +1 frame for the first group, -1 for the second.
                let delta: isize = if ch < group {
                    1
                } else if ch < 2 * group {
                    -1
                } else {
                    0
                };
                let delta = if invert { -delta } else { delta };
                let src_t = ti as isize - delta;
                if src_t < 0 || src_t >= t as isize {
                    continue;
                }
                out[(ti * spatial + p) * c + ch] =
                    x.data()[(src_t as usize * spatial + p) * c + ch];
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let count: usize = shape.iter().product();
        Tensor::new(shape, (0..count).map(|_| rng.uniform(1.0)).collect()).unwrap()
    }

    #[test]
    fn relu_grad_basic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_f64_slice(vec![2], &[-1.0, 2.0]).unwrap());
        let r = tape.relu(x).unwrap();
        let s = tape.sum_all(r).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        // Rows of a softmax always sum to 1, so d(sum)/dx vanishes.
        let mut tape = Tape::new();
        let x = tape.leaf(random(vec![3, 4], 61));
        let s = tape.softmax_rows(x).unwrap();
        let total = tape.sum_all(s).unwrap();
        let grads = tape.backward(total).unwrap();
        for v in grads.get(x).unwrap().iter_f64() {
            assert!(v.abs() < 1e-12, "conserved quantity leaked gradient {v}");
        }
    }

    #[test]
    fn matmul_grad_shapes_match_leaves() {
        let mut tape = Tape::new();
        let a = tape.leaf(random(vec![3, 4], 62));
        let b = tape.leaf(random(vec![4, 2], 63));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(c).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().shape(), &[3, 4]);
        assert_eq!(grads.get(b).unwrap().shape(), &[4, 2]);
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(random(vec![2, 2], 64));
        let err = tape.backward(x).unwrap_err();
        assert!(err.to_string().starts_with("contract error"));
    }

    #[test]
    fn opaque_node_has_no_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(random(vec![2], 65));
        let v = tape.value(x).clone();
        let o = tape.opaque("external", v, &[x]);
        let s = tape.sum_all(o).unwrap();
        let err = tape.backward(s).unwrap_err();
        assert!(matches!(err, Error::UnsupportedOp(_)));
    }

    #[test]
    fn fan_out_accumulation_is_order_independent() {
        let x0 = random(vec![2, 3], 66);
        let c1 = random(vec![2, 3], 67);
        let c2 = random(vec![2, 3], 68);

        let run = |swap: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let k1 = tape.constant(c1.clone());
            let k2 = tape.constant(c2.clone());
            let (first, second) = if swap { (k2, k1) } else { (k1, k2) };
            let a = tape.hadamard(x, first).unwrap();
            let b = tape.hadamard(x, second).unwrap();
            let sum = tape.add(a, b).unwrap();
            let s = tape.sum_all(sum).unwrap();
            let grads = tape.backward(s).unwrap();
            grads.get(x).unwrap().clone()
        };
        let g1 = run(false);
        let g2 = run(true);
        for (a, b) in g1.iter_f64().zip(g2.iter_f64()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn broadcast_add_grad_sums_over_replicated_rows() {
        let mut tape = Tape::new();
        let big = tape.leaf(random(vec![4, 3], 69));
        let row = tape.leaf(random(vec![1, 3], 70));
        let out = tape.add(big, row).unwrap();
        let s = tape.sum_all(out).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(row).unwrap().shape(), &[1, 3]);
        for v in grads.get(row).unwrap().iter_f64() {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_shift_matches_index_remap_oracle() {
        let x = random(vec![3, 2, 2, 8], 71);
        let shifted = apply_temporal_shift(&x, 2, false).unwrap();
        let s = x.shape();
        let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    for ch in 0..c {
                        let idx = ((ti * h + hi) * w + wi) * c + ch;
                        let expect = if ch < 2 {
                            if ti == 0 {
                                0.0
                            } else {
                                x.data()[(((ti - 1) * h + hi) * w + wi) * c + ch]
                            }
                        } else if ch < 4 {
                            if ti + 1 == t {
                                0.0
                            } else {
                                x.data()[(((ti + 1) * h + hi) * w + wi) * c + ch]
                            }
                        } else {
                            x.data()[idx]
                        };
                        assert_eq!(shifted.data()[idx], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn temporal_shift_single_frame_zeroes_shifted_channels() {
        let x = random(vec![1, 2, 2, 4], 72);
        let shifted = apply_temporal_shift(&x, 1, false).unwrap();
        for p in 0..4 {
            assert_eq!(shifted.data()[p * 4], 0.0);
            assert_eq!(shifted.data()[p * 4 + 1], 0.0);
            assert_eq!(shifted.data()[p * 4 + 2], x.data()[p * 4 + 2]);
            assert_eq!(shifted.data()[p * 4 + 3], x.data()[p * 4 + 3]);
        }
    }
}
