//! Full attention blocks: the region-based non-local block, the original
//! non-local baseline, the additive squeeze-excitation block, and the
//! SE-then-RNL attention chain, plus the temporal channel shift.
//!
//! Every block is a shape-preserving residual recalibration, built once as a
//! tape program so the executed forward pass and the differentiated one are
//! the same code. Plain `*_forward` wrappers record on a throwaway tape.

use crate::aggregation::AggregationMode;
use crate::autodiff::tape::apply_temporal_shift;
use crate::autodiff::{Tape, VarId};
use crate::element::Element;
use crate::error::{argument, Result};
use crate::rng::Rng;
use crate::similarity::{AffinityMatrix, SimilarityForm};
use crate::tensor::{FeatureClip, Tensor};

/// Batch-norm epsilon used by every block.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Nl,
    Rnl,
    Se,
    Chain,
}

impl BlockKind {
    pub fn token(self) -> &'static str {
        match self {
            BlockKind::Nl => "nl",
            BlockKind::Rnl => "rnl",
            BlockKind::Se => "se",
            BlockKind::Chain => "chain",
        }
    }

    pub fn parse(token: &str) -> Result<BlockKind> {
        match token {
            "nl" => Ok(BlockKind::Nl),
            "rnl" => Ok(BlockKind::Rnl),
            "se" => Ok(BlockKind::Se),
            "chain" => Ok(BlockKind::Chain),
            other => Err(argument(format!(
                "unknown block kind '{other}' (expected nl, rnl, se or chain)"
            ))),
        }
    }
}

/// Inference batch-norm parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

impl<E: Element> BnParams<E> {
    /// Zero-gamma initialization: the normalized branch contributes nothing,
    /// so a freshly inserted block is the identity.
    fn zero_gamma(c: usize) -> Result<BnParams<E>> {
        Ok(BnParams {
            gamma: Tensor::zeros(vec![c])?,
            beta: Tensor::zeros(vec![c])?,
            mean: Tensor::zeros(vec![c])?,
            var: Tensor::full(vec![c], 1.0)?,
        })
    }

    fn unit_gamma(c: usize) -> Result<BnParams<E>> {
        Ok(BnParams {
            gamma: Tensor::full(vec![c], 1.0)?,
            beta: Tensor::zeros(vec![c])?,
            mean: Tensor::zeros(vec![c])?,
            var: Tensor::full(vec![c], 1.0)?,
        })
    }

    fn randomized(c: usize, rng: &mut Rng) -> Result<BnParams<E>> {
        let gamma: Vec<f64> = (0..c).map(|_| rng.uniform(1.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.uniform(0.5)).collect();
        let mean: Vec<f64> = (0..c).map(|_| rng.uniform(0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| 0.5 + rng.next_f64()).collect();
        Ok(BnParams {
            gamma: Tensor::from_f64_slice(vec![c], &gamma)?,
            beta: Tensor::from_f64_slice(vec![c], &beta)?,
            mean: Tensor::from_f64_slice(vec![c], &mean)?,
            var: Tensor::from_f64_slice(vec![c], &var)?,
        })
    }
}

/// Geometry and mode of the aggregation stage of an RNL block; the actual
/// kernel weights live in [`RnlBlock::kernel_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FthetaSpec {
    pub mode: AggregationMode,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub bias: bool,
}

impl FthetaSpec {
    pub fn conv(kt: usize, kh: usize, kw: usize) -> FthetaSpec {
        FthetaSpec {
            mode: AggregationMode::ChannelWiseConv,
            kt,
            kh,
            kw,
            bias: false,
        }
    }

    pub fn pooling(mode: AggregationMode, kt: usize, kh: usize, kw: usize) -> FthetaSpec {
        FthetaSpec {
            mode,
            kt,
            kh,
            kw,
            bias: false,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, k) in [("kt", self.kt), ("kh", self.kh), ("kw", self.kw)] {
            if k == 0 || k % 2 == 0 {
                return Err(argument(format!(
                    "aggregation kernel extent {name}={k} must be odd and positive"
                )));
            }
        }
        if self.bias && self.mode != AggregationMode::ChannelWiseConv {
            return Err(argument("only the conv aggregation mode carries a bias"));
        }
        Ok(())
    }
}

/// Wired block on a tape: output variable plus the retained intermediates.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub z: VarId,
    pub affinity: Option<VarId>,
    pub se_vector: Option<VarId>,
}

/// Result of running a block: the recalibrated clip, the normalized affinity
/// (for attention-map extraction), and the SE excitation vector when present.
#[derive(Debug, Clone)]
pub struct BlockOutput<E: Element> {
    pub z: FeatureClip<E>,
    pub affinity: Option<AffinityMatrix<E>>,
    pub se_vector: Option<Tensor<E>>,
}

fn init_uniform<E: Element>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Result<Tensor<E>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let count: usize = shape.iter().product();
    let data: Vec<f64> = (0..count).map(|_| rng.uniform(bound)).collect();
    Tensor::from_f64_slice(shape, &data)
}

fn check_bottleneck(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels == 0 || !channels.is_multiple_of(reduction) {
        return Err(argument(format!(
            "channels {channels} must be a positive multiple of the reduction ratio {reduction}"
        )));
    }
    Ok(channels / reduction)
}

/// Cursor over the leaf variables handed to a block builder; the order must
/// match `leaf_tensors`.
struct LeafCursor<'a> {
    leaves: &'a [VarId],
    next: usize,
}

impl<'a> LeafCursor<'a> {
    fn new(leaves: &'a [VarId]) -> LeafCursor<'a> {
        LeafCursor { leaves, next: 0 }
    }

    fn take(&mut self) -> Result<VarId> {
        let var = self
            .leaves
            .get(self.next)
            .copied()
            .ok_or_else(|| argument("block builder received too few parameter leaves"))?;
        self.next += 1;
        Ok(var)
    }

    fn finish(self) -> Result<()> {
        if self.next != self.leaves.len() {
            return Err(argument("block builder received too many parameter leaves"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// RNL block
// ---------------------------------------------------------------------------

/// Region-based non-local block: embed with W_g, aggregate each position's
/// region, take pairwise similarities of the aggregated embeddings, and
/// recalibrate with the normalized weights before the W_z projection and the
/// residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct RnlBlock<E: Element> {
    pub channels: usize,
    pub reduction: usize,
    pub form: SimilarityForm,
    pub ftheta: FthetaSpec,
    pub wg: Tensor<E>,
    pub wz: Tensor<E>,
    /// (kt, kh, kw, channels/reduction), conv mode only.
    pub kernel_weights: Option<Tensor<E>>,
    pub kernel_bias: Option<Tensor<E>>,
    pub residual_bn: Option<BnParams<E>>,
}

impl<E: Element> RnlBlock<E> {
    /// Deterministic seeded initialization; `residual_bn` selects the
    /// zero-gamma normalized residual branch (identity at insertion).
    pub fn seeded(
        channels: usize,
        reduction: usize,
        form: SimilarityForm,
        ftheta: FthetaSpec,
        residual_bn: bool,
        seed: u64,
    ) -> Result<RnlBlock<E>> {
        ftheta.validate()?;
        let m = check_bottleneck(channels, reduction)?;
        let mut rng = Rng::new(seed).fork(0x524e4c);
        let wg = init_uniform(vec![channels, m], channels, &mut rng)?;
        let wz = init_uniform(vec![m, channels], m, &mut rng)?;
        let volume = ftheta.kt * ftheta.kh * ftheta.kw;
        let kernel_weights = match ftheta.mode {
            AggregationMode::ChannelWiseConv => Some(init_uniform(
                vec![ftheta.kt, ftheta.kh, ftheta.kw, m],
                volume,
                &mut rng,
            )?),
            _ => None,
        };
        let kernel_bias = if ftheta.bias {
            Some(init_uniform(vec![m], volume, &mut rng)?)
        } else {
            None
        };
        Ok(RnlBlock {
            channels,
            reduction,
            form,
            ftheta,
            wg,
            wz,
            kernel_weights,
            kernel_bias,
            residual_bn: if residual_bn {
                Some(BnParams::zero_gamma(channels)?)
            } else {
                None
            },
        })
    }

    /// Seeded block with every parameter (including the BN set) nontrivial,
    /// for gradient checking.
    pub fn randomized(
        channels: usize,
        reduction: usize,
        form: SimilarityForm,
        ftheta: FthetaSpec,
        residual_bn: bool,
        seed: u64,
    ) -> Result<RnlBlock<E>> {
        let mut block = RnlBlock::seeded(channels, reduction, form, ftheta, residual_bn, seed)?;
        if residual_bn {
            let mut rng = Rng::new(seed).fork(0xb4);
            block.residual_bn = Some(BnParams::randomized(channels, &mut rng)?);
        }
        Ok(block)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels / self.reduction
    }

    /// Parameter tensors in builder order.
    pub fn leaf_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = vec![
            ("wg".to_string(), self.wg.clone()),
            ("wz".to_string(), self.wz.clone()),
        ];
        if let Some(u) = &self.kernel_weights {
            out.push(("kernel_weights".to_string(), u.clone()));
        }
        if let Some(b) = &self.kernel_bias {
            out.push(("kernel_bias".to_string(), b.clone()));
        }
        if let Some(bn) = &self.residual_bn {
            out.push(("bn_gamma".to_string(), bn.gamma.clone()));
            out.push(("bn_beta".to_string(), bn.beta.clone()));
        }
        out
    }

    /// Record the block on `tape` from input `x` (rank-4 leaf) and parameter
    /// leaves in `leaf_tensors` order.
    pub fn build(&self, tape: &mut Tape<E>, x: VarId, leaves: &[VarId]) -> Result<BlockVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(argument(format!(
                "rnl block expects a (T,H,W,{}) input, got {:?}",
                self.channels, shape
            )));
        }
        let (t, h, w) = (shape[0], shape[1], shape[2]);
        let p = t * h * w;
        let m = self.bottleneck_channels();

        let mut cursor = LeafCursor::new(leaves);
        let wg = cursor.take()?;
        let wz = cursor.take()?;
        let u = if self.kernel_weights.is_some() {
            Some(cursor.take()?)
        } else {
            None
        };
        let u_bias = if self.kernel_bias.is_some() {
            Some(cursor.take()?)
        } else {
            None
        };
        let bn = if let Some(params) = &self.residual_bn {
            let gamma = cursor.take()?;
            let beta = cursor.take()?;
            Some((gamma, beta, params.mean.clone(), params.var.clone()))
        } else {
            None
        };
        cursor.finish()?;

        let g = tape.conv1x1(x, wg, None)?;
        let e_clip = tape.aggregate(
            g,
            self.ftheta.mode,
            (self.ftheta.kt, self.ftheta.kh, self.ftheta.kw),
            u,
            u_bias,
        )?;
        let e = tape.reshape(e_clip, vec![p, m])?;
        let attention = build_affinity(tape, e, self.form, p)?;
        let g_flat = tape.reshape(g, vec![p, m])?;
        let y = tape.matmul(attention, g_flat)?;
        let y_clip = tape.reshape(y, vec![t, h, w, m])?;
        let z0 = tape.conv1x1(y_clip, wz, None)?;
        let z0_flat = tape.reshape(z0, vec![p, self.channels])?;
        let branch = match bn {
            Some((gamma, beta, mean, var)) => {
                tape.batch_norm(z0_flat, gamma, beta, mean, var, BN_EPS)?
            }
            None => z0_flat,
        };
        let x_flat = tape.reshape(x, vec![p, self.channels])?;
        let z_flat = tape.add(branch, x_flat)?;
        let z = tape.reshape(z_flat, vec![t, h, w, self.channels])?;
        Ok(BlockVars {
            z,
            affinity: Some(attention),
            se_vector: None,
        })
    }
}

/// Normalized attention weights from the flattened embeddings: gaussian uses
/// a row softmax of the inner-product logits, dot and cosine divide by P.
fn build_affinity<E: Element>(
    tape: &mut Tape<E>,
    e: VarId,
    form: SimilarityForm,
    p: usize,
) -> Result<VarId> {
    match form {
        SimilarityForm::Gaussian => {
            let et = tape.transpose2d(e)?;
            let logits = tape.matmul(e, et)?;
            tape.softmax_rows(logits)
        }
        SimilarityForm::Dot => {
            let et = tape.transpose2d(e)?;
            let raw = tape.matmul(e, et)?;
            tape.div_scalar(raw, p as f64)
        }
        SimilarityForm::Cosine => {
            let unit = tape.row_normalize(e)?;
            let unit_t = tape.transpose2d(unit)?;
            let raw = tape.matmul(unit, unit_t)?;
            let clipped = tape.clamp_unit(raw)?;
            tape.div_scalar(clipped, p as f64)
        }
    }
}

// ---------------------------------------------------------------------------
// NL block
// ---------------------------------------------------------------------------

/// Original non-local block, embedded-gaussian instantiation: pairwise
/// similarities of per-position embeddings (no region aggregation), four
/// pointwise convolutions in total.
#[derive(Debug, Clone, PartialEq)]
pub struct NlBlock<E: Element> {
    pub channels: usize,
    pub reduction: usize,
    pub wtheta: Tensor<E>,
    pub wphi: Tensor<E>,
    pub wg: Tensor<E>,
    pub wz: Tensor<E>,
    pub residual_bn: Option<BnParams<E>>,
}

impl<E: Element> NlBlock<E> {
    pub fn seeded(
        channels: usize,
        reduction: usize,
        residual_bn: bool,
        seed: u64,
    ) -> Result<NlBlock<E>> {
        let m = check_bottleneck(channels, reduction)?;
        let mut rng = Rng::new(seed).fork(0x4e4c);
        Ok(NlBlock {
            channels,
            reduction,
            wtheta: init_uniform(vec![channels, m], channels, &mut rng)?,
            wphi: init_uniform(vec![channels, m], channels, &mut rng)?,
            wg: init_uniform(vec![channels, m], channels, &mut rng)?,
            wz: init_uniform(vec![m, channels], m, &mut rng)?,
            residual_bn: if residual_bn {
                Some(BnParams::zero_gamma(channels)?)
            } else {
                None
            },
        })
    }

    pub fn randomized(
        channels: usize,
        reduction: usize,
        residual_bn: bool,
        seed: u64,
    ) -> Result<NlBlock<E>> {
        let mut block = NlBlock::seeded(channels, reduction, residual_bn, seed)?;
        if residual_bn {
            let mut rng = Rng::new(seed).fork(0xb5);
            block.residual_bn = Some(BnParams::randomized(channels, &mut rng)?);
        }
        Ok(block)
    }

    /// Shared-embedding variant matching an RNL block with the identity
    /// aggregation: theta, phi and g all reuse the RNL W_g.
    pub fn shared_embedding(rnl: &RnlBlock<E>) -> NlBlock<E> {
        NlBlock {
            channels: rnl.channels,
            reduction: rnl.reduction,
            wtheta: rnl.wg.clone(),
            wphi: rnl.wg.clone(),
            wg: rnl.wg.clone(),
            wz: rnl.wz.clone(),
            residual_bn: rnl.residual_bn.clone(),
        }
    }

    pub fn leaf_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = vec![
            ("wtheta".to_string(), self.wtheta.clone()),
            ("wphi".to_string(), self.wphi.clone()),
            ("wg".to_string(), self.wg.clone()),
            ("wz".to_string(), self.wz.clone()),
        ];
        if let Some(bn) = &self.residual_bn {
            out.push(("bn_gamma".to_string(), bn.gamma.clone()));
            out.push(("bn_beta".to_string(), bn.beta.clone()));
        }
        out
    }

    pub fn build(&self, tape: &mut Tape<E>, x: VarId, leaves: &[VarId]) -> Result<BlockVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(argument(format!(
                "nl block expects a (T,H,W,{}) input, got {:?}",
                self.channels, shape
            )));
        }
        let (t, h, w) = (shape[0], shape[1], shape[2]);
        let p = t * h * w;
        let m = self.channels / self.reduction;

        let mut cursor = LeafCursor::new(leaves);
        let wtheta = cursor.take()?;
        let wphi = cursor.take()?;
        let wg = cursor.take()?;
        let wz = cursor.take()?;
        let bn = if let Some(params) = &self.residual_bn {
            let gamma = cursor.take()?;
            let beta = cursor.take()?;
            Some((gamma, beta, params.mean.clone(), params.var.clone()))
        } else {
            None
        };
        cursor.finish()?;

        let theta = tape.conv1x1(x, wtheta, None)?;
        let phi = tape.conv1x1(x, wphi, None)?;
        let g = tape.conv1x1(x, wg, None)?;
        let theta_flat = tape.reshape(theta, vec![p, m])?;
        let phi_flat = tape.reshape(phi, vec![p, m])?;
        let g_flat = tape.reshape(g, vec![p, m])?;
        let phi_t = tape.transpose2d(phi_flat)?;
        let logits = tape.matmul(theta_flat, phi_t)?;
        let attention = tape.softmax_rows(logits)?;
        let y = tape.matmul(attention, g_flat)?;
        let y_clip = tape.reshape(y, vec![t, h, w, m])?;
        let z0 = tape.conv1x1(y_clip, wz, None)?;
        let z0_flat = tape.reshape(z0, vec![p, self.channels])?;
        let branch = match bn {
            Some((gamma, beta, mean, var)) => {
                tape.batch_norm(z0_flat, gamma, beta, mean, var, BN_EPS)?
            }
            None => z0_flat,
        };
        let x_flat = tape.reshape(x, vec![p, self.channels])?;
        let z_flat = tape.add(branch, x_flat)?;
        let z = tape.reshape(z_flat, vec![t, h, w, self.channels])?;
        Ok(BlockVars {
            z,
            affinity: Some(attention),
            se_vector: None,
        })
    }
}

// ---------------------------------------------------------------------------
// SE block
// ---------------------------------------------------------------------------

/// Channel-attention block: global average squeeze, bottleneck excitation
/// with a BN between the two linear maps, and additive broadcast
/// recalibration.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock<E: Element> {
    pub channels: usize,
    pub reduction: usize,
    /// (channels/reduction, channels)
    pub w1: Tensor<E>,
    /// (channels, channels/reduction)
    pub w2: Tensor<E>,
    pub bn: BnParams<E>,
}

impl<E: Element> SeBlock<E> {
    pub fn seeded(channels: usize, reduction: usize, seed: u64) -> Result<SeBlock<E>> {
        let m = check_bottleneck(channels, reduction)?;
        let mut rng = Rng::new(seed).fork(0x5345);
        Ok(SeBlock {
            channels,
            reduction,
            w1: init_uniform(vec![m, channels], channels, &mut rng)?,
            w2: init_uniform(vec![channels, m], m, &mut rng)?,
            bn: BnParams::unit_gamma(m)?,
        })
    }

    pub fn randomized(channels: usize, reduction: usize, seed: u64) -> Result<SeBlock<E>> {
        let mut block = SeBlock::seeded(channels, reduction, seed)?;
        let mut rng = Rng::new(seed).fork(0xb6);
        block.bn = BnParams::randomized(channels / reduction, &mut rng)?;
        Ok(block)
    }

    pub fn leaf_tensors(&self) -> Vec<(String, Tensor<E>)> {
        vec![
            ("w1".to_string(), self.w1.clone()),
            ("w2".to_string(), self.w2.clone()),
            ("se_bn_gamma".to_string(), self.bn.gamma.clone()),
            ("se_bn_beta".to_string(), self.bn.beta.clone()),
        ]
    }

    pub fn build(&self, tape: &mut Tape<E>, x: VarId, leaves: &[VarId]) -> Result<BlockVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(argument(format!(
                "se block expects a (T,H,W,{}) input, got {:?}",
                self.channels, shape
            )));
        }
        let (t, h, w) = (shape[0], shape[1], shape[2]);
        let p = t * h * w;

        let mut cursor = LeafCursor::new(leaves);
        let w1 = cursor.take()?;
        let w2 = cursor.take()?;
        let gamma = cursor.take()?;
        let beta = cursor.take()?;
        cursor.finish()?;

        let x_flat = tape.reshape(x, vec![p, self.channels])?;
        let squeezed = tape.mean_rows(x_flat)?;
        let w1_t = tape.transpose2d(w1)?;
        let excited = tape.matmul(squeezed, w1_t)?;
        let normed = tape.batch_norm(
            excited,
            gamma,
            beta,
            self.bn.mean.clone(),
            self.bn.var.clone(),
            BN_EPS,
        )?;
        let rectified = tape.relu(normed)?;
        let w2_t = tape.transpose2d(w2)?;
        let s = tape.matmul(rectified, w2_t)?;
        let v_flat = tape.add(x_flat, s)?;
        let z = tape.reshape(v_flat, vec![t, h, w, self.channels])?;
        Ok(BlockVars {
            z,
            affinity: None,
            se_vector: Some(s),
        })
    }
}

// ---------------------------------------------------------------------------
// Attention chain
// ---------------------------------------------------------------------------

/// SE block followed by an RNL block, composing channel attention with
/// space-time attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBlock<E: Element> {
    pub se: SeBlock<E>,
    pub rnl: RnlBlock<E>,
}

impl<E: Element> ChainBlock<E> {
    pub fn seeded(
        channels: usize,
        reduction: usize,
        form: SimilarityForm,
        ftheta: FthetaSpec,
        residual_bn: bool,
        seed: u64,
    ) -> Result<ChainBlock<E>> {
        Ok(ChainBlock {
            se: SeBlock::seeded(channels, reduction, seed ^ 0x5345_0001)?,
            rnl: RnlBlock::seeded(channels, reduction, form, ftheta, residual_bn, seed)?,
        })
    }

    pub fn randomized(
        channels: usize,
        reduction: usize,
        form: SimilarityForm,
        ftheta: FthetaSpec,
        residual_bn: bool,
        seed: u64,
    ) -> Result<ChainBlock<E>> {
        Ok(ChainBlock {
            se: SeBlock::randomized(channels, reduction, seed ^ 0x5345_0001)?,
            rnl: RnlBlock::randomized(channels, reduction, form, ftheta, residual_bn, seed)?,
        })
    }

    pub fn leaf_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out: Vec<(String, Tensor<E>)> = self
            .se
            .leaf_tensors()
            .into_iter()
            .map(|(n, t)| (format!("se.{n}"), t))
            .collect();
        out.extend(
            self.rnl
                .leaf_tensors()
                .into_iter()
                .map(|(n, t)| (format!("rnl.{n}"), t)),
        );
        out
    }

    pub fn build(&self, tape: &mut Tape<E>, x: VarId, leaves: &[VarId]) -> Result<BlockVars> {
        let se_leaves = self.se.leaf_tensors().len();
        let se_vars = self.se.build(tape, x, &leaves[..se_leaves.min(leaves.len())])?;
        let rnl_vars = self.rnl.build(tape, se_vars.z, &leaves[se_leaves.min(leaves.len())..])?;
        Ok(BlockVars {
            z: rnl_vars.z,
            affinity: rnl_vars.affinity,
            se_vector: se_vars.se_vector,
        })
    }
}

// ---------------------------------------------------------------------------
// Forward wrappers
// ---------------------------------------------------------------------------

fn run_block<E: Element>(
    x: &FeatureClip<E>,
    leaf_tensors: Vec<(String, Tensor<E>)>,
    build: impl FnOnce(&mut Tape<E>, VarId, &[VarId]) -> Result<BlockVars>,
    form: Option<SimilarityForm>,
) -> Result<BlockOutput<E>> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.tensor().clone());
    let leaves: Vec<VarId> = leaf_tensors.into_iter().map(|(_, t)| tape.leaf(t)).collect();
    let vars = build(&mut tape, xv, &leaves)?;
    let z = FeatureClip::new(tape.value(vars.z).clone())?;
    let affinity = match (vars.affinity, form) {
        (Some(a), Some(form)) => Some(AffinityMatrix::from_normalized(
            tape.value(a).clone(),
            form,
        )?),
        _ => None,
    };
    let se_vector = vars.se_vector.map(|s| tape.value(s).clone());
    Ok(BlockOutput { z, affinity, se_vector })
}

pub fn rnl_forward<E: Element>(x: &FeatureClip<E>, block: &RnlBlock<E>) -> Result<BlockOutput<E>> {
    run_block(
        x,
        block.leaf_tensors(),
        |tape, xv, leaves| block.build(tape, xv, leaves),
        Some(block.form),
    )
}

pub fn nl_forward<E: Element>(x: &FeatureClip<E>, block: &NlBlock<E>) -> Result<BlockOutput<E>> {
    run_block(
        x,
        block.leaf_tensors(),
        |tape, xv, leaves| block.build(tape, xv, leaves),
        Some(SimilarityForm::Gaussian),
    )
}

pub fn se_forward<E: Element>(x: &FeatureClip<E>, block: &SeBlock<E>) -> Result<BlockOutput<E>> {
    run_block(
        x,
        block.leaf_tensors(),
        |tape, xv, leaves| block.build(tape, xv, leaves),
        None,
    )
}

/// SE block then RNL block, in that order.
pub fn chain_forward<E: Element>(
    x: &FeatureClip<E>,
    block: &ChainBlock<E>,
) -> Result<BlockOutput<E>> {
    run_block(
        x,
        block.leaf_tensors(),
        |tape, xv, leaves| block.build(tape, xv, leaves),
        Some(block.rnl.form),
    )
}

// ---------------------------------------------------------------------------
// Temporal shift
// ---------------------------------------------------------------------------

/// Shift a fraction of the channels one frame forward and an equal fraction
/// one frame back, zero-filling at clip boundaries. The fraction is a
/// rational (numerator, denominator), 0 < fraction <= 1/2, and the shifted
/// channel count must come out even so the two directions split equally.
pub fn temporal_shift<E: Element>(
    x: &FeatureClip<E>,
    fraction: (u32, u32),
) -> Result<FeatureClip<E>> {
    let (num, den) = fraction;
    if num == 0 || den == 0 || 2 * num > den {
        return Err(argument(format!(
            "shift fraction {num}/{den} must satisfy 0 < fraction <= 1/2"
        )));
    }
    let c = x.channels();
    let scaled = c * num as usize;
    if !scaled.is_multiple_of(den as usize) {
        return Err(argument(format!(
            "{c} channels times fraction {num}/{den} is not an integer"
        )));
    }
    let shifted = scaled / den as usize;
    if !shifted.is_multiple_of(2) {
        return Err(argument(format!(
            "{shifted} shifted channels cannot split into two directions"
        )));
    }
    FeatureClip::new(apply_temporal_shift(x.tensor(), shifted / 2, false)?)
}

/// Default shift fraction: one quarter of the channels (one eighth each way).
pub const DEFAULT_SHIFT_FRACTION: (u32, u32) = (1, 4);
