//! Naive scalar-loop reference implementations of the attention blocks.
//!
//! These compute the recalibrated output position pair by position pair, in
//! 64-bit, with explicit window loops and literal exponential/row-sum
//! normalization. They share no code with the matrix-form path and exist as
//! its independent oracle: the `oracle` CLI subcommand and the acceptance
//! suite compare the two routes element by element.

use crate::aggregation::AggregationMode;
use crate::blocks::{BnParams, NlBlock, RnlBlock, SeBlock, BN_EPS};
use crate::element::Element;
use crate::error::Result;
use crate::similarity::{SimilarityForm, COSINE_NORM_EPS};
use crate::tensor::FeatureClip;

/// Element-wise comparison of two clips.
#[derive(Debug, Clone, Copy)]
pub struct OracleComparison {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

impl OracleComparison {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// max |a-b| and max |a-b| / max(|a|,|b|,1e-8) over all positions/channels.
pub fn compare<E: Element>(a: &FeatureClip<E>, b: &FeatureClip<f64>) -> OracleComparison {
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (x, y) in a.tensor().iter_f64().zip(b.tensor().iter_f64()) {
        let abs = (x - y).abs();
        let rel = abs / x.abs().max(y.abs()).max(1e-8);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    OracleComparison {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
    }
}

fn embed<E: Element>(x: &FeatureClip<E>, w: &crate::tensor::Tensor<E>) -> Vec<Vec<f64>> {
    let p = x.positions();
    let c = x.channels();
    let m = w.shape()[1];
    let flat = x.flatten();
    let mut out = vec![vec![0.0f64; m]; p];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += flat.data()[i * c + ch].to_f64() * w.data()[ch * m + j].to_f64();
            }
            *slot = acc;
        }
    }
    out
}

/// Window aggregation at every position, one channel at a time.
fn aggregate_windows(
    g: &[Vec<f64>],
    dims: (usize, usize, usize),
    block: &RnlBlock<impl Element>,
) -> Vec<Vec<f64>> {
    let (t, h, w) = dims;
    let m = g[0].len();
    let spec = block.ftheta;
    let (rt, rh, rw) = (spec.kt / 2, spec.kh / 2, spec.kw / 2);
    let volume = (spec.kt * spec.kh * spec.kw) as f64;
    let weights: Option<Vec<f64>> = block
        .kernel_weights
        .as_ref()
        .map(|u| u.iter_f64().collect());
    let bias: Option<Vec<f64>> = block.kernel_bias.as_ref().map(|b| b.iter_f64().collect());

    let mut out = vec![vec![0.0f64; m]; t * h * w];
    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                let pos = (ti * h + hi) * w + wi;
                for j in 0..m {
                    let mut acc = 0.0f64;
                    let mut max = f64::NEG_INFINITY;
                    for dt in 0..spec.kt {
                        let st = ti as isize + dt as isize - rt as isize;
                        if st < 0 || st >= t as isize {
                            continue;
                        }
                        for dh in 0..spec.kh {
                            let sh = hi as isize + dh as isize - rh as isize;
                            if sh < 0 || sh >= h as isize {
                                continue;
                            }
                            for dw in 0..spec.kw {
                                let sw = wi as isize + dw as isize - rw as isize;
                                if sw < 0 || sw >= w as isize {
                                    continue;
                                }
                                let src = (st as usize * h + sh as usize) * w + sw as usize;
                                let v = g[src][j];
                                match spec.mode {
                                    AggregationMode::ChannelWiseConv => {
                                        let u = weights.as_ref().unwrap()
                                            [((dt * spec.kh + dh) * spec.kw + dw) * m + j];
                                        acc += u * v;
                                    }
                                    AggregationMode::AvgPool => acc += v,
                                    AggregationMode::MaxPool => max = max.max(v),
                                }
                            }
                        }
                    }
                    out[pos][j] = match spec.mode {
                        AggregationMode::ChannelWiseConv => {
                            acc + bias.as_ref().map_or(0.0, |b| b[j])
                        }
                        AggregationMode::AvgPool => acc / volume,
                        AggregationMode::MaxPool => max,
                    };
                }
            }
        }
    }
    out
}

/// Pairwise similarity of two embedding rows under the given form; literal
/// exponential for the gaussian version.
fn pair_similarity(a: &[f64], b: &[f64], form: SimilarityForm) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    match form {
        SimilarityForm::Gaussian => dot.exp(),
        SimilarityForm::Dot => dot,
        SimilarityForm::Cosine => {
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < COSINE_NORM_EPS || nb < COSINE_NORM_EPS {
                0.0
            } else {
                (dot / (na * nb)).clamp(0.0, 1.0)
            }
        }
    }
}

fn apply_bn_rows(rows: &mut [Vec<f64>], bn: &BnParams<impl Element>) {
    let gamma: Vec<f64> = bn.gamma.iter_f64().collect();
    let beta: Vec<f64> = bn.beta.iter_f64().collect();
    let mean: Vec<f64> = bn.mean.iter_f64().collect();
    let var: Vec<f64> = bn.var.iter_f64().collect();
    for row in rows.iter_mut() {
        for (ch, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[ch]) / (var[ch] + BN_EPS).sqrt() * gamma[ch] + beta[ch];
        }
    }
}

fn clip_from_rows(
    dims: (usize, usize, usize),
    rows: Vec<Vec<f64>>,
) -> Result<FeatureClip<f64>> {
    let (t, h, w) = dims;
    let c = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    FeatureClip::new(crate::tensor::Tensor::new(vec![t, h, w, c], flat)?)
}

/// The weighted-sum recalibration shared by the RNL and NL references:
/// normalize the pairwise weights, mix the value rows, project with W_z,
/// optionally batch-normalize, and add the residual input.
fn recalibrate<E: Element>(
    x: &FeatureClip<E>,
    pairwise: &[Vec<f64>],
    values: &[Vec<f64>],
    form: SimilarityForm,
    wz: &crate::tensor::Tensor<E>,
    bn: Option<&BnParams<E>>,
) -> Result<FeatureClip<f64>> {
    let p = x.positions();
    let c = x.channels();
    let m = values[0].len();
    let flat = x.flatten();

    let mut mixed = vec![vec![0.0f64; m]; p];
    for i in 0..p {
        let denom = match form {
            SimilarityForm::Gaussian => pairwise[i].iter().sum::<f64>(),
            SimilarityForm::Dot | SimilarityForm::Cosine => p as f64,
        };
        for j2 in 0..p {
            let weight = pairwise[i][j2] / denom;
            for j in 0..m {
                mixed[i][j] += weight * values[j2][j];
            }
        }
    }

    let mut projected = vec![vec![0.0f64; c]; p];
    for i in 0..p {
        for ch in 0..c {
            let mut acc = 0.0;
            for j in 0..m {
                acc += mixed[i][j] * wz.data()[j * c + ch].to_f64();
            }
            projected[i][ch] = acc;
        }
    }
    if let Some(bn) = bn {
        apply_bn_rows(&mut projected, bn);
    }
    for i in 0..p {
        for ch in 0..c {
            projected[i][ch] += flat.data()[i * c + ch].to_f64();
        }
    }
    clip_from_rows((x.frames(), x.height(), x.width()), projected)
}

/// Position-pair loop evaluation of the RNL block.
pub fn rnl_reference<E: Element>(
    x: &FeatureClip<E>,
    block: &RnlBlock<E>,
) -> Result<FeatureClip<f64>> {
    let g = embed(x, &block.wg);
    let e = aggregate_windows(&g, (x.frames(), x.height(), x.width()), block);
    let p = x.positions();
    let mut pairwise = vec![vec![0.0f64; p]; p];
    for i in 0..p {
        for j in 0..p {
            pairwise[i][j] = pair_similarity(&e[i], &e[j], block.form);
        }
    }
    recalibrate(x, &pairwise, &g, block.form, &block.wz, block.residual_bn.as_ref())
}

/// Position-pair loop evaluation of the original NL block
/// (embedded-gaussian form).
pub fn nl_reference<E: Element>(
    x: &FeatureClip<E>,
    block: &NlBlock<E>,
) -> Result<FeatureClip<f64>> {
    let theta = embed(x, &block.wtheta);
    let phi = embed(x, &block.wphi);
    let g = embed(x, &block.wg);
    let p = x.positions();
    let mut pairwise = vec![vec![0.0f64; p]; p];
    for i in 0..p {
        for j in 0..p {
            let dot: f64 = theta[i].iter().zip(&phi[j]).map(|(a, b)| a * b).sum();
            pairwise[i][j] = dot.exp();
        }
    }
    recalibrate(
        x,
        &pairwise,
        &g,
        SimilarityForm::Gaussian,
        &block.wz,
        block.residual_bn.as_ref(),
    )
}

/// Scalar-loop evaluation of the SE block.
pub fn se_reference<E: Element>(
    x: &FeatureClip<E>,
    block: &SeBlock<E>,
) -> Result<FeatureClip<f64>> {
    let p = x.positions();
    let c = x.channels();
    let m = c / block.reduction;
    let flat = x.flatten();

    let mut squeezed = vec![0.0f64; c];
    for i in 0..p {
        for ch in 0..c {
            squeezed[ch] += flat.data()[i * c + ch].to_f64();
        }
    }
    for v in &mut squeezed {
        *v /= p as f64;
    }

    let mut hidden = vec![0.0f64; m];
    for (j, slot) in hidden.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ch in 0..c {
            acc += block.w1.data()[j * c + ch].to_f64() * squeezed[ch];
        }
        *slot = acc;
    }
    let mut hidden_rows = vec![hidden];
    apply_bn_rows(&mut hidden_rows, &block.bn);
    let hidden = &hidden_rows[0];

    let mut excitation = vec![0.0f64; c];
    for (ch, slot) in excitation.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..m {
            acc += block.w2.data()[ch * m + j].to_f64() * hidden[j].max(0.0);
        }
        *slot = acc;
    }

    let mut out = vec![vec![0.0f64; c]; p];
    for i in 0..p {
        for ch in 0..c {
            out[i][ch] = flat.data()[i * c + ch].to_f64() + excitation[ch];
        }
    }
    clip_from_rows((x.frames(), x.height(), x.width()), out)
}
