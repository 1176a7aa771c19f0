//! Region information aggregation: summarizes the cuboid neighborhood of
//! every position, per channel, with no cross-channel mixing.
//!
//! Three implementations share one geometry: a channel-wise convolution with
//! a kernel shared across all regions, or average/max pooling. Stride is 1
//! and padding is half the kernel size, so the output shape equals the input
//! shape and regions stay centered.

use crate::element::Element;
use crate::error::{argument, dimension, Result};
use crate::tensor::{debug_check_finite, FeatureClip, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    ChannelWiseConv,
    AvgPool,
    MaxPool,
}

impl AggregationMode {
    pub fn token(self) -> &'static str {
        match self {
            AggregationMode::ChannelWiseConv => "channel-wise-conv",
            AggregationMode::AvgPool => "avg-pool",
            AggregationMode::MaxPool => "max-pool",
        }
    }

    pub fn parse(token: &str) -> Result<AggregationMode> {
        match token {
            "channel-wise-conv" | "conv" => Ok(AggregationMode::ChannelWiseConv),
            "avg-pool" | "avg" => Ok(AggregationMode::AvgPool),
            "max-pool" | "max" => Ok(AggregationMode::MaxPool),
            other => Err(argument(format!(
                "unknown aggregation mode '{other}' (expected channel-wise-conv, avg-pool or max-pool)"
            ))),
        }
    }
}

/// Geometry and mode of the aggregation region, plus the shared channel-wise
/// kernel weights when in conv mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionKernel<E: Element> {
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub mode: AggregationMode,
    /// (kt, kh, kw, c) weights, conv mode only.
    pub weights: Option<Tensor<E>>,
    /// Per-channel bias, conv mode only; off by default.
    pub bias: Option<Tensor<E>>,
}

impl<E: Element> RegionKernel<E> {
    pub fn pooling(mode: AggregationMode, kt: usize, kh: usize, kw: usize) -> Result<RegionKernel<E>> {
        if mode == AggregationMode::ChannelWiseConv {
            return Err(argument("conv mode needs weights; use RegionKernel::conv"));
        }
        let k = RegionKernel {
            kt,
            kh,
            kw,
            mode,
            weights: None,
            bias: None,
        };
        k.validate(None)?;
        Ok(k)
    }

    pub fn conv(weights: Tensor<E>, bias: Option<Tensor<E>>) -> Result<RegionKernel<E>> {
        if weights.rank() != 4 {
            return Err(dimension(format!(
                "conv kernel weights must be (kt,kh,kw,c), got {:?}",
                weights.shape()
            )));
        }
        let s = weights.shape().to_vec();
        let k = RegionKernel {
            kt: s[0],
            kh: s[1],
            kw: s[2],
            mode: AggregationMode::ChannelWiseConv,
            weights: Some(weights),
            bias,
        };
        k.validate(None)?;
        Ok(k)
    }

    /// All-ones 1x1x1 conv kernel: the identity aggregation.
    pub fn identity(c: usize) -> Result<RegionKernel<E>> {
        RegionKernel::conv(Tensor::full(vec![1, 1, 1, c], 1.0)?, None)
    }

    pub fn channels(&self) -> Option<usize> {
        self.weights.as_ref().map(|w| w.shape()[3])
    }

    pub fn volume(&self) -> usize {
        self.kt * self.kh * self.kw
    }

    fn validate(&self, input_channels: Option<usize>) -> Result<()> {
        for (name, k) in [("kt", self.kt), ("kh", self.kh), ("kw", self.kw)] {
            if k == 0 || k % 2 == 0 {
                return Err(argument(format!(
                    "kernel extent {name}={k} must be odd and positive so regions stay centered"
                )));
            }
        }
        if let Some(w) = &self.weights {
            if w.shape()[0] != self.kt || w.shape()[1] != self.kh || w.shape()[2] != self.kw {
                return Err(dimension(format!(
                    "kernel weights {:?} disagree with geometry {}x{}x{}",
                    w.shape(),
                    self.kt,
                    self.kh,
                    self.kw
                )));
            }
            let c = w.shape()[3];
            if let Some(b) = &self.bias {
                if b.len() != c {
                    return Err(dimension(format!(
                        "kernel bias has {} entries, weights carry {c} channels",
                        b.len()
                    )));
                }
            }
            if let Some(cin) = input_channels {
                if cin != c {
                    return Err(dimension(format!(
                        "input has {cin} channels, kernel weights carry {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Learnable parameter count: c*kt*kh*kw (+c with bias) in conv mode,
    /// zero for the pooling modes.
    pub fn param_count(&self, c: usize) -> u64 {
        match self.mode {
            AggregationMode::ChannelWiseConv => {
                let base = (c * self.volume()) as u64;
                if self.bias.is_some() {
                    base + c as u64
                } else {
                    base
                }
            }
            AggregationMode::AvgPool | AggregationMode::MaxPool => 0,
        }
    }
}

/// Parameter count for a kernel geometry without materialized weights.
pub fn kernel_param_count(
    mode: AggregationMode,
    kt: usize,
    kh: usize,
    kw: usize,
    c: usize,
    bias: bool,
) -> u64 {
    match mode {
        AggregationMode::ChannelWiseConv => {
            let base = (c * kt * kh * kw) as u64;
            if bias {
                base + c as u64
            } else {
                base
            }
        }
        AggregationMode::AvgPool | AggregationMode::MaxPool => 0,
    }
}

/// Aggregate each position's centered region, per channel.
///
/// Conv mode computes sum_k u_k * x_k over the region with zero padding.
/// Avg pooling divides by the full kernel volume (padded cells contribute
/// zeros); max pooling considers in-bounds cells only.
pub fn aggregate<E: Element>(x: &FeatureClip<E>, kernel: &RegionKernel<E>) -> Result<FeatureClip<E>> {
    kernel.validate(kernel.weights.is_some().then_some(x.channels()))?;
    let (t, h, w, c) = x.dims();
    let (kt, kh, kw) = (kernel.kt, kernel.kh, kernel.kw);
    let (rt, rh, rw) = (kt / 2, kh / 2, kw / 2);
    let data = x.tensor().data();
    let mut out = vec![E::ZERO; data.len()];
    let vol_inv = 1.0 / kernel.volume() as f64;
    let weights = kernel.weights.as_ref().map(|w| w.data());
    let bias = kernel.bias.as_ref().map(|b| b.data());

    let index = |ti: usize, hi: usize, wi: usize, ch: usize| ((ti * h + hi) * w + wi) * c + ch;

    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    let mut max = f64::NEG_INFINITY;
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
                            for dw in 0..kw {
                                let sw = wi as isize + dw as isize - rw as isize;
                                if sw < 0 || sw >= w as isize {
                                    continue;
                                }
                                let v = data[index(st as usize, sh as usize, sw as usize, ch)]
                                    .to_f64();
                                match kernel.mode {
                                    AggregationMode::ChannelWiseConv => {
                                        let u = weights.unwrap()
                                            [((dt * kh + dh) * kw + dw) * c + ch]
                                            .to_f64();
                                        acc += u * v;
                                    }
                                    AggregationMode::AvgPool => acc += v,
                                    AggregationMode::MaxPool => {
                                        if v > max {
                                            max = v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let o = index(ti, hi, wi, ch);
                    out[o] = match kernel.mode {
                        AggregationMode::ChannelWiseConv => {
                            let b = bias.map_or(0.0, |b| b[ch].to_f64());
                            E::from_f64(acc + b)
                        }
                        AggregationMode::AvgPool => E::from_f64(acc * vol_inv),
                        AggregationMode::MaxPool => E::from_f64(max),
                    };
                }
            }
        }
    }
    let tensor = Tensor::new(vec![t, h, w, c], out)?;
    debug_check_finite(&tensor, "aggregate");
    FeatureClip::new(tensor)
}
