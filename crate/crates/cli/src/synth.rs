//! Synthetic clip generators. Every generator is a pure function of its
//! parameters and the seed, so runs are bit-reproducible.

use rnl_core::element::Element;
use rnl_core::rng::Rng;
use rnl_core::tensor::{FeatureClip, Tensor};
use rnl_core::{Error, Result};

#[derive(Debug, Clone)]
pub enum Pattern {
    Random { seed: u64 },
    Constant { value: f64 },
    MovingDot(MovingDot),
}

/// A bright disc of the given radius whose center moves `velocity` cells in
/// (h, w) per frame, starting at `start`. Cells inside the disc carry
/// `amplitude` in every channel; the background is zero.
#[derive(Debug, Clone)]
pub struct MovingDot {
    pub radius: f64,
    pub velocity: (i64, i64),
    pub start: (i64, i64),
    pub amplitude: f64,
}

/// A generated clip plus, for the moving-dot pattern, the ground-truth
/// per-position mask of the dot (indexed like the flattened positions).
pub struct Synthesized<E: Element> {
    pub clip: FeatureClip<E>,
    pub mask: Option<Vec<bool>>,
}

pub fn synthesize<E: Element>(
    shape: &[usize],
    pattern: &Pattern,
) -> Result<Synthesized<E>> {
    if shape.len() != 4 {
        return Err(Error::Argument(format!(
            "synthetic clips are rank-4 (T,H,W,C), got {shape:?}"
        )));
    }
    let (t, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let count = t * h * w * c;
    match pattern {
        Pattern::Random { seed } => {
            let mut rng = Rng::new(*seed).fork(0x696e);
            let data: Vec<f64> = (0..count).map(|_| rng.uniform(1.0)).collect();
            Ok(Synthesized {
                clip: FeatureClip::new(Tensor::from_f64_slice(shape.to_vec(), &data)?)?,
                mask: None,
            })
        }
        Pattern::Constant { value } => Ok(Synthesized {
            clip: FeatureClip::new(Tensor::full(shape.to_vec(), *value)?)?,
            mask: None,
        }),
        Pattern::MovingDot(dot) => {
            let mut data = vec![0.0f64; count];
            let mut mask = vec![false; t * h * w];
            let r2 = dot.radius * dot.radius;
            for ti in 0..t {
                let ch_center = dot.start.0 + ti as i64 * dot.velocity.0;
                let cw_center = dot.start.1 + ti as i64 * dot.velocity.1;
                for hi in 0..h {
                    for wi in 0..w {
                        let dh = hi as f64 - ch_center as f64;
                        let dw = wi as f64 - cw_center as f64;
                        if dh * dh + dw * dw <= r2 {
                            let pos = (ti * h + hi) * w + wi;
                            mask[pos] = true;
                            for ch in 0..c {
                                data[pos * c + ch] = dot.amplitude;
                            }
                        }
                    }
                }
            }
            Ok(Synthesized {
                clip: FeatureClip::new(Tensor::from_f64_slice(shape.to_vec(), &data)?)?,
                mask: Some(mask),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_is_seed_deterministic() {
        let a: Synthesized<f64> =
            synthesize(&[2, 3, 3, 2], &Pattern::Random { seed: 5 }).unwrap();
        let b: Synthesized<f64> =
            synthesize(&[2, 3, 3, 2], &Pattern::Random { seed: 5 }).unwrap();
        assert_eq!(a.clip.tensor().data(), b.clip.tensor().data());
    }

    #[test]
    fn moving_dot_mask_tracks_center() {
        let dot = MovingDot {
            radius: 1.0,
            velocity: (1, 1),
            start: (1, 1),
            amplitude: 3.0,
        };
        let out: Synthesized<f64> = synthesize(&[3, 6, 6, 2], &Pattern::MovingDot(dot)).unwrap();
        let mask = out.mask.unwrap();
        // Center cell of each frame is inside the dot.
        for t in 0..3 {
            let center = (t * 6 + (1 + t)) * 6 + (1 + t);
            assert!(mask[center], "frame {t} center missing");
        }
        // Background carries zeros, dot carries the amplitude.
        for (pos, &inside) in mask.iter().enumerate() {
            let v = out.clip.tensor().data()[pos * 2];
            if inside {
                assert_eq!(v, 3.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn constant_fills_every_cell() {
        let out: Synthesized<f32> =
            synthesize(&[1, 2, 2, 3], &Pattern::Constant { value: -2.5 }).unwrap();
        assert!(out.clip.tensor().iter_f64().all(|v| v == -2.5));
    }
}
