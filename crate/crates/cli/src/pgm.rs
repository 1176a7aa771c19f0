//! Binary PGM (P5) export of attention maps, plus the raw-value CSV.

use std::path::Path;

use rnl_core::element::Element;
use rnl_core::tensor::FeatureClip;
use rnl_core::Result;

/// Per-frame grayscale rasters of one attention row, min-max normalized to
/// [0, 255] over the whole map. A constant map degenerates to mid-gray 128.
pub struct MapImage {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

impl MapImage {
    pub fn from_map<E: Element>(map: &FeatureClip<E>) -> MapImage {
        let (t, h, w, _) = map.dims();
        let values: Vec<f64> = map.tensor().iter_f64().collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let frames = (0..t)
            .map(|ti| {
                (0..h * w)
                    .map(|p| {
                        let v = values[ti * h * w + p];
                        if span == 0.0 {
                            128u8
                        } else {
                            ((v - min) / span * 255.0).round() as u8
                        }
                    })
                    .collect()
            })
            .collect();
        MapImage {
            width: w,
            height: h,
            frames,
        }
    }

    /// Binary P5 bytes for one frame: header then width*height gray bytes.
    pub fn encode_frame(&self, frame: usize) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.frames[frame]);
        out
    }

    pub fn write_frames(&self, dir: &Path, stem: &str) -> Result<Vec<String>> {
        let mut names = Vec::with_capacity(self.frames.len());
        for frame in 0..self.frames.len() {
            let name = format!("{stem}_f{frame:02}.pgm");
            std::fs::write(dir.join(&name), self.encode_frame(frame))?;
            names.push(name);
        }
        Ok(names)
    }
}

/// RFC-4180-style CSV of the raw row values: CRLF line endings, header
/// `t,h,w,value`, one row per position in flattened order.
pub fn map_csv<E: Element>(map: &FeatureClip<E>) -> String {
    let (t, h, w, _) = map.dims();
    let mut out = String::from("t,h,w,value\r\n");
    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                let v = map.value(ti, hi, wi, 0);
                out.push_str(&format!("{ti},{hi},{wi},{v}\r\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rnl_core::tensor::Tensor;

    #[test]
    fn constant_map_renders_mid_gray() {
        let map =
            FeatureClip::new(Tensor::<f64>::full(vec![2, 2, 2, 1], 0.125).unwrap()).unwrap();
        let img = MapImage::from_map(&map);
        for frame in &img.frames {
            assert!(frame.iter().all(|&b| b == 128));
        }
    }

    #[test]
    fn min_max_normalization_spans_full_range() {
        let map = FeatureClip::new(
            Tensor::<f64>::from_f64_slice(vec![1, 2, 2, 1], &[0.0, 0.5, 0.75, 1.0]).unwrap(),
        )
        .unwrap();
        let img = MapImage::from_map(&map);
        assert_eq!(img.frames[0], vec![0u8, 128, 191, 255]);
    }

    #[test]
    fn p5_header_and_payload_size() {
        let map =
            FeatureClip::new(Tensor::<f64>::zeros(vec![1, 3, 4, 1]).unwrap()).unwrap();
        let img = MapImage::from_map(&map);
        let bytes = img.encode_frame(0);
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), b"P5\n4 3\n255\n".len() + 12);
    }

    #[test]
    fn csv_uses_crlf_and_header() {
        let map = FeatureClip::new(
            Tensor::<f64>::from_f64_slice(vec![1, 1, 2, 1], &[0.25, 0.5]).unwrap(),
        )
        .unwrap();
        let text = map_csv(&map);
        assert_eq!(text, "t,h,w,value\r\n0,0,0,0.25\r\n0,0,1,0.5\r\n");
    }
}
