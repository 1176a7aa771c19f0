//! Pairwise region-similarity functions and the resulting affinity matrix.
//!
//! Given the flattened region embeddings e (one row per space-time position),
//! three forms are supported: gaussian (exponentiated inner products,
//! normalized row-wise so each position's weights sum to 1), raw dot product,
//! and cosine (inner products of unit rows, clipped to [0,1]). Dot and cosine
//! normalize by the position count P instead of a row sum.

use crate::element::Element;
use crate::error::{argument, contract, Result};
use crate::tensor::{FeatureClip, Tensor};

/// Rows below this norm are treated as unrelated to everything under the
/// cosine form (the quotient is singular there).
pub const COSINE_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityForm {
    Gaussian,
    Dot,
    Cosine,
}

impl SimilarityForm {
    pub fn token(self) -> &'static str {
        match self {
            SimilarityForm::Gaussian => "gaussian",
            SimilarityForm::Dot => "dot",
            SimilarityForm::Cosine => "cosine",
        }
    }

    pub fn parse(token: &str) -> Result<SimilarityForm> {
        match token {
            "gaussian" => Ok(SimilarityForm::Gaussian),
            "dot" | "dot-product" => Ok(SimilarityForm::Dot),
            "cosine" => Ok(SimilarityForm::Cosine),
            other => Err(argument(format!(
                "unknown similarity form '{other}' (expected gaussian, dot or cosine)"
            ))),
        }
    }

    pub const ALL: [SimilarityForm; 3] = [
        SimilarityForm::Gaussian,
        SimilarityForm::Dot,
        SimilarityForm::Cosine,
    ];
}

/// P x P pairwise weight matrix, before or after normalization.
///
/// For the gaussian form the un-normalized matrix holds the raw logits
/// (exponentiation happens inside the row softmax during normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<E: Element> {
    w: Tensor<E>,
    form: SimilarityForm,
    normalized: bool,
}

impl<E: Element> AffinityMatrix<E> {
    pub fn positions(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn form(&self) -> SimilarityForm {
        self.form
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> &Tensor<E> {
        &self.w
    }

    /// Wrap an externally computed, already-normalized matrix (used by the
    /// blocks to retain the attention weights they applied).
    pub fn from_normalized(w: Tensor<E>, form: SimilarityForm) -> Result<AffinityMatrix<E>> {
        if w.rank() != 2 || w.shape()[0] != w.shape()[1] {
            return Err(argument(format!(
                "affinity matrix must be square, got {:?}",
                w.shape()
            )));
        }
        Ok(AffinityMatrix {
            w,
            form,
            normalized: true,
        })
    }

    /// Normalize the pairwise weights: row softmax for the gaussian form
    /// (the row sum is the normalization factor), division by P for dot
    /// and cosine.
    pub fn normalize(self) -> Result<AffinityMatrix<E>> {
        if self.normalized {
            return Err(contract("affinity matrix is already normalized"));
        }
        let p = self.positions();
        let w = match self.form {
            SimilarityForm::Gaussian => self.w.softmax_rows()?,
            SimilarityForm::Dot | SimilarityForm::Cosine => self.w.div_scalar(p as f64)?,
        };
        Ok(AffinityMatrix {
            w,
            form: self.form,
            normalized: true,
        })
    }

    /// Row i reshaped to a single-channel clip: the attention map showing
    /// which regions relate to reference position i.
    pub fn attention_row(
        &self,
        i: usize,
        dims: (usize, usize, usize),
    ) -> Result<FeatureClip<E>> {
        if !self.normalized {
            return Err(contract("attention maps come from the normalized affinity"));
        }
        let p = self.positions();
        let (t, h, w) = dims;
        if t * h * w != p {
            return Err(argument(format!(
                "dims {t}x{h}x{w} do not multiply to {p} positions"
            )));
        }
        if i >= p {
            return Err(argument(format!("position index {i} out of range (P={p})")));
        }
        let row = self.w.data()[i * p..(i + 1) * p].to_vec();
        FeatureClip::new(Tensor::new(vec![t, h, w, 1], row)?)
    }
}

/// Normalize each row of e to unit Euclidean length; rows with norm below
/// `COSINE_NORM_EPS` become zero rows.
pub fn row_normalize<E: Element>(e: &Tensor<E>) -> Result<Tensor<E>> {
    if e.rank() != 2 {
        return Err(argument(format!(
            "row_normalize expects a rank-2 tensor, got {:?}",
            e.shape()
        )));
    }
    let (p, c) = (e.shape()[0], e.shape()[1]);
    let mut out = vec![E::ZERO; p * c];
    for i in 0..p {
        let row = &e.data()[i * c..(i + 1) * c];
        let norm = row.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
        if norm >= COSINE_NORM_EPS {
            for (j, v) in row.iter().enumerate() {
                out[i * c + j] = E::from_f64(v.to_f64() / norm);
            }
        }
    }
    Tensor::new(vec![p, c], out)
}

/// Pairwise similarity of the embedding rows, un-normalized.
///
/// gaussian: raw logits e_i . e_j (softmax applied by `normalize`);
/// dot: e_i . e_j; cosine: inner products of unit rows clipped to [0,1].
pub fn affinity<E: Element>(e: &Tensor<E>, form: SimilarityForm) -> Result<AffinityMatrix<E>> {
    if e.rank() != 2 {
        return Err(argument(format!(
            "embeddings must be (P, C), got {:?}",
            e.shape()
        )));
    }
    if !e.all_finite() {
        return Err(argument("embeddings contain non-finite entries"));
    }
    let w = match form {
        SimilarityForm::Gaussian | SimilarityForm::Dot => e.matmul(&e.transpose2d()?)?,
        SimilarityForm::Cosine => {
            let unit = row_normalize(e)?;
            unit.matmul(&unit.transpose2d()?)?.clamp_unit()?
        }
    };
    Ok(AffinityMatrix {
        w,
        form,
        normalized: false,
    })
}
