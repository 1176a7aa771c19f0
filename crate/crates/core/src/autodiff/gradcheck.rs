use crate::error::{argument, contract, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, VarId};

/// Relative error denominator floor: avoids blowing up ratios when both the
/// analytic and numeric values are essentially zero.
const REL_FLOOR: f64 = 1e-8;

/// Resolution limit of the central-difference oracle itself: with h = 1e-5
/// in f64, truncation plus rounding leaves absolute noise around 1e-10 on
/// O(1)-valued programs. Disagreements below this floor cannot be attributed
/// to a wrong backward rule and pass on absolute closeness; a genuinely
/// wrong rule disagrees by orders of magnitude more.
const CD_NOISE_FLOOR: f64 = 1e-8;

/// Comparison of analytic and central-difference gradients for one leaf.
#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub name: String,
    pub analytic: Tensor<f64>,
    pub numeric: Tensor<f64>,
    /// max |a - n| / max(|a|, |n|, 1e-8) over unskipped coordinates whose
    /// absolute disagreement exceeds the oracle's own noise floor
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// flat coordinates skipped because the perturbation straddled a kink
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub leaves: Vec<LeafCheck>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub skipped_total: usize,
}

impl GradientReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Compare the tape's reverse-mode gradients against central differences
/// (f(x+h*e) - f(x-h*e)) / (2h), coordinate by coordinate, in 64-bit.
///
/// `build` records the program on a fresh tape from the given leaves and
/// returns the scalar root. It runs once at the base point for the analytic
/// gradients and twice per coordinate for the numeric ones; the numeric side
/// uses only forward values, never the backward rules it is checking.
///
/// Coordinates whose +h/-h evaluations land on different activation patterns
/// (ReLU sign, max-pool winner, clamp boundary, zero-norm row) are reported
/// as skipped rather than compared: a central difference across a kink
/// measures nothing.
pub fn finite_diff_check<F>(
    build: F,
    inputs: &[(&str, Tensor<f64>)],
    h: f64,
) -> Result<GradientReport>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    if h <= 0.0 {
        return Err(argument("step size h must be positive"));
    }
    if inputs.iter().any(|(_, t)| !t.all_finite()) {
        return Err(argument("gradient check point must be finite"));
    }

    // Analytic pass at the base point.
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    if tape.value(root).len() != 1 {
        return Err(contract(format!(
            "checked program must be scalar-valued, got shape {:?}",
            tape.value(root).shape()
        )));
    }
    let grads = tape.backward(root)?;

    let eval = |point: &[(&str, Tensor<f64>)]| -> Result<(f64, Vec<u32>)> {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = point.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok((tape.value(root).data()[0], tape.kink_signature()))
    };

    let mut leaves = Vec::with_capacity(inputs.len());
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut skipped_total = 0usize;

    for (leaf_idx, (name, tensor)) in inputs.iter().enumerate() {
        let analytic = match grads.get(vars[leaf_idx]) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tensor.shape().to_vec())?,
        };
        let mut numeric = vec![0.0f64; tensor.len()];
        let mut skipped = Vec::new();
        let mut leaf_rel = 0.0f64;
        let mut leaf_abs = 0.0f64;

        for coord in 0..tensor.len() {
            let mut plus: Vec<(&str, Tensor<f64>)> = inputs.to_vec();
            let mut minus: Vec<(&str, Tensor<f64>)> = inputs.to_vec();
            let mut pd = tensor.data().to_vec();
            pd[coord] += h;
            plus[leaf_idx].1 = Tensor::new(tensor.shape().to_vec(), pd)?;
            let mut md = tensor.data().to_vec();
            md[coord] -= h;
            minus[leaf_idx].1 = Tensor::new(tensor.shape().to_vec(), md)?;

            let (f_plus, sig_plus) = eval(&plus)?;
            let (f_minus, sig_minus) = eval(&minus)?;
            if sig_plus != sig_minus {
                skipped.push(coord);
                continue;
            }
            let n = (f_plus - f_minus) / (2.0 * h);
            numeric[coord] = n;
            let a = analytic.data()[coord];
            let abs = (a - n).abs();
            leaf_abs = leaf_abs.max(abs);
            if abs > CD_NOISE_FLOOR {
                let rel = abs / a.abs().max(n.abs()).max(REL_FLOOR);
                leaf_rel = leaf_rel.max(rel);
            }
        }

        max_rel = max_rel.max(leaf_rel);
        max_abs = max_abs.max(leaf_abs);
        skipped_total += skipped.len();
        leaves.push(LeafCheck {
            name: name.to_string(),
            analytic,
            numeric: Tensor::new(tensor.shape().to_vec(), numeric)?,
            max_rel_err: leaf_rel,
            max_abs_err: leaf_abs,
            skipped,
        });
    }

    Ok(GradientReport {
        leaves,
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        skipped_total,
    })
}
