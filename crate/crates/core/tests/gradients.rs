//! Central-difference validation of every registered backward rule and of
//! the full attention blocks.
//!
//! Each op is checked through a random-projection loss (sum of the output
//! weighted by a constant random tensor) so that gradients are
//! well-conditioned; plain sums make conserved quantities like softmax rows
//! look like zero/noise comparisons.

use rnl_core::aggregation::AggregationMode;
use rnl_core::autodiff::{finite_diff_check, GradientReport, Tape, VarId};
use rnl_core::blocks::{ChainBlock, FthetaSpec, NlBlock, RnlBlock, SeBlock};
use rnl_core::rng::Rng;
use rnl_core::similarity::SimilarityForm;
use rnl_core::tensor::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
const SEEDS: u64 = 10;

fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let count: usize = shape.iter().product();
    Tensor::new(shape, (0..count).map(|_| rng.uniform(1.0)).collect()).unwrap()
}

/// Project the output onto a fixed random direction and sum to a scalar.
fn project(tape: &mut Tape<f64>, out: VarId, seed: u64) -> VarId {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = Rng::new(seed ^ 0x70726f6a);
    let weights = random_tensor(shape, &mut rng);
    let w = tape.constant(weights);
    let weighted = tape.hadamard(out, w).unwrap();
    tape.sum_all(weighted).unwrap()
}

fn assert_passes(report: &GradientReport, what: &str, seed: u64) {
    assert!(
        report.passes(TOL),
        "{what} (seed {seed}): max rel err {} abs {} skipped {}",
        report.max_rel_err,
        report.max_abs_err,
        report.skipped_total
    );
}

fn check_op(
    what: &str,
    shapes: &[Vec<usize>],
    build: impl Fn(&mut Tape<f64>, &[VarId]) -> rnl_core::Result<VarId>,
) {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(1000 + seed);
        let inputs: Vec<(&str, Tensor<f64>)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name: &str = ["a", "b", "c"][i];
                (name, random_tensor(s.clone(), &mut rng))
            })
            .collect();
        let report = finite_diff_check(
            |tape, vars| {
                let out = build(tape, vars)?;
                Ok(project(tape, out, seed))
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_passes(&report, what, seed);
    }
}

#[test]
fn matmul_backward() {
    check_op("matmul", &[vec![3, 4], vec![4, 2]], |tape, v| {
        tape.matmul(v[0], v[1])
    });
}

#[test]
fn softmax_rows_backward() {
    check_op("softmax_rows", &[vec![4, 5]], |tape, v| tape.softmax_rows(v[0]));
}

#[test]
fn relu_backward() {
    check_op("relu", &[vec![3, 4]], |tape, v| tape.relu(v[0]));
}

#[test]
fn clamp_unit_backward() {
    check_op("clamp_unit", &[vec![3, 4]], |tape, v| tape.clamp_unit(v[0]));
}

#[test]
fn add_same_shape_backward() {
    check_op("add", &[vec![3, 4], vec![3, 4]], |tape, v| tape.add(v[0], v[1]));
}

#[test]
fn add_broadcast_backward() {
    check_op("add broadcast", &[vec![4, 3], vec![1, 3]], |tape, v| {
        tape.add(v[0], v[1])
    });
}

#[test]
fn hadamard_backward() {
    check_op("hadamard", &[vec![2, 6], vec![2, 6]], |tape, v| {
        tape.hadamard(v[0], v[1])
    });
}

#[test]
fn scale_and_div_backward() {
    check_op("scale", &[vec![3, 3]], |tape, v| tape.scale(v[0], -1.7));
    check_op("div_scalar", &[vec![3, 3]], |tape, v| tape.div_scalar(v[0], 9.0));
}

#[test]
fn transpose_reshape_backward() {
    check_op("transpose2d", &[vec![3, 5]], |tape, v| tape.transpose2d(v[0]));
    check_op("reshape", &[vec![2, 6]], |tape, v| tape.reshape(v[0], vec![3, 4]));
}

#[test]
fn mean_rows_backward() {
    check_op("mean_rows", &[vec![6, 4]], |tape, v| tape.mean_rows(v[0]));
}

#[test]
fn conv1x1_backward() {
    check_op("conv1x1", &[vec![2, 3, 3, 4], vec![4, 2]], |tape, v| {
        tape.conv1x1(v[0], v[1], None)
    });
    check_op(
        "conv1x1 bias",
        &[vec![2, 2, 2, 3], vec![3, 5], vec![5]],
        |tape, v| tape.conv1x1(v[0], v[1], Some(v[2])),
    );
}

#[test]
fn batch_norm_backward() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(2000 + seed);
        let x = random_tensor(vec![5, 3], &mut rng);
        let gamma = random_tensor(vec![3], &mut rng);
        let beta = random_tensor(vec![3], &mut rng);
        let mean = random_tensor(vec![3], &mut rng);
        let var = Tensor::from_f64_slice(
            vec![3],
            &[0.5 + rng.next_f64(), 0.5 + rng.next_f64(), 0.5 + rng.next_f64()],
        )
        .unwrap();
        let report = finite_diff_check(
            |tape, vars| {
                let out = tape.batch_norm(
                    vars[0],
                    vars[1],
                    vars[2],
                    mean.clone(),
                    var.clone(),
                    1e-5,
                )?;
                Ok(project(tape, out, seed))
            },
            &[("x", x), ("gamma", gamma), ("beta", beta)],
            H,
        )
        .unwrap();
        assert_passes(&report, "batch_norm", seed);
    }
}

#[test]
fn aggregate_conv_backward() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(3000 + seed);
        let x = random_tensor(vec![2, 4, 4, 3], &mut rng);
        let u = random_tensor(vec![3, 3, 3, 3], &mut rng);
        let bias = random_tensor(vec![3], &mut rng);
        let report = finite_diff_check(
            |tape, vars| {
                let out = tape.aggregate(
                    vars[0],
                    AggregationMode::ChannelWiseConv,
                    (3, 3, 3),
                    Some(vars[1]),
                    Some(vars[2]),
                )?;
                Ok(project(tape, out, seed))
            },
            &[("x", x), ("u", u), ("bias", bias)],
            H,
        )
        .unwrap();
        assert_passes(&report, "aggregate conv", seed);
    }
}

#[test]
fn aggregate_pool_backward() {
    for (mode, name) in [
        (AggregationMode::AvgPool, "aggregate avg"),
        (AggregationMode::MaxPool, "aggregate max"),
    ] {
        for seed in 0..SEEDS {
            let mut rng = Rng::new(4000 + seed);
            let x = random_tensor(vec![2, 4, 4, 2], &mut rng);
            let report = finite_diff_check(
                |tape, vars| {
                    let out = tape.aggregate(vars[0], mode, (3, 3, 3), None, None)?;
                    Ok(project(tape, out, seed))
                },
                &[("x", x)],
                H,
            )
            .unwrap();
            assert_passes(&report, name, seed);
        }
    }
}

#[test]
fn row_normalize_backward() {
    check_op("row_normalize", &[vec![5, 3]], |tape, v| tape.row_normalize(v[0]));
}

#[test]
fn temporal_shift_backward() {
    check_op("temporal_shift", &[vec![3, 2, 2, 8]], |tape, v| {
        tape.temporal_shift(v[0], 1)
    });
}

#[test]
fn zero_norm_row_has_zero_cosine_gradient() {
    // An exactly-zero row is a flat region of the row normalization; both
    // sides of the check agree it contributes nothing until the perturbation
    // itself un-zeroes the row, which the signature reports as a kink.
    let x = Tensor::from_f64_slice(vec![2, 3], &[0.0, 0.0, 0.0, 1.0, 2.0, -0.5]).unwrap();
    let report = finite_diff_check(
        |tape, vars| {
            let unit = tape.row_normalize(vars[0])?;
            Ok(project(tape, unit, 99))
        },
        &[("x", x)],
        H,
    )
    .unwrap();
    // Coordinates of the zero row straddle the zero-norm boundary: skipped.
    assert_eq!(report.leaves[0].skipped, vec![0, 1, 2]);
    assert_passes(&report, "row_normalize zero row", 99);
}

// ---------------------------------------------------------------------------
// Full blocks
// ---------------------------------------------------------------------------

fn check_block(
    what: &str,
    leaf_tensors: Vec<(String, Tensor<f64>)>,
    x: Tensor<f64>,
    build: impl Fn(&mut Tape<f64>, VarId, &[VarId]) -> rnl_core::Result<rnl_core::blocks::BlockVars>,
    seed: u64,
) {
    let mut inputs: Vec<(&str, Tensor<f64>)> = vec![("x", x)];
    let names: Vec<String> = leaf_tensors.iter().map(|(n, _)| n.clone()).collect();
    for (name, tensor) in names.iter().zip(leaf_tensors.into_iter().map(|(_, t)| t)) {
        inputs.push((name.as_str(), tensor));
    }
    let report = finite_diff_check(
        |tape, vars| {
            let block_vars = build(tape, vars[0], &vars[1..])?;
            Ok(project(tape, block_vars.z, seed))
        },
        &inputs,
        H,
    )
    .unwrap();
    assert_passes(&report, what, seed);
}

#[test]
fn rnl_block_gradients_all_forms_and_modes() {
    let specs = [
        FthetaSpec::conv(3, 3, 3),
        FthetaSpec::pooling(AggregationMode::AvgPool, 3, 3, 3),
        FthetaSpec::pooling(AggregationMode::MaxPool, 3, 3, 3),
    ];
    for form in SimilarityForm::ALL {
        for ftheta in specs {
            for seed in 0..3 {
                let mut rng = Rng::new(5000 + seed);
                let x = random_tensor(vec![2, 3, 3, 4], &mut rng);
                let block =
                    RnlBlock::<f64>::randomized(4, 2, form, ftheta, true, 5100 + seed).unwrap();
                check_block(
                    &format!("rnl {form:?} {:?}", ftheta.mode),
                    block.leaf_tensors(),
                    x,
                    |tape, xv, leaves| block.build(tape, xv, leaves),
                    seed,
                );
            }
        }
    }
}

#[test]
fn gaussian_rnl_block_ten_seeds() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(6000 + seed);
        let x = random_tensor(vec![2, 3, 3, 4], &mut rng);
        let block = RnlBlock::<f64>::randomized(
            4,
            2,
            SimilarityForm::Gaussian,
            FthetaSpec::conv(3, 3, 3),
            true,
            6100 + seed,
        )
        .unwrap();
        check_block(
            "rnl gaussian",
            block.leaf_tensors(),
            x,
            |tape, xv, leaves| block.build(tape, xv, leaves),
            seed,
        );
    }
}

#[test]
fn nl_block_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(7000 + seed);
        let x = random_tensor(vec![2, 3, 3, 4], &mut rng);
        let block = NlBlock::<f64>::randomized(4, 2, true, 7100 + seed).unwrap();
        check_block(
            "nl",
            block.leaf_tensors(),
            x,
            |tape, xv, leaves| block.build(tape, xv, leaves),
            seed,
        );
    }
}

#[test]
fn se_block_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(8000 + seed);
        let x = random_tensor(vec![2, 3, 3, 4], &mut rng);
        let block = SeBlock::<f64>::randomized(4, 2, 8100 + seed).unwrap();
        check_block(
            "se",
            block.leaf_tensors(),
            x,
            |tape, xv, leaves| block.build(tape, xv, leaves),
            seed,
        );
    }
}

#[test]
fn chain_block_gradients() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(9000 + seed);
        let x = random_tensor(vec![2, 3, 3, 4], &mut rng);
        let block = ChainBlock::<f64>::randomized(
            4,
            2,
            SimilarityForm::Gaussian,
            FthetaSpec::conv(1, 3, 3),
            true,
            9100 + seed,
        )
        .unwrap();
        check_block(
            "chain",
            block.leaf_tensors(),
            x,
            |tape, xv, leaves| block.build(tape, xv, leaves),
            seed,
        );
    }
}
