//! The central dual-route check: the matrix-form blocks against the literal
//! position-pair loop references, across every similarity form and every
//! aggregation mode.

use rnl_core::aggregation::AggregationMode;
use rnl_core::blocks::{
    chain_forward, nl_forward, rnl_forward, se_forward, ChainBlock, FthetaSpec, NlBlock,
    RnlBlock, SeBlock,
};
use rnl_core::reference::{compare, nl_reference, rnl_reference, se_reference};
use rnl_core::rng::Rng;
use rnl_core::similarity::SimilarityForm;
use rnl_core::tensor::{FeatureClip, Tensor};

fn random_clip(t: usize, h: usize, w: usize, c: usize, seed: u64) -> FeatureClip<f64> {
    let mut rng = Rng::new(seed);
    let data: Vec<f64> = (0..t * h * w * c).map(|_| rng.uniform(1.0)).collect();
    FeatureClip::new(Tensor::new(vec![t, h, w, c], data).unwrap()).unwrap()
}

#[test]
fn rnl_matrix_form_matches_pair_loop_all_forms_and_modes() {
    let specs = [
        FthetaSpec::conv(3, 3, 3),
        FthetaSpec::pooling(AggregationMode::AvgPool, 3, 3, 3),
        FthetaSpec::pooling(AggregationMode::MaxPool, 3, 3, 3),
    ];
    for form in SimilarityForm::ALL {
        for ftheta in specs {
            for seed in 0..5u64 {
                let x = random_clip(2, 4, 4, 8, 200 + seed);
                let block =
                    RnlBlock::<f64>::randomized(8, 2, form, ftheta, true, 300 + seed).unwrap();
                let matrix = rnl_forward(&x, &block).unwrap();
                let naive = rnl_reference(&x, &block).unwrap();
                let cmp = compare(&matrix.z, &naive);
                assert!(
                    cmp.within(1e-5),
                    "{form:?}/{:?} seed {seed}: rel {} abs {}",
                    ftheta.mode,
                    cmp.max_rel_err,
                    cmp.max_abs_err
                );
            }
        }
    }
}

#[test]
fn rnl_with_wider_kernel_matches_pair_loop() {
    let x = random_clip(2, 6, 6, 8, 400);
    for form in SimilarityForm::ALL {
        let block =
            RnlBlock::<f64>::randomized(8, 2, form, FthetaSpec::conv(3, 7, 7), true, 401)
                .unwrap();
        let cmp = compare(
            &rnl_forward(&x, &block).unwrap().z,
            &rnl_reference(&x, &block).unwrap(),
        );
        assert!(cmp.within(1e-5), "{form:?}: rel {}", cmp.max_rel_err);
    }
}

#[test]
fn nl_matrix_form_matches_pair_loop() {
    for seed in 0..5u64 {
        let x = random_clip(2, 4, 4, 8, 500 + seed);
        let block = NlBlock::<f64>::randomized(8, 2, true, 600 + seed).unwrap();
        let matrix = nl_forward(&x, &block).unwrap();
        let naive = nl_reference(&x, &block).unwrap();
        let cmp = compare(&matrix.z, &naive);
        assert!(cmp.within(1e-5), "seed {seed}: rel {}", cmp.max_rel_err);
    }
}

#[test]
fn se_matches_scalar_loop() {
    for seed in 0..5u64 {
        let x = random_clip(2, 4, 4, 8, 700 + seed);
        let block = SeBlock::<f64>::randomized(8, 2, 800 + seed).unwrap();
        let cmp = compare(
            &se_forward(&x, &block).unwrap().z,
            &se_reference(&x, &block).unwrap(),
        );
        assert!(cmp.within(1e-7), "seed {seed}: rel {}", cmp.max_rel_err);
    }
}

#[test]
fn chain_matches_composed_references() {
    let x = random_clip(2, 3, 3, 8, 900);
    let block = ChainBlock::<f64>::randomized(
        8,
        2,
        SimilarityForm::Gaussian,
        FthetaSpec::conv(1, 3, 3),
        true,
        901,
    )
    .unwrap();
    let composed = chain_forward(&x, &block).unwrap();
    let se_ref = se_reference(&x, &block.se).unwrap();
    let rnl_ref = rnl_reference(&se_ref, &block.rnl).unwrap();
    let cmp = compare(&composed.z, &rnl_ref);
    assert!(cmp.within(1e-5), "rel {}", cmp.max_rel_err);
}

#[test]
fn attention_row_matches_pair_loop_weights() {
    // The retained affinity row is exactly the weight vector the naive loop
    // applies at that reference position.
    let x = random_clip(2, 3, 3, 8, 1000);
    let block = RnlBlock::<f64>::randomized(
        8,
        2,
        SimilarityForm::Gaussian,
        FthetaSpec::conv(3, 3, 3),
        false,
        1001,
    )
    .unwrap();
    let out = rnl_forward(&x, &block).unwrap();
    let affinity = out.affinity.unwrap();

    // Recompute one row's weights the literal way.
    let g = x.conv1x1(&block.wg, None).unwrap();
    let kernel =
        rnl_core::aggregation::RegionKernel::conv(block.kernel_weights.clone().unwrap(), None)
            .unwrap();
    let e = rnl_core::aggregation::aggregate(&g, &kernel).unwrap().flatten();
    let p = x.positions();
    let m = e.shape()[1];
    let i = 7;
    let mut raw = vec![0.0f64; p];
    for j in 0..p {
        let dot: f64 = (0..m)
            .map(|k| e.data()[i * m + k] * e.data()[j * m + k])
            .sum();
        raw[j] = dot.exp();
    }
    let denom: f64 = raw.iter().sum();
    let map = affinity.attention_row(i, (2, 3, 3)).unwrap();
    for (j, v) in map.tensor().iter_f64().enumerate() {
        let expect = raw[j] / denom;
        let rel = (v - expect).abs() / expect.abs().max(1e-8);
        assert!(rel <= 1e-10, "row weight {j}: {v} vs {expect}");
    }
}

#[test]
fn single_position_clip_trivially_agrees() {
    let x = random_clip(1, 1, 1, 4, 1100);
    for form in SimilarityForm::ALL {
        let block =
            RnlBlock::<f64>::randomized(4, 2, form, FthetaSpec::conv(1, 1, 1), true, 1101)
                .unwrap();
        let cmp = compare(
            &rnl_forward(&x, &block).unwrap().z,
            &rnl_reference(&x, &block).unwrap(),
        );
        assert!(cmp.within(1e-10));
    }
}
