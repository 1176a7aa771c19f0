//! Subcommand implementations. Each returns the process exit code; hard
//! failures propagate as errors and are printed by `main`.

use std::path::{Path, PathBuf};

use rnl_core::aggregation::AggregationMode;
use rnl_core::archcost::{self, ArchSpec, Shape4};
use rnl_core::blocks::{
    chain_forward, nl_forward, rnl_forward, se_forward, BlockKind, BlockOutput, BlockVars,
    ChainBlock, FthetaSpec, NlBlock, RnlBlock, SeBlock,
};
use rnl_core::element::{Dtype, Element};
use rnl_core::reference::{compare, nl_reference, rnl_reference, se_reference};
use rnl_core::rng::Rng;
use rnl_core::similarity::SimilarityForm;
use rnl_core::tensor::{FeatureClip, Tensor};
use rnl_core::{io, Error, Result};

use crate::config::Config;
use crate::pgm::{map_csv, MapImage};
use crate::synth::{synthesize, MovingDot, Pattern, Synthesized};

fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

fn precision(cfg: &Config) -> Result<Dtype> {
    match cfg.get("precision") {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(argument(format!(
            "config field precision: expected f32 or f64, got '{other}'"
        ))),
    }
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.get("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn pattern(cfg: &Config, seed: u64) -> Result<Pattern> {
    match cfg.get("input.pattern") {
        "random" => Ok(Pattern::Random { seed }),
        "constant" => Ok(Pattern::Constant {
            value: cfg.parse::<f64>("input.value")?,
        }),
        "moving-dot" => {
            let shape = cfg.parse_shape("input.shape")?;
            let velocity = cfg.parse_pair("input.velocity")?;
            let start = if cfg.is_set("input.start") {
                cfg.parse_pair("input.start")?
            } else {
                ((shape[1] / 4) as i64, (shape[2] / 4) as i64)
            };
            Ok(Pattern::MovingDot(MovingDot {
                radius: cfg.parse::<f64>("input.radius")?,
                velocity,
                start,
                amplitude: cfg.parse::<f64>("input.amplitude")?,
            }))
        }
        other => Err(argument(format!(
            "config field input.pattern: unknown pattern '{other}'"
        ))),
    }
}

fn load_or_synthesize<E: Element>(cfg: &Config, seed: u64) -> Result<Synthesized<E>> {
    if cfg.is_set("input.path") {
        let tensor = io::read_tensor(cfg.get("input.path"))?;
        let clip = FeatureClip::new(tensor.cast::<E>())?;
        return Ok(Synthesized { clip, mask: None });
    }
    let shape = cfg.parse_shape("input.shape")?;
    if shape.len() != 4 {
        return Err(argument(format!(
            "config field input.shape: a clip is TxHxWxC, got {} extents",
            shape.len()
        )));
    }
    synthesize(&shape, &pattern(cfg, seed)?)
}

fn ftheta_spec(cfg: &Config) -> Result<FthetaSpec> {
    Ok(FthetaSpec {
        mode: AggregationMode::parse(cfg.get("ftheta.mode"))?,
        kt: cfg.parse::<usize>("ftheta.kt")?,
        kh: cfg.parse::<usize>("ftheta.kh")?,
        kw: cfg.parse::<usize>("ftheta.kw")?,
        bias: cfg.parse_bool("ftheta.bias")?,
    })
}

pub enum AnyBlock<E: Element> {
    Rnl(RnlBlock<E>),
    Nl(NlBlock<E>),
    Se(SeBlock<E>),
    Chain(ChainBlock<E>),
}

impl<E: Element> AnyBlock<E> {
    pub fn kind(&self) -> BlockKind {
        match self {
            AnyBlock::Rnl(_) => BlockKind::Rnl,
            AnyBlock::Nl(_) => BlockKind::Nl,
            AnyBlock::Se(_) => BlockKind::Se,
            AnyBlock::Chain(_) => BlockKind::Chain,
        }
    }

    pub fn forward(&self, x: &FeatureClip<E>) -> Result<BlockOutput<E>> {
        match self {
            AnyBlock::Rnl(b) => rnl_forward(x, b),
            AnyBlock::Nl(b) => nl_forward(x, b),
            AnyBlock::Se(b) => se_forward(x, b),
            AnyBlock::Chain(b) => chain_forward(x, b),
        }
    }

    pub fn leaf_tensors(&self) -> Vec<(String, Tensor<E>)> {
        match self {
            AnyBlock::Rnl(b) => b.leaf_tensors(),
            AnyBlock::Nl(b) => b.leaf_tensors(),
            AnyBlock::Se(b) => b.leaf_tensors(),
            AnyBlock::Chain(b) => b.leaf_tensors(),
        }
    }

    pub fn build(
        &self,
        tape: &mut rnl_core::autodiff::Tape<E>,
        x: rnl_core::autodiff::VarId,
        leaves: &[rnl_core::autodiff::VarId],
    ) -> Result<BlockVars> {
        match self {
            AnyBlock::Rnl(b) => b.build(tape, x, leaves),
            AnyBlock::Nl(b) => b.build(tape, x, leaves),
            AnyBlock::Se(b) => b.build(tape, x, leaves),
            AnyBlock::Chain(b) => b.build(tape, x, leaves),
        }
    }
}

fn build_block<E: Element>(
    cfg: &Config,
    channels: usize,
    seed: u64,
    randomized: bool,
) -> Result<AnyBlock<E>> {
    let kind = BlockKind::parse(cfg.get("block.kind"))?;
    if cfg.is_set("block.channels") {
        let declared = cfg.parse::<usize>("block.channels")?;
        if declared != channels {
            return Err(Error::Dimension(format!(
                "config field block.channels: declared {declared}, input carries {channels}"
            )));
        }
    }
    let reduction = cfg.parse::<usize>("block.reduction")?;
    let form = SimilarityForm::parse(cfg.get("block.form"))?;
    let ftheta = ftheta_spec(cfg)?;
    let residual_bn = cfg.parse_bool("block.residual_bn")?;
    let mut block = match kind {
        BlockKind::Rnl => AnyBlock::Rnl(if randomized {
            RnlBlock::randomized(channels, reduction, form, ftheta, residual_bn, seed)?
        } else {
            RnlBlock::seeded(channels, reduction, form, ftheta, residual_bn, seed)?
        }),
        BlockKind::Nl => AnyBlock::Nl(if randomized {
            NlBlock::randomized(channels, reduction, residual_bn, seed)?
        } else {
            NlBlock::seeded(channels, reduction, residual_bn, seed)?
        }),
        BlockKind::Se => AnyBlock::Se(if randomized {
            SeBlock::randomized(channels, reduction, seed)?
        } else {
            SeBlock::seeded(channels, reduction, seed)?
        }),
        BlockKind::Chain => AnyBlock::Chain(if randomized {
            ChainBlock::randomized(channels, reduction, form, ftheta, residual_bn, seed)?
        } else {
            ChainBlock::seeded(channels, reduction, form, ftheta, residual_bn, seed)?
        }),
    };
    if cfg.is_set("weights.dir") {
        load_weight_overrides(&mut block, Path::new(cfg.get("weights.dir")))?;
    }
    Ok(block)
}

/// Override block parameters from `<dir>/<leaf-name>.rnlt` files when
/// present; shapes must match the seeded tensors they replace.
fn load_weight_overrides<E: Element>(block: &mut AnyBlock<E>, dir: &Path) -> Result<()> {
    let load = |name: &str, slot: &mut Tensor<E>| -> Result<()> {
        let path = dir.join(format!("{name}.rnlt"));
        if !path.exists() {
            return Ok(());
        }
        let loaded = io::read_tensor(&path)?.cast::<E>();
        if loaded.shape() != slot.shape() {
            return Err(Error::Dimension(format!(
                "weight file {} has shape {:?}, block expects {:?}",
                path.display(),
                loaded.shape(),
                slot.shape()
            )));
        }
        *slot = loaded;
        Ok(())
    };
    match block {
        AnyBlock::Rnl(b) => {
            load("wg", &mut b.wg)?;
            load("wz", &mut b.wz)?;
            if let Some(u) = b.kernel_weights.as_mut() {
                load("kernel_weights", u)?;
            }
            if let Some(bias) = b.kernel_bias.as_mut() {
                load("kernel_bias", bias)?;
            }
            if let Some(bn) = b.residual_bn.as_mut() {
                load("bn_gamma", &mut bn.gamma)?;
                load("bn_beta", &mut bn.beta)?;
                load("bn_mean", &mut bn.mean)?;
                load("bn_var", &mut bn.var)?;
            }
        }
        AnyBlock::Nl(b) => {
            load("wtheta", &mut b.wtheta)?;
            load("wphi", &mut b.wphi)?;
            load("wg", &mut b.wg)?;
            load("wz", &mut b.wz)?;
            if let Some(bn) = b.residual_bn.as_mut() {
                load("bn_gamma", &mut bn.gamma)?;
                load("bn_beta", &mut bn.beta)?;
                load("bn_mean", &mut bn.mean)?;
                load("bn_var", &mut bn.var)?;
            }
        }
        AnyBlock::Se(b) => {
            load("w1", &mut b.w1)?;
            load("w2", &mut b.w2)?;
            load("se_bn_gamma", &mut b.bn.gamma)?;
            load("se_bn_beta", &mut b.bn.beta)?;
        }
        AnyBlock::Chain(b) => {
            load("se.w1", &mut b.se.w1)?;
            load("se.w2", &mut b.se.w2)?;
            load("rnl.wg", &mut b.rnl.wg)?;
            load("rnl.wz", &mut b.rnl.wz)?;
            if let Some(u) = b.rnl.kernel_weights.as_mut() {
                load("rnl.kernel_weights", u)?;
            }
        }
    }
    Ok(())
}

fn cast64<E: Element>(t: &Tensor<E>) -> Tensor<f64> {
    let values: Vec<f64> = t.iter_f64().collect();
    Tensor::from_f64_slice(t.shape().to_vec(), &values).expect("same shape")
}

fn clip64<E: Element>(x: &FeatureClip<E>) -> FeatureClip<f64> {
    FeatureClip::new(cast64(x.tensor())).expect("same shape")
}

/// Exact f64 copy of a block's parameters: the reference route sees the very
/// numbers the (possibly f32) matrix route computes with.
fn block64<E: Element>(block: &AnyBlock<E>) -> AnyBlock<f64> {
    let bn64 = |bn: &rnl_core::blocks::BnParams<E>| rnl_core::blocks::BnParams {
        gamma: cast64(&bn.gamma),
        beta: cast64(&bn.beta),
        mean: cast64(&bn.mean),
        var: cast64(&bn.var),
    };
    match block {
        AnyBlock::Rnl(b) => AnyBlock::Rnl(rnl64(b, &bn64)),
        AnyBlock::Nl(b) => AnyBlock::Nl(NlBlock {
            channels: b.channels,
            reduction: b.reduction,
            wtheta: cast64(&b.wtheta),
            wphi: cast64(&b.wphi),
            wg: cast64(&b.wg),
            wz: cast64(&b.wz),
            residual_bn: b.residual_bn.as_ref().map(&bn64),
        }),
        AnyBlock::Se(b) => AnyBlock::Se(se64(b, &bn64)),
        AnyBlock::Chain(b) => AnyBlock::Chain(ChainBlock {
            se: se64(&b.se, &bn64),
            rnl: rnl64(&b.rnl, &bn64),
        }),
    }
}

fn rnl64<E: Element>(
    b: &RnlBlock<E>,
    bn64: &impl Fn(&rnl_core::blocks::BnParams<E>) -> rnl_core::blocks::BnParams<f64>,
) -> RnlBlock<f64> {
    RnlBlock {
        channels: b.channels,
        reduction: b.reduction,
        form: b.form,
        ftheta: b.ftheta,
        wg: cast64(&b.wg),
        wz: cast64(&b.wz),
        kernel_weights: b.kernel_weights.as_ref().map(cast64),
        kernel_bias: b.kernel_bias.as_ref().map(cast64),
        residual_bn: b.residual_bn.as_ref().map(bn64),
    }
}

fn se64<E: Element>(
    b: &SeBlock<E>,
    bn64: &impl Fn(&rnl_core::blocks::BnParams<E>) -> rnl_core::blocks::BnParams<f64>,
) -> SeBlock<f64> {
    SeBlock {
        channels: b.channels,
        reduction: b.reduction,
        w1: cast64(&b.w1),
        w2: cast64(&b.w2),
        bn: bn64(&b.bn),
    }
}

fn reference_forward(block: &AnyBlock<f64>, x: &FeatureClip<f64>) -> Result<FeatureClip<f64>> {
    match block {
        AnyBlock::Rnl(b) => rnl_reference(x, b),
        AnyBlock::Nl(b) => nl_reference(x, b),
        AnyBlock::Se(b) => se_reference(x, b),
        AnyBlock::Chain(b) => {
            let after_se = se_reference(x, &b.se)?;
            rnl_reference(&after_se, &b.rnl)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub fn run(cfg: &Config) -> Result<i32> {
    match precision(cfg)? {
        Dtype::F32 => run_typed::<f32>(cfg),
        Dtype::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<E: Element>(cfg: &Config) -> Result<i32> {
    let seed = cfg.parse::<u64>("seed")?;
    let dir = out_dir(cfg)?;
    let synth = load_or_synthesize::<E>(cfg, seed)?;
    let x = synth.clip;
    let block = build_block::<E>(cfg, x.channels(), seed, false)?;
    let output = block.forward(&x)?;

    println!(
        "run kind={} form={} precision={} seed={seed}",
        block.kind().token(),
        cfg.get("block.form"),
        E::DTYPE
    );
    let (t, h, w, c) = x.dims();
    println!("input shape={t}x{h}x{w}x{c} pattern={}", if cfg.is_set("input.path") {
        "file"
    } else {
        cfg.get("input.pattern")
    });

    let z_path = dir.join("z.rnlt");
    io::write_tensor(&z_path, output.z.tensor())?;
    println!("wrote {}", z_path.display());

    let values: Vec<f64> = output.z.tensor().iter_f64().collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!("z.min = {min}");
    println!("z.max = {max}");
    println!("z.mean = {mean}");

    if let Some(affinity) = &output.affinity {
        let p = affinity.positions();
        let mut row_min = f64::INFINITY;
        let mut row_max = f64::NEG_INFINITY;
        for i in 0..p {
            let sum: f64 = affinity.weights().data()[i * p..(i + 1) * p]
                .iter()
                .map(|v| v.to_f64())
                .sum();
            row_min = row_min.min(sum);
            row_max = row_max.max(sum);
        }
        println!("affinity.rowsum.min = {row_min}");
        println!("affinity.rowsum.max = {row_max}");
        if affinity.form() == SimilarityForm::Gaussian {
            let dev = (row_min - 1.0).abs().max((row_max - 1.0).abs());
            println!("affinity.rowsum.max_dev_from_1 = {dev}");
        }
    }
    if let Some(s) = &output.se_vector {
        let smin = s.iter_f64().fold(f64::INFINITY, f64::min);
        let smax = s.iter_f64().fold(f64::NEG_INFINITY, f64::max);
        println!("se.excitation.min = {smin}");
        println!("se.excitation.max = {smax}");
    }

    let refs = cfg.reference_positions()?;
    if !refs.is_empty() {
        let affinity = output.affinity.as_ref().ok_or_else(|| {
            argument(format!(
                "block kind '{}' retains no affinity; attention maps need nl, rnl or chain",
                block.kind().token()
            ))
        })?;
        for (rt, rh, rw) in refs {
            let index = x.position_index(rt, rh, rw)?;
            let map = affinity.attention_row(index, (t, h, w))?;
            let stem = format!("map_t{rt}_h{rh}_w{rw}");
            let image = MapImage::from_map(&map);
            for name in image.write_frames(&dir, &stem)? {
                println!("wrote {}", dir.join(name).display());
            }
            let csv_path = dir.join(format!("{stem}.csv"));
            std::fs::write(&csv_path, map_csv(&map))?;
            println!("wrote {}", csv_path.display());
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

pub fn oracle(cfg: &Config) -> Result<i32> {
    match precision(cfg)? {
        Dtype::F32 => oracle_typed::<f32>(cfg),
        Dtype::F64 => oracle_typed::<f64>(cfg),
    }
}

fn oracle_typed<E: Element>(cfg: &Config) -> Result<i32> {
    let seed = cfg.parse::<u64>("seed")?;
    let synth = load_or_synthesize::<E>(cfg, seed)?;
    let x = synth.clip;
    let guard = cfg.parse::<usize>("oracle.guard")?;
    if x.positions() > guard {
        return Err(argument(format!(
            "oracle refuses P={} positions (guard {guard}): the pair loop is O(P^2 C)",
            x.positions()
        )));
    }
    let block = build_block::<E>(cfg, x.channels(), seed, true)?;
    let matrix = block.forward(&x)?;
    let naive = reference_forward(&block64(&block), &clip64(&x))?;

    let mut matrix_z = matrix.z;
    if cfg.parse_bool("oracle.corrupt")? {
        // Negative control: a deliberate perturbation must flag a mismatch.
        let mut data = matrix_z.tensor().data().to_vec();
        data[0] = E::from_f64(data[0].to_f64() + 1e-3);
        let shape = matrix_z.tensor().shape().to_vec();
        matrix_z = FeatureClip::new(Tensor::new(shape, data)?)?;
        println!("corrupt = true");
    }

    let tolerance = if cfg.is_set("oracle.tol") {
        cfg.parse::<f64>("oracle.tol")?
    } else if E::DTYPE == Dtype::F64 {
        1e-5
    } else {
        1e-3
    };
    let cmp = compare(&matrix_z, &naive);
    println!(
        "oracle kind={} form={} precision={} seed={seed} positions={}",
        block.kind().token(),
        cfg.get("block.form"),
        E::DTYPE,
        x.positions()
    );
    println!("max_abs_err = {}", cmp.max_abs_err);
    println!("max_rel_err = {}", cmp.max_rel_err);
    println!("tolerance = {tolerance}");
    if cmp.within(tolerance) {
        println!("result: PASS");
        Ok(0)
    } else {
        println!("result: FAIL");
        Ok(1)
    }
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Always runs in f64: central differences at h = 1e-5 are meaningless in
/// single precision.
pub fn gradcheck(cfg: &Config) -> Result<i32> {
    let seed = cfg.parse::<u64>("seed")?;
    let shape = cfg.parse_shape("gradcheck.shape")?;
    if shape.len() != 4 {
        return Err(argument(
            "config field gradcheck.shape: expected TxHxWxC".to_string(),
        ));
    }
    let h = cfg.parse::<f64>("gradcheck.h")?;
    let tolerance = cfg.parse::<f64>("gradcheck.tol")?;
    let channels = shape[3];
    let block = build_block::<f64>(cfg, channels, seed, true)?;

    let mut rng = Rng::new(seed).fork(0x67726164);
    let count: usize = shape.iter().product();
    let x = Tensor::from_f64_slice(
        shape.clone(),
        &(0..count).map(|_| rng.uniform(1.0)).collect::<Vec<_>>(),
    )?;

    let leaf_tensors = block.leaf_tensors();
    let names: Vec<String> = leaf_tensors.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs: Vec<(&str, Tensor<f64>)> = vec![("x", x)];
    for (name, tensor) in names.iter().zip(leaf_tensors.into_iter().map(|(_, t)| t)) {
        inputs.push((name.as_str(), tensor));
    }

    // Project the output onto a fixed random direction so every gradient is
    // well-conditioned.
    let proj_shape = shape.clone();
    let proj_seed = seed ^ 0x636f74;
    let report = rnl_core::autodiff::finite_diff_check(
        |tape, vars| {
            let out = block.build(tape, vars[0], &vars[1..])?;
            let mut prng = Rng::new(proj_seed);
            let pcount: usize = proj_shape.iter().product();
            let weights = Tensor::from_f64_slice(
                proj_shape.clone(),
                &(0..pcount).map(|_| prng.uniform(1.0)).collect::<Vec<_>>(),
            )?;
            let w = tape.constant(weights);
            let weighted = tape.hadamard(out.z, w)?;
            tape.sum_all(weighted)
        },
        &inputs,
        h,
    )?;

    println!(
        "gradcheck kind={} form={} ftheta={} {}x{}x{} shape={} h={h} tol={tolerance} seed={seed} precision=f64",
        block.kind().token(),
        cfg.get("block.form"),
        cfg.get("ftheta.mode"),
        cfg.get("ftheta.kt"),
        cfg.get("ftheta.kh"),
        cfg.get("ftheta.kw"),
        cfg.get("gradcheck.shape"),
    );
    for leaf in &report.leaves {
        println!(
            "leaf {} max_rel_err={} max_abs_err={} skipped={}",
            leaf.name,
            leaf.max_rel_err,
            leaf.max_abs_err,
            leaf.skipped.len()
        );
    }
    if report.passes(tolerance) {
        println!("result: PASS max_rel_err={}", report.max_rel_err);
        Ok(0)
    } else {
        println!("result: FAIL max_rel_err={}", report.max_rel_err);
        Ok(1)
    }
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

pub fn cost(cfg: &Config) -> Result<i32> {
    let spec = if cfg.is_set("cost.arch") {
        let text = std::fs::read_to_string(cfg.get("cost.arch"))?;
        archcost::parse_arch(&text)?
    } else {
        ArchSpec::baseline()
    };
    let extents = cfg.parse_shape("cost.input")?;
    if extents.len() != 4 {
        return Err(argument(
            "config field cost.input: expected TxHxWxC".to_string(),
        ));
    }
    let input = Shape4 {
        t: extents[0],
        h: extents[1],
        w: extents[2],
        c: extents[3],
    };
    let report = archcost::count_cost(&spec, input)?;

    println!("arch {} input {}", spec.name, input);
    println!("{:<12} {:<16} {:>14} {:>16}", "stage", "output", "params", "flops");
    for stage in &report.stages {
        println!(
            "{:<12} {:<16} {:>14} {:>16}",
            stage.name,
            stage.output.to_string(),
            stage.params,
            stage.flops
        );
    }
    println!(
        "{:<12} {:<16} {:>14} {:>16}",
        "classifier", "-", report.classifier_params, report.classifier_flops
    );
    println!(
        "{:<12} {:<16} {:>14} {:>16}",
        "total", "", report.total_params, report.total_flops
    );
    println!(
        "summary: params {:.2}M, flops {:.2}G",
        report.total_params as f64 / 1e6,
        report.total_flops as f64 / 1e9
    );
    if report.reported.params.is_some() || report.reported.flops.is_some() {
        let fmt = |v: Option<f64>, unit: f64, suffix: &str| match v {
            Some(v) => format!("{:.2}{suffix}", v / unit),
            None => "-".to_string(),
        };
        println!(
            "reported: params {}, flops {}",
            fmt(report.reported.params, 1e6, "M"),
            fmt(report.reported.flops, 1e9, "G")
        );
        if let Some(p) = report.reported.params {
            let dev = (report.total_params as f64 - p) / p * 100.0;
            println!("deviation.params = {dev:+.2}%");
        }
        if let Some(f) = report.reported.flops {
            let dev = (report.total_flops as f64 - f) / f * 100.0;
            println!("deviation.flops = {dev:+.2}%");
        }
    }
    if cfg.parse_bool("cost.machine")? {
        println!("machine.arch = {}", spec.name);
        println!("machine.params.total = {}", report.total_params);
        println!("machine.flops.total = {}", report.total_flops);
        for stage in &report.stages {
            println!("machine.stage.{}.output = {}", stage.name, stage.output);
            println!("machine.stage.{}.params = {}", stage.name, stage.params);
            println!("machine.stage.{}.flops = {}", stage.name, stage.flops);
        }
        println!("machine.classifier.params = {}", report.classifier_params);
        println!("machine.classifier.flops = {}", report.classifier_flops);
        if let Some(p) = report.reported.params {
            println!("machine.reported.params = {p}");
        }
        if let Some(f) = report.reported.flops {
            println!("machine.reported.flops = {f}");
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

pub fn gen(cfg: &Config) -> Result<i32> {
    match precision(cfg)? {
        Dtype::F32 => gen_typed::<f32>(cfg),
        Dtype::F64 => gen_typed::<f64>(cfg),
    }
}

fn gen_typed<E: Element>(cfg: &Config) -> Result<i32> {
    let seed = cfg.parse::<u64>("seed")?;
    let dir = out_dir(cfg)?;
    let shape = cfg.parse_shape("input.shape")?;
    let synth = synthesize::<E>(&shape, &pattern(cfg, seed)?)?;
    println!(
        "gen pattern={} shape={} precision={} seed={seed}",
        cfg.get("input.pattern"),
        cfg.get("input.shape"),
        E::DTYPE
    );
    let clip_path = dir.join("clip.rnlt");
    io::write_tensor(&clip_path, synth.clip.tensor())?;
    println!("wrote {}", clip_path.display());
    if let Some(mask) = synth.mask {
        let (t, h, w, _) = synth.clip.dims();
        let values: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let mask_tensor = Tensor::<E>::from_f64_slice(vec![t, h, w, 1], &values)?;
        let mask_path = dir.join("mask.rnlt");
        io::write_tensor(&mask_path, &mask_tensor)?;
        println!("wrote {}", mask_path.display());
    }
    Ok(0)
}
