//! Declarative backbone description, shape propagation, and analytic
//! FLOP/parameter accounting.
//!
//! Conventions: one multiply-accumulate counts as one FLOP; convolutions are
//! bias-free and followed by a batch norm contributing two learnable
//! parameters per channel; elementwise ops, poolings and softmax are not
//! counted as FLOPs. The attention-block FLOP counts include the two PxP
//! affinity matrix products, so they exceed figures that count only the
//! pointwise convolutions; arch files may carry `reported` annotations and
//! the cost report keeps both visible.

use std::fmt::Write as _;

use crate::aggregation::AggregationMode;
use crate::blocks::BlockKind;
use crate::error::{argument, Error, Result};
use crate::similarity::SimilarityForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel3 {
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Kernel3 {
    pub fn volume(&self) -> u64 {
        (self.kt * self.kh * self.kw) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride3 {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn positions(&self) -> u64 {
        (self.t * self.h * self.w) as u64
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.t, self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOp {
    Conv {
        kernel: Kernel3,
        out_channels: usize,
        stride: Stride3,
    },
    MaxPool {
        kernel: Kernel3,
        stride: Stride3,
    },
    /// Residual bottleneck triple (1x1x1 -> kernel -> 1x1x1) repeated;
    /// the stated stride applies to the first repeat.
    Bottleneck {
        kernel: Kernel3,
        mid_channels: usize,
        out_channels: usize,
        stride: Stride3,
        repeat: usize,
    },
}

/// Attention blocks inserted after residual blocks of a stage, all
/// operating at the stage's output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub kind: BlockKind,
    pub count: usize,
    /// Explicit repeat indices; empty means evenly spaced.
    pub positions: Vec<usize>,
    pub form: SimilarityForm,
    pub ftheta_mode: AggregationMode,
    pub ftheta_kernel: Kernel3,
    pub ftheta_bias: bool,
    pub reduction: usize,
}

impl Insertion {
    pub fn new(kind: BlockKind, count: usize) -> Insertion {
        Insertion {
            kind,
            count,
            positions: Vec::new(),
            form: SimilarityForm::Gaussian,
            ftheta_mode: AggregationMode::ChannelWiseConv,
            ftheta_kernel: Kernel3 { kt: 3, kh: 7, kw: 7 },
            ftheta_bias: false,
            reduction: 2,
        }
    }

    /// Evenly spaced default: block i goes after repeat floor(i*repeat/count).
    pub fn resolved_positions(&self, repeat: usize) -> Vec<usize> {
        if !self.positions.is_empty() {
            return self.positions.clone();
        }
        (0..self.count).map(|i| i * repeat / self.count.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub ops: Vec<StageOp>,
    pub insertions: Vec<Insertion>,
    /// Temporal-shift modules embedded in the stage's convolutions;
    /// zero parameters and zero MACs, recorded for architecture fidelity.
    pub tsm: bool,
}

/// Externally reported cost figures carried by an arch file for comparison
/// against the analytic count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportedCost {
    pub params: Option<f64>,
    pub flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub stages: Vec<Stage>,
    pub classes: usize,
    pub reported: ReportedCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub name: String,
    pub output: Shape4,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub stages: Vec<StageCost>,
    pub classifier_params: u64,
    pub classifier_flops: u64,
    pub total_params: u64,
    pub total_flops: u64,
    pub reported: ReportedCost,
}

impl ArchSpec {
    /// Attention-free ResNet-50 TSM backbone: 1x7x7 stem, 1x3x3 max pool,
    /// bottleneck stages repeated 3/4/6/3, 400-way classifier.
    pub fn baseline() -> ArchSpec {
        let stage = |name: &str, op: StageOp, tsm: bool| Stage {
            name: name.to_string(),
            ops: vec![op],
            insertions: Vec::new(),
            tsm,
        };
        ArchSpec {
            name: "rnl-tsm-r50".to_string(),
            stages: vec![
                stage(
                    "conv1",
                    StageOp::Conv {
                        kernel: Kernel3 { kt: 1, kh: 7, kw: 7 },
                        out_channels: 64,
                        stride: Stride3 { t: 1, h: 2, w: 2 },
                    },
                    false,
                ),
                stage(
                    "pool1",
                    StageOp::MaxPool {
                        kernel: Kernel3 { kt: 1, kh: 3, kw: 3 },
                        stride: Stride3 { t: 1, h: 2, w: 2 },
                    },
                    false,
                ),
                stage(
                    "res2",
                    StageOp::Bottleneck {
                        kernel: Kernel3 { kt: 1, kh: 3, kw: 3 },
                        mid_channels: 64,
                        out_channels: 256,
                        stride: Stride3 { t: 1, h: 1, w: 1 },
                        repeat: 3,
                    },
                    true,
                ),
                stage(
                    "res3",
                    StageOp::Bottleneck {
                        kernel: Kernel3 { kt: 1, kh: 3, kw: 3 },
                        mid_channels: 128,
                        out_channels: 512,
                        stride: Stride3 { t: 1, h: 2, w: 2 },
                        repeat: 4,
                    },
                    true,
                ),
                stage(
                    "res4",
                    StageOp::Bottleneck {
                        kernel: Kernel3 { kt: 1, kh: 3, kw: 3 },
                        mid_channels: 256,
                        out_channels: 1024,
                        stride: Stride3 { t: 1, h: 2, w: 2 },
                        repeat: 6,
                    },
                    true,
                ),
                stage(
                    "res5",
                    StageOp::Bottleneck {
                        kernel: Kernel3 { kt: 1, kh: 3, kw: 3 },
                        mid_channels: 512,
                        out_channels: 2048,
                        stride: Stride3 { t: 1, h: 2, w: 2 },
                        repeat: 3,
                    },
                    true,
                ),
            ],
            classes: 400,
            reported: ReportedCost::default(),
        }
    }

    /// The default network: the baseline with gaussian RNL blocks inserted,
    /// two in res3 and three in res4.
    pub fn table1() -> ArchSpec {
        let mut spec = ArchSpec::baseline();
        spec.with_insertion("res3", Insertion::new(BlockKind::Rnl, 2))
            .expect("res3 exists");
        spec.with_insertion("res4", Insertion::new(BlockKind::Rnl, 3))
            .expect("res4 exists");
        spec
    }

    pub fn with_insertion(&mut self, stage: &str, insertion: Insertion) -> Result<&mut Self> {
        let stage = self
            .stages
            .iter_mut()
            .find(|s| s.name == stage)
            .ok_or_else(|| argument(format!("no stage named '{stage}'")))?;
        stage.insertions.push(insertion);
        Ok(self)
    }
}

fn divide_extent(stage: &str, axis: &str, extent: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(argument(format!("stage {stage}: zero {axis} stride")));
    }
    if !extent.is_multiple_of(stride) {
        return Err(Error::Dimension(format!(
            "stage {stage}: {axis} extent {extent} not divisible by stride {stride}"
        )));
    }
    Ok(extent / stride)
}

fn apply_stride(stage: &str, shape: Shape4, stride: Stride3, c: usize) -> Result<Shape4> {
    Ok(Shape4 {
        t: divide_extent(stage, "temporal", shape.t, stride.t)?,
        h: divide_extent(stage, "height", shape.h, stride.h)?,
        w: divide_extent(stage, "width", shape.w, stride.w)?,
        c,
    })
}

/// Output shape of every stage in order, with same-padding arithmetic:
/// strided ops require divisible extents and divide them, channel counts
/// come from the ops.
pub fn propagate_shapes(spec: &ArchSpec, input: Shape4) -> Result<Vec<(String, Shape4)>> {
    let mut shape = input;
    let mut out = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        for op in &stage.ops {
            shape = match op {
                StageOp::Conv { out_channels, stride, .. } => {
                    apply_stride(&stage.name, shape, *stride, *out_channels)?
                }
                StageOp::MaxPool { stride, .. } => {
                    apply_stride(&stage.name, shape, *stride, shape.c)?
                }
                StageOp::Bottleneck { out_channels, stride, .. } => {
                    apply_stride(&stage.name, shape, *stride, *out_channels)?
                }
            };
        }
        out.push((stage.name.clone(), shape));
    }
    Ok(out)
}

/// Parameters and FLOPs of one attention block at the given shape.
pub fn block_cost(insertion: &Insertion, shape: Shape4) -> (u64, u64) {
    let c = shape.c as u64;
    let m = c / insertion.reduction as u64;
    let p = shape.positions();
    let bn_full = 2 * c;
    let kernel_params = crate::aggregation::kernel_param_count(
        insertion.ftheta_mode,
        insertion.ftheta_kernel.kt,
        insertion.ftheta_kernel.kh,
        insertion.ftheta_kernel.kw,
        m as usize,
        insertion.ftheta_bias,
    );
    let kernel_flops = match insertion.ftheta_mode {
        AggregationMode::ChannelWiseConv => insertion.ftheta_kernel.volume() * m * p,
        _ => 0,
    };
    match insertion.kind {
        BlockKind::Nl => (4 * c * m + bn_full, 4 * c * m * p + 2 * p * p * m),
        BlockKind::Rnl => (
            2 * c * m + kernel_params + bn_full,
            2 * c * m * p + kernel_flops + 2 * p * p * m,
        ),
        BlockKind::Se => (2 * c * m + 2 * m, 2 * c * m),
        BlockKind::Chain => {
            let (sp, sf) = block_cost(
                &Insertion { kind: BlockKind::Se, ..insertion.clone() },
                shape,
            );
            let (rp, rf) = block_cost(
                &Insertion { kind: BlockKind::Rnl, ..insertion.clone() },
                shape,
            );
            (sp + rp, sf + rf)
        }
    }
}

/// Parameter and FLOP ledger for the whole architecture on the given input.
pub fn count_cost(spec: &ArchSpec, input: Shape4) -> Result<CostReport> {
    let mut shape = input;
    let mut stages = Vec::with_capacity(spec.stages.len());
    let mut total_params = 0u64;
    let mut total_flops = 0u64;

    for stage in &spec.stages {
        let mut params = 0u64;
        let mut flops = 0u64;
        for op in &stage.ops {
            match op {
                StageOp::Conv { kernel, out_channels, stride } => {
                    let out = apply_stride(&stage.name, shape, *stride, *out_channels)?;
                    let weights = kernel.volume() * shape.c as u64 * *out_channels as u64;
                    params += weights + 2 * *out_channels as u64;
                    flops += weights * out.positions();
                    shape = out;
                }
                StageOp::MaxPool { stride, .. } => {
                    shape = apply_stride(&stage.name, shape, *stride, shape.c)?;
                }
                StageOp::Bottleneck { kernel, mid_channels, out_channels, stride, repeat } => {
                    let mid = *mid_channels as u64;
                    let out_c = *out_channels as u64;
                    for rep in 0..*repeat {
                        let cin = shape.c as u64;
                        let out = if rep == 0 {
                            apply_stride(&stage.name, shape, *stride, *out_channels)?
                        } else {
                            Shape4 { c: *out_channels, ..shape }
                        };
                        // 1x1x1 reduce at input resolution.
                        params += cin * mid + 2 * mid;
                        flops += cin * mid * shape.positions();
                        // kernel conv at output resolution (stride lives here).
                        let kw = kernel.volume() * mid * mid;
                        params += kw + 2 * mid;
                        flops += kw * out.positions();
                        // 1x1x1 expand.
                        params += mid * out_c + 2 * out_c;
                        flops += mid * out_c * out.positions();
                        // projection shortcut on the first repeat.
                        if rep == 0 && (cin != out_c || stride.t * stride.h * stride.w != 1) {
                            params += cin * out_c + 2 * out_c;
                            flops += cin * out_c * out.positions();
                        }
                        shape = out;
                    }
                }
            }
        }
        for insertion in &stage.insertions {
            let (bp, bf) = block_cost(insertion, shape);
            params += bp * insertion.count as u64;
            flops += bf * insertion.count as u64;
        }
        total_params += params;
        total_flops += flops;
        stages.push(StageCost {
            name: stage.name.clone(),
            output: shape,
            params,
            flops,
        });
    }

    let classifier_params = if spec.classes > 0 {
        shape.c as u64 * spec.classes as u64 + spec.classes as u64
    } else {
        0
    };
    let classifier_flops = shape.c as u64 * spec.classes as u64;
    total_params += classifier_params;
    total_flops += classifier_flops;

    Ok(CostReport {
        stages,
        classifier_params,
        classifier_flops,
        total_params,
        total_flops,
        reported: spec.reported,
    })
}

// ---------------------------------------------------------------------------
// Structured-text format
// ---------------------------------------------------------------------------

fn kernel_token(k: Kernel3) -> String {
    format!("{}x{}x{}", k.kt, k.kh, k.kw)
}

fn stride_token(s: Stride3) -> String {
    format!("{},{},{}", s.t, s.h, s.w)
}

/// Canonical textual form; `parse_arch(emit_arch(spec)) == spec`.
pub fn emit_arch(spec: &ArchSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "arch {}", spec.name);
    let _ = writeln!(out, "classes {}", spec.classes);
    for stage in &spec.stages {
        for op in &stage.ops {
            match op {
                StageOp::Conv { kernel, out_channels, stride } => {
                    let _ = write!(
                        out,
                        "stage {} conv {} {} stride {}",
                        stage.name,
                        kernel_token(*kernel),
                        out_channels,
                        stride_token(*stride)
                    );
                }
                StageOp::MaxPool { kernel, stride } => {
                    let _ = write!(
                        out,
                        "stage {} maxpool {} stride {}",
                        stage.name,
                        kernel_token(*kernel),
                        stride_token(*stride)
                    );
                }
                StageOp::Bottleneck { kernel, mid_channels, out_channels, stride, repeat } => {
                    let _ = write!(
                        out,
                        "stage {} bottleneck {} mid {} out {} stride {} repeat {}",
                        stage.name,
                        kernel_token(*kernel),
                        mid_channels,
                        out_channels,
                        stride_token(*stride),
                        repeat
                    );
                }
            }
            if stage.tsm {
                let _ = write!(out, " tsm");
            }
            out.push('\n');
        }
        for ins in &stage.insertions {
            let _ = write!(
                out,
                "insert {} {} count {} form {} ftheta {} {} reduction {}",
                stage.name,
                ins.kind.token(),
                ins.count,
                ins.form.token(),
                ins.ftheta_mode.token(),
                kernel_token(ins.ftheta_kernel),
                ins.reduction
            );
            if ins.ftheta_bias {
                let _ = write!(out, " bias");
            }
            if !ins.positions.is_empty() {
                let tokens: Vec<String> =
                    ins.positions.iter().map(|p| p.to_string()).collect();
                let _ = write!(out, " at {}", tokens.join(","));
            }
            out.push('\n');
        }
    }
    if let Some(p) = spec.reported.params {
        let _ = writeln!(out, "reported params {p}");
    }
    if let Some(f) = spec.reported.flops {
        let _ = writeln!(out, "reported flops {f}");
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_usize(line: usize, token: &str, what: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("invalid {what} '{token}'")))
}

fn parse_kernel(line: usize, token: &str) -> Result<Kernel3> {
    let parts: Vec<&str> = token.split('x').collect();
    if parts.len() != 3 {
        return Err(parse_err(line, format!("kernel '{token}' must be KTxKHxKW")));
    }
    Ok(Kernel3 {
        kt: parse_usize(line, parts[0], "kernel extent")?,
        kh: parse_usize(line, parts[1], "kernel extent")?,
        kw: parse_usize(line, parts[2], "kernel extent")?,
    })
}

fn parse_stride(line: usize, token: &str) -> Result<Stride3> {
    let parts: Vec<&str> = token.split(',').collect();
    if parts.len() != 3 {
        return Err(parse_err(line, format!("stride '{token}' must be T,H,W")));
    }
    Ok(Stride3 {
        t: parse_usize(line, parts[0], "stride")?,
        h: parse_usize(line, parts[1], "stride")?,
        w: parse_usize(line, parts[2], "stride")?,
    })
}

/// "24.33M", "32.89G", "1.5K" or a plain number, as a raw count.
fn parse_magnitude(line: usize, token: &str) -> Result<f64> {
    let (digits, mult) = match token.chars().last() {
        Some('K') => (&token[..token.len() - 1], 1e3),
        Some('M') => (&token[..token.len() - 1], 1e6),
        Some('G') => (&token[..token.len() - 1], 1e9),
        _ => (token, 1.0),
    };
    digits
        .parse::<f64>()
        .map(|v| v * mult)
        .map_err(|_| parse_err(line, format!("invalid magnitude '{token}'")))
}

/// Parse the structured-text architecture format. Errors carry the 1-based
/// line number of the offending line.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut spec = ArchSpec {
        name: String::new(),
        stages: Vec::new(),
        classes: 0,
        reported: ReportedCost::default(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "arch" => {
                if tokens.len() != 2 {
                    return Err(parse_err(line_no, "expected: arch <name>"));
                }
                spec.name = tokens[1].to_string();
            }
            "classes" => {
                if tokens.len() != 2 {
                    return Err(parse_err(line_no, "expected: classes <count>"));
                }
                spec.classes = parse_usize(line_no, tokens[1], "class count")?;
            }
            "stage" => {
                spec.stages.push(parse_stage_line(line_no, &tokens)?);
            }
            "insert" => {
                if tokens.len() < 3 {
                    return Err(parse_err(
                        line_no,
                        "expected: insert <stage> <kind> count <n> [...]",
                    ));
                }
                let stage_name = tokens[1];
                let insertion = parse_insert_line(line_no, &tokens)?;
                let stage = spec
                    .stages
                    .iter_mut()
                    .find(|s| s.name == stage_name)
                    .ok_or_else(|| {
                        parse_err(line_no, format!("unknown stage '{stage_name}'"))
                    })?;
                stage.insertions.push(insertion);
            }
            "reported" => {
                if tokens.len() != 3 {
                    return Err(parse_err(line_no, "expected: reported <params|flops> <value>"));
                }
                let value = parse_magnitude(line_no, tokens[2])?;
                match tokens[1] {
                    "params" => spec.reported.params = Some(value),
                    "flops" => spec.reported.flops = Some(value),
                    other => {
                        return Err(parse_err(
                            line_no,
                            format!("unknown reported field '{other}'"),
                        ))
                    }
                }
            }
            other => {
                return Err(parse_err(line_no, format!("unknown directive '{other}'")));
            }
        }
    }
    Ok(spec)
}

fn parse_stage_line(line_no: usize, tokens: &[&str]) -> Result<Stage> {
    if tokens.len() < 3 {
        return Err(parse_err(line_no, "expected: stage <name> <op> ..."));
    }
    let name = tokens[1].to_string();
    let mut tsm = false;
    let mut rest: Vec<&str> = tokens[3..].to_vec();
    if rest.last() == Some(&"tsm") {
        tsm = true;
        rest.pop();
    }
    let op = match tokens[2] {
        "conv" => {
            if rest.len() != 4 || rest[2] != "stride" {
                return Err(parse_err(
                    line_no,
                    "expected: stage <name> conv KTxKHxKW <channels> stride T,H,W",
                ));
            }
            StageOp::Conv {
                kernel: parse_kernel(line_no, rest[0])?,
                out_channels: parse_usize(line_no, rest[1], "channel count")?,
                stride: parse_stride(line_no, rest[3])?,
            }
        }
        "maxpool" => {
            if rest.len() != 3 || rest[1] != "stride" {
                return Err(parse_err(
                    line_no,
                    "expected: stage <name> maxpool KTxKHxKW stride T,H,W",
                ));
            }
            StageOp::MaxPool {
                kernel: parse_kernel(line_no, rest[0])?,
                stride: parse_stride(line_no, rest[2])?,
            }
        }
        "bottleneck" => {
            if rest.len() != 9
                || rest[1] != "mid"
                || rest[3] != "out"
                || rest[5] != "stride"
                || rest[7] != "repeat"
            {
                return Err(parse_err(
                    line_no,
                    "expected: stage <name> bottleneck KTxKHxKW mid <c> out <c> stride T,H,W repeat <n>",
                ));
            }
            StageOp::Bottleneck {
                kernel: parse_kernel(line_no, rest[0])?,
                mid_channels: parse_usize(line_no, rest[2], "channel count")?,
                out_channels: parse_usize(line_no, rest[4], "channel count")?,
                stride: parse_stride(line_no, rest[6])?,
                repeat: parse_usize(line_no, rest[8], "repeat count")?,
            }
        }
        other => return Err(parse_err(line_no, format!("unknown stage op '{other}'"))),
    };
    Ok(Stage {
        name,
        ops: vec![op],
        insertions: Vec::new(),
        tsm,
    })
}

fn parse_insert_line(line_no: usize, tokens: &[&str]) -> Result<Insertion> {
    let kind = BlockKind::parse(tokens[2])
        .map_err(|e| parse_err(line_no, e.to_string()))?;
    let mut insertion = Insertion::new(kind, 0);
    let mut i = 3;
    let mut saw_count = false;
    while i < tokens.len() {
        match tokens[i] {
            "count" => {
                insertion.count = parse_usize(line_no, tokens[i + 1], "count")?;
                saw_count = true;
                i += 2;
            }
            "form" => {
                insertion.form = SimilarityForm::parse(tokens[i + 1])
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                i += 2;
            }
            "ftheta" => {
                if i + 2 >= tokens.len() {
                    return Err(parse_err(line_no, "ftheta needs a mode and a kernel"));
                }
                insertion.ftheta_mode = AggregationMode::parse(tokens[i + 1])
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                insertion.ftheta_kernel = parse_kernel(line_no, tokens[i + 2])?;
                i += 3;
            }
            "reduction" => {
                insertion.reduction = parse_usize(line_no, tokens[i + 1], "reduction")?;
                i += 2;
            }
            "bias" => {
                insertion.ftheta_bias = true;
                i += 1;
            }
            "at" => {
                insertion.positions = tokens[i + 1]
                    .split(',')
                    .map(|p| parse_usize(line_no, p, "position"))
                    .collect::<Result<Vec<usize>>>()?;
                i += 2;
            }
            other => {
                return Err(parse_err(line_no, format!("unknown insert clause '{other}'")));
            }
        }
        if i > tokens.len() {
            return Err(parse_err(line_no, "dangling insert clause"));
        }
    }
    if !saw_count || insertion.count == 0 {
        return Err(parse_err(line_no, "insert needs a positive count"));
    }
    Ok(insertion)
}
