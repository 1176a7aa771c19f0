//! End-to-end behavior of the `rnl` binary: exit codes, error reporting,
//! config precedence, file formats, and the negative controls.

use std::path::PathBuf;
use std::process::{Command, Output};

use rnl_core::io;
use rnl_core::tensor::Tensor;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rnl-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn rnl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnl"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let out = rnl(&["--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("usage: rnl"));
}

#[test]
fn unknown_subcommand_fails_with_error_line() {
    let out = rnl(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_flag_is_rejected() {
    let out = rnl(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--bogus"));
}

#[test]
fn unknown_config_key_names_the_field() {
    let out = rnl(&["run", "--block.kindd", "rnl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("block.kindd"));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let out = rnl(&["run", "--input.path", "/nonexistent/clip.rnlt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: i/o error"), "{}", stderr(&out));
}

#[test]
fn corrupt_tensor_file_is_a_format_error() {
    let dir = scratch("badmagic");
    let path = dir.join("bad.rnlt");
    std::fs::write(&path, b"XXXX-not-a-tensor").unwrap();
    let out = rnl(&["run", "--input.path", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("format error"), "{}", stderr(&out));
}

#[test]
fn malformed_arch_reports_line_number() {
    let dir = scratch("badarch");
    let path = dir.join("bad.arch");
    std::fs::write(&path, "arch x\nclasses 10\nstage s conv 1x1 8 stride 1,1,1\n").unwrap();
    let out = rnl(&["cost", "--arch", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn empty_arch_reports_zero_totals() {
    let dir = scratch("emptyarch");
    let path = dir.join("empty.arch");
    std::fs::write(&path, "arch empty\nclasses 0\n").unwrap();
    let out = rnl(&["cost", "--arch", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("summary: params 0.00M, flops 0.00G"), "{text}");
}

#[test]
fn cost_on_shipped_backbone_file_prints_expected_params() {
    let arch = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../arch/table1.arch");
    let out = rnl(&[
        "cost",
        "--arch",
        arch.to_str().unwrap(),
        "--input",
        "8x224x224x3",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("summary: params 24.33M"), "{text}");
    assert!(text.contains("reported: params 24.33M"), "{text}");
}

#[test]
fn cost_machine_output_lines() {
    let out = rnl(&["cost", "--machine", "--input", "8x224x224x3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("machine.params.total = 24327632"), "{text}");
    assert!(text.contains("machine.stage.res4.output = 8x14x14x1024"));
}

#[test]
fn oracle_refuses_oversized_inputs() {
    let out = rnl(&["oracle", "--input.shape", "2x50x50x4"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("guard") && err.contains("5000"), "{err}");
}

#[test]
fn oracle_single_position_trivially_passes() {
    let out = rnl(&["oracle", "--input.shape", "1x1x1x4", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("result: PASS"));
}

#[test]
fn oracle_negative_control_exits_nonzero() {
    let out = rnl(&["oracle", "--input.shape", "2x3x3x8", "--seed", "3", "--corrupt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("result: FAIL"));
}

#[test]
fn oracle_all_forms_pass() {
    for form in ["gaussian", "dot", "cosine"] {
        for mode in ["channel-wise-conv", "avg-pool", "max-pool"] {
            let out = rnl(&[
                "oracle",
                "--input.shape",
                "2x3x3x8",
                "--block.form",
                form,
                "--ftheta.mode",
                mode,
                "--ftheta.kt",
                "1",
                "--ftheta.kh",
                "3",
                "--ftheta.kw",
                "3",
            ]);
            assert!(out.status.success(), "{form}/{mode}: {}", stdout(&out));
        }
    }
}

#[test]
fn oracle_chain_and_f32_precision() {
    let out = rnl(&["oracle", "--input.shape", "2x3x3x8", "--block.kind", "chain"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let out32 = rnl(&["oracle", "--input.shape", "2x3x3x8", "--precision", "f32"]);
    assert!(out32.status.success(), "{}", stdout(&out32));
    assert!(stdout(&out32).contains("precision=f32"));
}

#[test]
fn gradcheck_default_block_passes() {
    let out = rnl(&["gradcheck", "--seed", "9"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("result: PASS"));
    assert!(text.contains("leaf x"));
    assert!(text.contains("leaf wg"));
}

#[test]
fn gradcheck_every_block_kind_passes() {
    for kind in ["nl", "se", "chain"] {
        let out = rnl(&["gradcheck", "--block.kind", kind, "--seed", "4"]);
        assert!(out.status.success(), "{kind}: {}", stdout(&out));
    }
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = scratch("config");
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        "seed = 5\n[block]\nform = dot\n[ftheta]\nmode = avg-pool\nkt = 1\nkh = 3\nkw = 3\n",
    )
    .unwrap();
    let out = rnl(&[
        "oracle",
        "--config",
        path.to_str().unwrap(),
        "--input.shape",
        "2x3x3x8",
        "--block.form",
        "cosine", // overrides the file's dot
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("form=cosine"), "{text}");
    assert!(text.contains("seed=5"), "{text}");
}

#[test]
fn invalid_precision_is_rejected() {
    let out = rnl(&["run", "--precision", "f16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("precision"));
}

#[test]
fn se_block_with_map_request_is_an_argument_error() {
    let out = rnl(&[
        "run",
        "--block.kind",
        "se",
        "--input.shape",
        "2x3x3x8",
        "--ref",
        "0,0,0",
        "--out",
        scratch("semap").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("affinity"), "{}", stderr(&out));
}

#[test]
fn channel_mismatch_is_a_dimension_error() {
    let out = rnl(&["run", "--input.shape", "2x3x3x8", "--block.channels", "16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: dimension error"), "{}", stderr(&out));
}

#[test]
fn gen_then_run_round_trips_through_files() {
    let dir = scratch("genrun");
    let gen = rnl(&[
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--input.pattern",
        "constant",
        "--input.value",
        "1.5",
        "--input.shape",
        "2x3x3x4",
    ]);
    assert!(gen.status.success());
    let clip = dir.join("clip.rnlt");
    match io::read_tensor(&clip).unwrap() {
        io::DynTensor::F64(t) => {
            assert_eq!(t.shape(), &[2, 3, 3, 4]);
            assert!(t.iter_f64().all(|v| v == 1.5));
        }
        other => panic!("expected f64 tensor, got {other:?}"),
    }
    let run = rnl(&[
        "run",
        "--input.path",
        clip.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--block.reduction",
        "2",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(dir.join("out/z.rnlt").exists());
}

#[test]
fn gen_f32_writes_f32_tensors() {
    let dir = scratch("genf32");
    let gen = rnl(&[
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--precision",
        "f32",
        "--input.shape",
        "1x2x2x2",
    ]);
    assert!(gen.status.success());
    match io::read_tensor(dir.join("clip.rnlt")).unwrap() {
        io::DynTensor::F32(t) => assert_eq!(t.shape(), &[1, 2, 2, 2]),
        other => panic!("expected f32 tensor, got {other:?}"),
    }
}

#[test]
fn weight_overrides_load_from_rnlt_files() {
    // Zeroing W_z through the weights directory must make the block the
    // identity: the loaded parameters demonstrably reach the forward pass.
    let dir = scratch("weights");
    let wz = Tensor::<f64>::zeros(vec![4, 8]).unwrap();
    io::write_tensor(dir.join("wz.rnlt"), &wz).unwrap();

    let out_dir = dir.join("out");
    let run = rnl(&[
        "run",
        "--input.shape",
        "2x3x3x8",
        "--block.residual_bn",
        "false",
        "--weights.dir",
        dir.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "13",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));

    let gen = rnl(&[
        "gen",
        "--input.shape",
        "2x3x3x8",
        "--out",
        dir.join("gen").to_str().unwrap(),
        "--seed",
        "13",
    ]);
    assert!(gen.status.success());
    let z = io::read_tensor(out_dir.join("z.rnlt")).unwrap();
    let x = io::read_tensor(dir.join("gen/clip.rnlt")).unwrap();
    assert_eq!(z, x, "zeroed W_z should leave the input untouched");
}

#[test]
fn weight_override_shape_mismatch_is_reported() {
    let dir = scratch("badweights");
    let wz = Tensor::<f64>::zeros(vec![3, 3]).unwrap();
    io::write_tensor(dir.join("wz.rnlt"), &wz).unwrap();
    let out = rnl(&[
        "run",
        "--input.shape",
        "2x3x3x8",
        "--weights.dir",
        dir.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("wz.rnlt"), "{}", stderr(&out));
}

#[test]
fn run_summary_reports_row_sums_for_gaussian() {
    let out = rnl(&[
        "run",
        "--input.shape",
        "2x3x3x8",
        "--out",
        scratch("summary").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("z.min = "));
    assert!(text.contains("z.mean = "));
    assert!(text.contains("affinity.rowsum.max_dev_from_1 = "), "{text}");
}

#[test]
fn gen_is_bit_deterministic_across_runs() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for dir in [&a, &b] {
        let out = rnl(&[
            "gen",
            "--seed",
            "21",
            "--input.pattern",
            "moving-dot",
            "--input.shape",
            "3x8x8x4",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for name in ["clip.rnlt", "mask.rnlt"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}
