//! Command-line front end for the attention operators: synthetic clip
//! generation, block execution with attention-map export, oracle comparison,
//! gradient checking, and architecture cost reporting.

mod commands;
mod config;
mod pgm;
mod synth;

use std::process::ExitCode;

use config::Config;
use rnl_core::{Error, Result};

const USAGE: &str = "\
usage: rnl <run|oracle|gradcheck|cost|gen> [flags]

flags (all subcommands):
  --config PATH        structured-text config file
  --seed U64           master seed; fully determines synthetic inputs and
                       seeded parameters (byte-reproducible runs)
  --precision f32|f64  storage precision (gradcheck always runs f64)
  --out DIR            output directory
  --<section.key> V    override any config field by its dotted name,
                       e.g. --block.form dot, --ftheta.mode avg-pool

run:       execute one block; writes z.rnlt, plus per-reference attention
           maps (T binary PGM frames and a CSV of raw row values)
  --ref t,h,w          reference position for map export (repeatable)
oracle:    compare the matrix-form block against the literal pair-loop
           reference; nonzero exit above tolerance
  --tol REL            tolerance (default 1e-5 for f64, 1e-3 for f32)
  --corrupt            negative control: perturb the matrix output
gradcheck: central-difference check of the block's gradients (f64)
  --tol REL            tolerance (default 1e-5)
cost:      shape/parameter/FLOP ledger of an architecture
  --arch PATH          architecture file (default: built-in backbone)
  --input TxHxWxC      input extents (default 8x224x224x3)
  --machine            also print machine-readable key = value lines
gen:       write a synthetic clip (and its ground-truth mask for the
           moving-dot pattern) under --out
";

fn parse_args(cfg: &mut Config, sub: &str, args: &[String]) -> Result<()> {
    let mut i = 0;
    let value_of = |i: &mut usize, flag: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::Argument(format!("flag {flag} needs a value")))
    };
    while i < args.len() {
        let arg = args[i].as_str();
        match arg {
            "--config" => {
                let path = value_of(&mut i, "--config")?;
                cfg.load_file(path)?;
            }
            "--seed" => {
                let v = value_of(&mut i, "--seed")?;
                cfg.set("seed", &v)?;
            }
            "--precision" => {
                let v = value_of(&mut i, "--precision")?;
                cfg.set("precision", &v)?;
            }
            "--out" => {
                let v = value_of(&mut i, "--out")?;
                cfg.set("out", &v)?;
            }
            "--ref" => {
                let v = value_of(&mut i, "--ref")?;
                cfg.push_reference(&v)?;
            }
            "--tol" => {
                let v = value_of(&mut i, "--tol")?;
                match sub {
                    "oracle" => cfg.set("oracle.tol", &v)?,
                    "gradcheck" => cfg.set("gradcheck.tol", &v)?,
                    _ => return Err(Error::Argument("--tol applies to oracle/gradcheck".into())),
                }
            }
            "--corrupt" => cfg.set("oracle.corrupt", "true")?,
            "--machine" => cfg.set("cost.machine", "true")?,
            "--arch" => {
                let v = value_of(&mut i, "--arch")?;
                cfg.set("cost.arch", &v)?;
            }
            "--input" => {
                let v = value_of(&mut i, "--input")?;
                cfg.set("cost.input", &v)?;
            }
            other => {
                // Dotted config overrides: --section.key value
                if let Some(key) = other.strip_prefix("--") {
                    if key.contains('.') {
                        let v = value_of(&mut i, other)?;
                        cfg.set(key, &v)?;
                        i += 1;
                        continue;
                    }
                }
                return Err(Error::Argument(format!("unknown flag '{other}'")));
            }
        }
        i += 1;
    }
    Ok(())
}

fn dispatch() -> Result<i32> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(sub) = args.first() else {
        eprint!("{USAGE}");
        return Ok(2);
    };
    if sub == "--help" || sub == "-h" || sub == "help" {
        print!("{USAGE}");
        return Ok(0);
    }
    let mut cfg = Config::default();
    parse_args(&mut cfg, sub, &args[1..])?;
    match sub.as_str() {
        "run" => commands::run(&cfg),
        "oracle" => commands::oracle(&cfg),
        "gradcheck" => commands::gradcheck(&cfg),
        "cost" => commands::cost(&cfg),
        "gen" => commands::gen(&cfg),
        other => Err(Error::Argument(format!("unknown subcommand '{other}'"))),
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            // Single machine-parseable line on stderr.
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
