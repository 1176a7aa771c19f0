//! Run configuration: a flat key/value store filled from defaults, an
//! optional structured-text file (`key = value` lines with `[section]`
//! tables), and command-line overrides of the same dotted names.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use rnl_core::{Error, Result};

fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("precision", "f64"),
    ("seed", "42"),
    ("out", "out"),
    ("input.path", ""),
    ("input.shape", "2x4x4x8"),
    ("input.pattern", "random"),
    ("input.value", "1.0"),
    ("input.amplitude", "8.0"),
    ("input.radius", "1.5"),
    ("input.velocity", "1,1"),
    ("input.start", ""),
    ("block.kind", "rnl"),
    ("block.channels", ""),
    ("block.reduction", "2"),
    ("block.form", "gaussian"),
    ("block.residual_bn", "true"),
    ("ftheta.mode", "channel-wise-conv"),
    ("ftheta.kt", "3"),
    ("ftheta.kh", "7"),
    ("ftheta.kw", "7"),
    ("ftheta.bias", "false"),
    ("weights.dir", ""),
    ("refs.positions", ""),
    ("oracle.tol", ""),
    ("oracle.guard", "4096"),
    ("oracle.corrupt", "false"),
    ("gradcheck.tol", "1e-5"),
    ("gradcheck.h", "1e-5"),
    ("gradcheck.shape", "2x3x3x4"),
    ("cost.arch", ""),
    ("cost.input", "8x224x224x3"),
    ("cost.machine", "false"),
];

impl Default for Config {
    fn default() -> Self {
        let mut values = BTreeMap::new();
        for (k, v) in DEFAULTS {
            values.insert((*k).to_string(), (*v).to_string());
        }
        Config { values }
    }
}

impl Config {
    /// Merge a structured-text file over the defaults.
    pub fn load_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path.as_ref())?;
        self.merge_text(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Parse {
                    line: idx + 1,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: idx + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value.trim())?;
        }
        Ok(())
    }

    /// Set a dotted key; unknown keys are rejected so typos surface.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(argument(format!("unknown config field '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_default()
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.get(key).is_empty()
    }

    pub fn parse<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.get(key);
        raw.parse::<T>()
            .map_err(|e| argument(format!("config field {key}: {e} (value '{raw}')")))
    }

    pub fn parse_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(argument(format!(
                "config field {key}: expected true/false, got '{other}'"
            ))),
        }
    }

    /// "TxHxWxC" shape token.
    pub fn parse_shape(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.get(key);
        let extents: Vec<usize> = raw
            .split('x')
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| argument(format!("config field {key}: bad extent '{p}' in '{raw}'")))
            })
            .collect::<Result<_>>()?;
        if extents.is_empty() || extents.contains(&0) {
            return Err(argument(format!(
                "config field {key}: extents must be positive in '{raw}'"
            )));
        }
        Ok(extents)
    }

    /// "a,b" integer pair.
    pub fn parse_pair(&self, key: &str) -> Result<(i64, i64)> {
        let raw = self.get(key);
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != 2 {
            return Err(argument(format!(
                "config field {key}: expected two comma-separated values, got '{raw}'"
            )));
        }
        let a = parts[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| argument(format!("config field {key}: bad value '{}'", parts[0])))?;
        let b = parts[1]
            .trim()
            .parse::<i64>()
            .map_err(|_| argument(format!("config field {key}: bad value '{}'", parts[1])))?;
        Ok((a, b))
    }

    /// Reference positions: "t,h,w" triples separated by ';'.
    pub fn reference_positions(&self) -> Result<Vec<(usize, usize, usize)>> {
        let raw = self.get("refs.positions");
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(';')
            .map(|triple| {
                let parts: Vec<&str> = triple.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(argument(format!(
                        "config field refs.positions: expected t,h,w in '{triple}'"
                    )));
                }
                let mut vals = [0usize; 3];
                for (slot, part) in vals.iter_mut().zip(&parts) {
                    *slot = part.parse::<usize>().map_err(|_| {
                        argument(format!("config field refs.positions: bad index '{part}'"))
                    })?;
                }
                Ok((vals[0], vals[1], vals[2]))
            })
            .collect()
    }

    pub fn push_reference(&mut self, triple: &str) -> Result<()> {
        let current = self.get("refs.positions").to_string();
        let joined = if current.is_empty() {
            triple.to_string()
        } else {
            format!("{current};{triple}")
        };
        self.values.insert("refs.positions".to_string(), joined);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_present() {
        let cfg = Config::default();
        assert_eq!(cfg.get("precision"), "f64");
        assert_eq!(cfg.get("ftheta.kt"), "3");
    }

    #[test]
    fn file_sections_map_to_dotted_keys() {
        let mut cfg = Config::default();
        cfg.merge_text("seed = 7\n[block]\nkind = se\n# comment\n[ftheta]\nmode = avg-pool\n")
            .unwrap();
        assert_eq!(cfg.get("seed"), "7");
        assert_eq!(cfg.get("block.kind"), "se");
        assert_eq!(cfg.get("ftheta.mode"), "avg-pool");
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let mut cfg = Config::default();
        let err = cfg.set("block.kindd", "rnl").unwrap_err();
        assert!(err.to_string().contains("block.kindd"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut cfg = Config::default();
        let err = cfg.merge_text("seed = 1\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn shape_parsing() {
        let mut cfg = Config::default();
        cfg.set("input.shape", "4x12x12x8").unwrap();
        assert_eq!(cfg.parse_shape("input.shape").unwrap(), vec![4, 12, 12, 8]);
        cfg.set("input.shape", "4x0x2x1").unwrap();
        assert!(cfg.parse_shape("input.shape").is_err());
    }

    #[test]
    fn reference_positions_accumulate() {
        let mut cfg = Config::default();
        cfg.push_reference("0,1,2").unwrap();
        cfg.push_reference("1,2,3").unwrap();
        assert_eq!(
            cfg.reference_positions().unwrap(),
            vec![(0, 1, 2), (1, 2, 3)]
        );
    }
}
