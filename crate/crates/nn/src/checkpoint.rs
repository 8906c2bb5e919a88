//! Versioned text container for named tensors.
//!
//! ```text
//! gridmarket-checkpoint v1
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <f64 bit patterns as 16-digit hex, space separated>
//! end
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns, so a write/read cycle is
//! exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{NnError, Param};

pub const CHECKPOINT_MAGIC: &str = "gridmarket-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn from_param(p: &Param) -> Self {
        Self::new(p.name.clone(), p.rows, p.cols, p.value.clone())
    }

    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn push(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn push_params(&mut self, params: &[&Param]) {
        for p in params {
            self.push(NamedTensor::from_param(p));
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored values into `params`, matching by name.
    ///
    /// Every parameter must be present with an identical shape; all
    /// mismatches are reported together.
    pub fn load_params(&self, params: &mut [&mut Param]) -> Result<(), NnError> {
        let index: BTreeMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut problems = Vec::new();
        for p in params.iter() {
            match index.get(p.name.as_str()) {
                None => problems.push(format!("missing tensor `{}`", p.name)),
                Some(t) if (t.rows, t.cols) != (p.rows, p.cols) => problems.push(format!(
                    "tensor `{}` has shape {}x{}, expected {}x{}",
                    p.name, t.rows, t.cols, p.rows, p.cols
                )),
                Some(_) => {}
            }
        }
        if !problems.is_empty() {
            return Err(NnError::Incompatible(problems));
        }
        for p in params.iter_mut() {
            p.value.copy_from_slice(&index[p.name.as_str()].values);
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for t in &self.tensors {
            let _ = writeln!(out, "tensor {} {} {}", t.name, t.rows, t.cols);
            let line: Vec<String> = t.values.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, NnError> {
        let err = |line: usize, reason: &str| NnError::Checkpoint {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(err(1, "missing or unsupported header")),
        }
        let mut ckpt = Checkpoint::new();
        let mut finished = false;
        while let Some((no, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| err(no, "meta without key"))?;
                    let value: Vec<&str> = parts.collect();
                    ckpt.set_meta(key, value.join(" "));
                }
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| err(no, "tensor without name"))?;
                    let rows: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(no, "bad row count"))?;
                    let cols: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(no, "bad column count"))?;
                    let (vno, data) = lines.next().ok_or_else(|| err(no, "tensor without data"))?;
                    let values = data
                        .split_whitespace()
                        .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
                        .collect::<Result<Vec<f64>, _>>()
                        .map_err(|_| err(vno, "bad hex value"))?;
                    if values.len() != rows * cols {
                        return Err(err(
                            vno,
                            &format!("expected {} values, found {}", rows * cols, values.len()),
                        ));
                    }
                    ckpt.push(NamedTensor::new(name, rows, cols, values));
                }
                Some("end") => {
                    finished = true;
                    break;
                }
                None => {}
                Some(other) => return Err(err(no, &format!("unexpected record `{other}`"))),
            }
        }
        if !finished {
            return Err(err(text.lines().count(), "truncated checkpoint (no `end`)"));
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NnError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
