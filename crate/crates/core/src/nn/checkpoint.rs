//! Text checkpoint format: named parameter arrays with shapes and row-major
//! values printed with 17 significant digits, which round-trips f64 exactly.

use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/value mismatch");
        assert!(!name.contains(char::is_whitespace), "tensor names must not contain spaces");
        self.entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: values.to_vec(),
        });
    }

    pub fn get(&self, name: &str) -> Result<&CheckpointEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("fiberlab-checkpoint v1\n");
        for e in &self.entries {
            write!(s, "tensor {}", e.name).unwrap();
            for d in &e.shape {
                write!(s, " {d}").unwrap();
            }
            s.push('\n');
            let mut first = true;
            for v in &e.values {
                if !first {
                    s.push(' ');
                }
                write!(s, "{v:.16e}").unwrap();
                first = false;
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("fiberlab-checkpoint v1") => {}
            other => {
                return Err(Error::Checkpoint(format!("bad header {other:?}")));
            }
        }
        let mut ck = Checkpoint::new();
        while let Some(head) = lines.next() {
            if head.trim().is_empty() {
                continue;
            }
            let mut parts = head.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(Error::Checkpoint(format!("expected tensor line, got {head:?}")));
            }
            let name = parts
                .next()
                .ok_or_else(|| Error::Checkpoint("tensor line without name".into()))?
                .to_string();
            let shape: Vec<usize> = parts
                .map(|p| p.parse::<usize>().map_err(|e| Error::Checkpoint(format!("bad dim: {e}"))))
                .collect::<Result<_>>()?;
            let count: usize = shape.iter().product();
            let data_line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing values for {name}")))?;
            let values: Vec<f64> = data_line
                .split_whitespace()
                .map(|p| p.parse::<f64>().map_err(|e| Error::Checkpoint(format!("bad value: {e}"))))
                .collect::<Result<_>>()?;
            if values.len() != count {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {count} values, got {}",
                    values.len()
                )));
            }
            ck.entries.push(CheckpointEntry { name, shape, values });
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Checkpoint::from_text(&text)
}
