//! Plain-text checkpoints. Floats are written in Rust's shortest round-trip
//! form so a save/load cycle restores parameters bit for bit.
//!
//! ```text
//! ensloss-mlp 1
//! scalar f64
//! layer_dims 2 8 1
//! activation relu
//! dropout_rate 0
//! weight_decay 0
//! w 0.12 -0.5 ...
//! b 0 0 ...
//! ```
//!
//! One `w` line (row-major) and one `b` line follow per layer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "ensloss-mlp 1";

pub fn write_checkpoint<T: Scalar>(model: &Mlp<T>) -> String {
    let mut out = String::new();
    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "scalar {}", T::NAME);
    let _ = writeln!(
        out,
        "layer_dims {}",
        join(&mut model.layer_dims.iter().map(|d| d.to_string()))
    );
    let _ = writeln!(out, "activation {}", model.activation.name());
    let _ = writeln!(out, "dropout_rate {}", model.dropout_rate);
    let _ = writeln!(out, "weight_decay {}", model.weight_decay);
    for (w, b) in model.weights.iter().zip(&model.biases) {
        let _ = writeln!(out, "w {}", join(&mut w.iter().map(|v| v.to_string())));
        let _ = writeln!(out, "b {}", join(&mut b.iter().map(|v| v.to_string())));
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &Mlp<T>, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str, path: &Path) -> Result<&'a str> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let line = lines.next().ok_or_else(|| fmt(format!("missing `{key}` line")))?;
    match line.split_once(' ') {
        Some((k, rest)) if k == key => Ok(rest),
        None if line == key => Ok(""),
        _ => Err(fmt(format!("expected `{key}`, found `{line}`"))),
    }
}

fn parse_values<T: Scalar>(s: &str, n: usize, path: &Path) -> Result<Vec<T>> {
    let vals = s
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<T>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad number `{t}`"),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    if vals.len() != n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected {n} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

/// Parses checkpoint text. `path` only labels errors.
pub fn read_checkpoint<T: Scalar>(text: &str, path: &Path) -> Result<Mlp<T>> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(fmt("not an ensloss checkpoint".into()));
    }
    let scalar = field(&mut lines, "scalar", path)?;
    if scalar != T::NAME {
        return Err(fmt(format!("checkpoint holds {scalar} parameters, expected {}", T::NAME)));
    }
    let dims = field(&mut lines, "layer_dims", path)?
        .split_ascii_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| fmt(format!("bad layer dim `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let act = field(&mut lines, "activation", path)?;
    let activation = Activation::from_name(act).ok_or_else(|| fmt(format!("unknown activation `{act}`")))?;
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| fmt(format!("bad number `{s}`")));
    let dropout = parse_f64(field(&mut lines, "dropout_rate", path)?)?;
    let wd = parse_f64(field(&mut lines, "weight_decay", path)?)?;
    let mut model = Mlp::<T>::zeros(dims, activation, dropout, wd)?;
    for l in 0..model.weights.len() {
        let (rows, cols) = model.weights[l].dim();
        let w = parse_values::<T>(field(&mut lines, "w", path)?, rows * cols, path)?;
        let b = parse_values::<T>(field(&mut lines, "b", path)?, rows, path)?;
        model.weights[l] = Array2::from_shape_vec((rows, cols), w).map_err(|e| Error::Internal(e.to_string()))?;
        model.biases[l] = Array1::from_vec(b);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(fmt("trailing content".into()));
    }
    Ok(model)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Mlp<T>> {
    let text = fs::read_to_string(path)?;
    read_checkpoint(&text, path)
}
