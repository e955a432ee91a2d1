//! Line-oriented checkpoint format.
//!
//! ```text
//! activelab-checkpoint 1
//! label "A-line"
//! label "B-line"
//! exclusive_index 0
//! feature_dim 32
//! frozen identity                  | frozen projection <in> <out>
//! values <hex> <hex> ...           (projection only)
//! layer hidden <in> <out>          (optional)
//! values ...
//! layer output <in> <out>
//! values ...
//! end
//! ```
//!
//! Every parameter is written as the 16-digit hex of its IEEE-754 bits, so a
//! save/load cycle is bit-exact. A `values` line for a layer lists the
//! row-major weights followed by the bias.

use std::fmt::Write as _;

use super::{ClassifierModel, Dense, FrozenStage};
use crate::error::{Error, Result};
use crate::model::LabelSchema;

pub const CHECKPOINT_MAGIC: &str = "activelab-checkpoint 1";

fn push_values(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push_str("values");
    for v in values {
        let _ = write!(out, " {:016x}", v.to_bits());
    }
    out.push('\n');
}

pub fn write_checkpoint(model: &ClassifierModel) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    for label in model.schema.labels() {
        let _ = writeln!(out, "label {}", serde_json::to_string(label).expect("string"));
    }
    let _ = writeln!(out, "exclusive_index {}", model.schema.exclusive_index());
    let _ = writeln!(out, "feature_dim {}", model.feature_dim);
    match &model.frozen {
        FrozenStage::Identity => out.push_str("frozen identity\n"),
        FrozenStage::Projection {
            in_dim,
            out_dim,
            weights,
        } => {
            let _ = writeln!(out, "frozen projection {in_dim} {out_dim}");
            push_values(&mut out, weights.iter().copied());
        }
    }
    for (name, layer) in model
        .hidden
        .iter()
        .map(|l| ("hidden", l))
        .chain(std::iter::once(("output", &model.output)))
    {
        let _ = writeln!(out, "layer {name} {} {}", layer.in_dim, layer.out_dim);
        push_values(
            &mut out,
            layer.weights.iter().chain(&layer.bias).copied(),
        );
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of checkpoint")),
        }
    }

    fn peek_is(&self, prefix: &str) -> bool {
        self.inner.clone().next().is_some_and(|(_, l)| l.starts_with(prefix))
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key}`")))
    }

    fn usize(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("bad integer {s:?}")))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let rest = line
            .strip_prefix("values")
            .ok_or_else(|| self.err("expected `values`"))?;
        let values = rest
            .split_whitespace()
            .map(|h| {
                u64::from_str_radix(h, 16)
                    .map(f64::from_bits)
                    .map_err(|_| self.err(format!("bad hex value {h:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.err(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn layer(&mut self, name: &str) -> Result<Dense> {
        let header = self.keyed("layer")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(self.err(format!("expected `layer {name} <in> <out>`")));
        }
        let in_dim = self.usize(parts[1])?;
        let out_dim = self.usize(parts[2])?;
        let mut values = self.values(in_dim * out_dim + out_dim)?;
        let bias = values.split_off(in_dim * out_dim);
        Ok(Dense {
            in_dim,
            out_dim,
            weights: values,
            bias,
        })
    }
}

pub fn read_checkpoint(text: &str) -> Result<ClassifierModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != CHECKPOINT_MAGIC {
        return Err(lines.err("not an activelab checkpoint (bad magic line)"));
    }
    let mut labels = Vec::new();
    while lines.peek_is("label ") {
        let raw = lines.keyed("label")?;
        let name: String =
            serde_json::from_str(raw).map_err(|e| lines.err(format!("bad label: {e}")))?;
        labels.push(name);
    }
    let exclusive = lines.keyed("exclusive_index")?;
    let exclusive = lines.usize(exclusive)?;
    let schema = LabelSchema::new(labels, exclusive)?;
    let feature_dim = lines.keyed("feature_dim")?;
    let feature_dim = lines.usize(feature_dim)?;

    let frozen_line = lines.keyed("frozen")?;
    let frozen = if frozen_line == "identity" {
        FrozenStage::Identity
    } else {
        let parts: Vec<&str> = frozen_line.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "projection" {
            return Err(lines.err("expected `frozen identity` or `frozen projection <in> <out>`"));
        }
        let in_dim = lines.usize(parts[1])?;
        let out_dim = lines.usize(parts[2])?;
        FrozenStage::Projection {
            in_dim,
            out_dim,
            weights: lines.values(in_dim * out_dim)?,
        }
    };
    let hidden = if lines.peek_is("layer hidden") {
        Some(lines.layer("hidden")?)
    } else {
        None
    };
    let output = lines.layer("output")?;
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    ClassifierModel::from_parts(schema, feature_dim, frozen, hidden, output)
}
