//! Text persistence for trained models.
//!
//! ```text
//! #nlorp-lstm v1
//! build_id 3f2a...          (or `-` when unstamped)
//! charset "abc...%$"        (JSON string)
//! embed_dim 24
//! ...                        (remaining hyperparameters, one per line)
//! tensor embedding 40 24
//! <one line per row, space-separated values>
//! ...
//! end
//! ```
//!
//! Values are written in shortest round-trip exponent form, so a reloaded
//! model reproduces forward outputs bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::network::Params;
use super::{Charset, LstmError, LstmHyperparams, LstmModel};

pub const MODEL_HEADER: &str = "#nlorp-lstm v1";

pub(crate) fn to_text(model: &LstmModel) -> String {
    let hp = &model.hyperparams;
    let mut out = String::new();
    let build_id = if model.build_id.is_empty() {
        "-"
    } else {
        &model.build_id
    };
    let charset = serde_json::to_string(&hp.charset.as_string()).expect("strings always serialize");
    let _ = writeln!(out, "{MODEL_HEADER}");
    let _ = writeln!(out, "build_id {build_id}");
    let _ = writeln!(out, "charset {charset}");
    let _ = writeln!(out, "embed_dim {}", hp.embed_dim);
    let _ = writeln!(out, "hidden_dim {}", hp.hidden_dim);
    let _ = writeln!(out, "num_layers {}", hp.num_layers);
    let _ = writeln!(out, "dropout_rate {:e}", hp.dropout_rate);
    let _ = writeln!(out, "max_seq_len {}", hp.max_seq_len);
    let _ = writeln!(out, "learning_rate {:e}", hp.learning_rate);
    let _ = writeln!(out, "epochs {}", hp.epochs);
    let _ = writeln!(out, "seed {}", hp.seed);
    let _ = writeln!(out, "grad_clip {:e}", hp.grad_clip);
    for (name, t) in model.params.tensors() {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows, t.cols);
        for r in 0..t.rows {
            let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, LstmError> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok(line)
            }
            None => Err(LstmError::CorruptEntry {
                line: self.last + 1,
                reason: "unexpected end of file".into(),
            }),
        }
    }

    fn corrupt(&self, reason: impl Into<String>) -> LstmError {
        LstmError::CorruptEntry {
            line: self.last,
            reason: reason.into(),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str, LstmError> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.corrupt(format!("expected `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, LstmError> {
        let raw = self.field(key)?;
        raw.parse()
            .map_err(|_| self.corrupt(format!("bad value {raw:?} for {key}")))
    }
}

pub(crate) fn from_text(text: &str) -> Result<LstmModel, LstmError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let header = lines.next().map_err(|_| LstmError::VersionMismatch(String::new()))?;
    if header != MODEL_HEADER {
        return Err(LstmError::VersionMismatch(header.to_owned()));
    }
    let build_id = match lines.field("build_id")? {
        "-" => String::new(),
        id => id.to_owned(),
    };
    let charset_json = lines.field("charset")?;
    let charset: String = serde_json::from_str(charset_json).map_err(|e| lines.corrupt(format!("bad charset: {e}")))?;
    let hp = LstmHyperparams {
        charset: Charset::new(charset.chars())?,
        embed_dim: lines.parsed("embed_dim")?,
        hidden_dim: lines.parsed("hidden_dim")?,
        num_layers: lines.parsed("num_layers")?,
        dropout_rate: lines.parsed("dropout_rate")?,
        max_seq_len: lines.parsed("max_seq_len")?,
        learning_rate: lines.parsed("learning_rate")?,
        epochs: lines.parsed("epochs")?,
        seed: lines.parsed("seed")?,
        grad_clip: lines.parsed("grad_clip")?,
    };
    hp.validate()?;

    let mut params = Params::zeros(&hp);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, tensor) in names.iter().zip(params.tensors_mut()) {
        let head = lines.field("tensor")?;
        let parts: Vec<&str> = head.split(' ').collect();
        let [found_name, rows, cols] = parts[..] else {
            return Err(lines.corrupt("malformed tensor header"));
        };
        let expected = format!("{name} {}x{}", tensor.rows, tensor.cols);
        let found = format!("{found_name} {rows}x{cols}");
        if expected != found {
            return Err(LstmError::ShapeMismatch {
                name: name.clone(),
                expected,
                found,
            });
        }
        for r in 0..tensor.rows {
            let line = lines.next()?;
            let values: Vec<f64> = line
                .split(' ')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| lines.corrupt(format!("bad number in tensor {name}")))?;
            if values.len() != tensor.cols {
                return Err(LstmError::ShapeMismatch {
                    name: name.clone(),
                    expected: format!("{} values in row {r}", tensor.cols),
                    found: values.len().to_string(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(lines.corrupt(format!("non-finite value in tensor {name}")));
            }
            tensor.row_mut(r).copy_from_slice(&values);
        }
    }
    if lines.next()? != "end" {
        return Err(lines.corrupt("expected `end`"));
    }
    Ok(LstmModel {
        hyperparams: hp,
        params,
        build_id,
    })
}

pub fn persist_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<(), LstmError> {
    let path = path.as_ref();
    fs::write(path, to_text(model)).map_err(|source| LstmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel, LstmError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LstmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_text(&text)
}
