//! Versioned text checkpoint: a `ffcil-model v1` header, the shape line
//! `input_dim hidden_width classes`, then one line per tensor (hidden
//! weight, hidden bias, head weight, head bias) of row-major values. Hidden
//! lines are omitted when the hidden width is 0.

use ndarray::{Array1, Array2};

use super::{ClassifierModel, Dense};
use crate::error::{Error, Result};

const HEADER: &str = "ffcil-model v1";

pub fn save_checkpoint(model: &ClassifierModel) -> String {
    let hidden = model.hidden.as_ref().map_or(0, Dense::outputs);
    let mut out = format!("{HEADER}\n{} {hidden} {}\n", model.input_dim(), model.num_classes());
    let mut line = |values: &mut dyn Iterator<Item = &f64>| {
        let v: Vec<String> = values.map(f64::to_string).collect();
        out.push_str(&v.join(" "));
        out.push('\n');
    };
    if let Some(h) = &model.hidden {
        line(&mut h.weight.iter());
        line(&mut h.bias.iter());
    }
    line(&mut model.head.weight.iter());
    line(&mut model.head.bias.iter());
    out
}

pub fn load_checkpoint(text: &str) -> Result<ClassifierModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let perr = |line: usize, message: String| Error::Parse { line, message };
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(perr(n, format!("expected `{HEADER}`, got `{other}`"))),
        None => return Err(perr(1, "empty checkpoint".into())),
    }
    let (n, shape) = lines.next().ok_or_else(|| perr(2, "missing shape line".into()))?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| perr(n, format!("bad shape line `{shape}`")))?;
    let [input_dim, hidden_width, classes] = dims[..] else {
        return Err(perr(n, "shape line needs three integers".into()));
    };
    let mut next_values = |count: usize| -> Result<Vec<f64>> {
        let (n, l) = lines.next().ok_or_else(|| perr(0, "truncated checkpoint".into()))?;
        let v: Vec<f64> = if l.is_empty() {
            Vec::new()
        } else {
            l.split(' ')
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| perr(n, "non-numeric or non-finite value".into()))?
        };
        if v.len() != count {
            return Err(perr(n, format!("expected {count} values, got {}", v.len())));
        }
        Ok(v)
    };
    let feat = if hidden_width > 0 { hidden_width } else { input_dim };
    let mut dense = |rows: usize, cols: usize| -> Result<Dense> {
        let w = next_values(rows * cols)?;
        let b = next_values(rows)?;
        Ok(Dense {
            weight: Array2::from_shape_vec((rows, cols), w).expect("length checked"),
            bias: Array1::from(b),
        })
    };
    let hidden = if hidden_width > 0 { Some(dense(hidden_width, input_dim)?) } else { None };
    let head = dense(classes, feat)?;
    let mut model = ClassifierModel::new(input_dim, 0, 0);
    model.hidden = hidden;
    model.head = head;
    Ok(model)
}
