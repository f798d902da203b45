//! Plain-text feature matrices: a `d N` header line, then `N` lines of
//! `label f_1 ... f_d`, space separated.

use super::LabeledExample;
use crate::error::{Error, Result};

pub fn read_matrix(text: &str) -> Result<(usize, Vec<LabeledExample>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing `d N` header".into() })?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse { line: hline, message: format!("bad header `{header}`") })?;
    let [dim, n] = head[..] else {
        return Err(Error::Parse { line: hline, message: format!("header needs two integers, got `{header}`") });
    };
    let mut rows = Vec::with_capacity(n);
    for (line, l) in lines {
        let bad = |message: String| Error::Parse { line, message };
        let mut fields = l.split_whitespace();
        let label: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a non-negative integer label".into()))?;
        let features = fields
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(format!("bad feature `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        if features.len() != dim {
            return Err(bad(format!("expected {dim} features, got {}", features.len())));
        }
        rows.push(LabeledExample::new(features, label));
    }
    if rows.len() != n {
        return Err(Error::Parse { line: hline, message: format!("header declares {n} rows, found {}", rows.len()) });
    }
    Ok((dim, rows))
}

pub fn write_matrix(dim: usize, rows: &[LabeledExample]) -> String {
    let mut out = format!("{dim} {}\n", rows.len());
    for r in rows {
        out.push_str(&r.label.to_string());
        for v in &r.features {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_writes() {
        let text = "2 3\n0 1.5 -2\n1 0.25 3e-2\n\n4 0 0\n";
        let (dim, rows) = read_matrix(text).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(rows[1], LabeledExample::new(vec![0.25, 0.03], 1));
        assert_eq!(read_matrix(&write_matrix(dim, &rows)).unwrap().1, rows);
    }

    #[test]
    fn reports_line_of_bad_row() {
        let err = read_matrix("2 2\n0 1 2\n1 1\n").unwrap_err();
        assert_eq!(err, Error::Parse { line: 3, message: "expected 2 features, got 1".into() });
        assert!(read_matrix("2 3\n0 1 2\n").is_err());
        assert!(read_matrix("2 1\n0 1 nan\n").is_err());
        assert!(read_matrix("").is_err());
    }
}
