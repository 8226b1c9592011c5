//! The libsvm text format: one `label idx:val idx:val ...` record per line,
//! 1-based strictly increasing indices, absent features are zero.

use std::fmt;
use std::io::Write;
use std::path::Path;

use less_core::{DenseMatrix, DenseVector};

use crate::error::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmRecord {
    pub label: f64,
    /// `(index, value)` with 1-based, strictly increasing indices.
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyInput,
    BadLabel(String),
    /// A token without the `idx:val` shape.
    BadToken(String),
    BadIndex(String),
    BadValue(String),
    ZeroIndex,
    NonIncreasingIndex,
    NonFinite,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::EmptyInput => write!(f, "no records"),
            ParseErrorKind::BadLabel(t) => write!(f, "label '{t}' is not a number"),
            ParseErrorKind::BadToken(t) => write!(f, "expected idx:val, found '{t}'"),
            ParseErrorKind::BadIndex(t) => write!(f, "index '{t}' is not a positive integer"),
            ParseErrorKind::BadValue(t) => write!(f, "value '{t}' is not a number"),
            ParseErrorKind::ZeroIndex => write!(f, "indices are 1-based"),
            ParseErrorKind::NonIncreasingIndex => write!(f, "indices must be strictly increasing"),
            ParseErrorKind::NonFinite => write!(f, "non-finite number"),
        }
    }
}

fn parse_f64(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok()
}

/// Parse one non-blank line.
pub fn parse_record(line: &str) -> Result<LibsvmRecord, ParseErrorKind> {
    let mut tokens = line.split_ascii_whitespace();
    let label_tok = tokens.next().ok_or(ParseErrorKind::EmptyInput)?;
    let label = parse_f64(label_tok).ok_or_else(|| ParseErrorKind::BadLabel(label_tok.into()))?;
    if !label.is_finite() {
        return Err(ParseErrorKind::NonFinite);
    }
    let mut features = Vec::new();
    let mut last = 0usize;
    for tok in tokens {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| ParseErrorKind::BadToken(tok.into()))?;
        let idx: usize = i.parse().map_err(|_| ParseErrorKind::BadIndex(i.into()))?;
        if idx == 0 {
            return Err(ParseErrorKind::ZeroIndex);
        }
        if idx <= last {
            return Err(ParseErrorKind::NonIncreasingIndex);
        }
        let val = parse_f64(v).ok_or_else(|| ParseErrorKind::BadValue(v.into()))?;
        if !val.is_finite() {
            return Err(ParseErrorKind::NonFinite);
        }
        features.push((idx, val));
        last = idx;
    }
    Ok(LibsvmRecord { label, features })
}

/// Parse a whole document, skipping blank lines. `d_hint` fixes the
/// dimension; otherwise it is the largest index seen.
pub fn parse_libsvm_str(
    text: &str,
    d_hint: Option<usize>,
    max_rows: Option<usize>,
) -> Result<(DenseMatrix, DenseVector), DataError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if max_rows.is_some_and(|cap| records.len() >= cap) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line).map_err(|kind| DataError::Parse {
            line: lineno + 1,
            kind,
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(DataError::Parse {
            line: 0,
            kind: ParseErrorKind::EmptyInput,
        });
    }
    let max_index = records
        .iter()
        .filter_map(|r| r.features.last().map(|f| f.0))
        .max()
        .unwrap_or(0);
    let d = match d_hint {
        Some(h) if h < max_index => {
            return Err(DataError::DimensionMismatch {
                hint: h,
                max_index,
            })
        }
        Some(h) => h,
        None => max_index,
    };
    if d == 0 {
        return Err(DataError::Invalid("records have no features".into()));
    }
    let mut data = vec![0.0; records.len() * d];
    let mut labels = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        for &(i, v) in &rec.features {
            data[r * d + i - 1] = v;
        }
        labels.push(rec.label);
    }
    let a = DenseMatrix::from_row_major(records.len(), d, data).map_err(DataError::from)?;
    let b = DenseVector::new(labels).map_err(DataError::from)?;
    Ok((a, b))
}

pub fn parse_libsvm(
    path: &Path,
    d_hint: Option<usize>,
    max_rows: Option<usize>,
) -> Result<(DenseMatrix, DenseVector), DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_libsvm_str(&text, d_hint, max_rows)
}

/// Write `(a, b)` in libsvm form, omitting zero features. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_libsvm<W: Write>(out: &mut W, a: &DenseMatrix, b: &DenseVector) -> std::io::Result<()> {
    for (i, row) in a.row_iter().enumerate() {
        write!(out, "{}", b[i])?;
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_definition() {
        let (a, b) = parse_libsvm_str("3.5 1:1 3:2\n", Some(3), None).unwrap();
        assert_eq!(a.row(0), &[1.0, 0.0, 2.0]);
        assert_eq!(b.as_slice(), &[3.5]);
    }

    #[test]
    fn empty_input() {
        for text in ["", "\n  \n"] {
            assert!(matches!(
                parse_libsvm_str(text, None, None),
                Err(DataError::Parse {
                    kind: ParseErrorKind::EmptyInput,
                    ..
                })
            ));
        }
    }

    #[test]
    fn out_of_order_indices() {
        assert_eq!(
            parse_libsvm_str("1 3:1 1:2", None, None).unwrap_err(),
            DataError::Parse {
                line: 1,
                kind: ParseErrorKind::NonIncreasingIndex
            }
        );
        assert_eq!(parse_record("1 2:1 2:1"), Err(ParseErrorKind::NonIncreasingIndex));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let err = parse_libsvm_str("1 1:1\n\n2 1:x\n", None, None).unwrap_err();
        assert_eq!(
            err,
            DataError::Parse {
                line: 3,
                kind: ParseErrorKind::BadValue("x".into())
            }
        );
        assert_eq!(parse_record("a 1:1"), Err(ParseErrorKind::BadLabel("a".into())));
        assert_eq!(parse_record("1 0:1"), Err(ParseErrorKind::ZeroIndex));
        assert_eq!(parse_record("1 4"), Err(ParseErrorKind::BadToken("4".into())));
        assert_eq!(parse_record("1 1:inf"), Err(ParseErrorKind::NonFinite));
    }

    #[test]
    fn hint_below_max_index() {
        assert_eq!(
            parse_libsvm_str("1 5:1", Some(3), None).unwrap_err(),
            DataError::DimensionMismatch { hint: 3, max_index: 5 }
        );
    }

    #[test]
    fn truncation_keeps_leading_rows() {
        let (a, b) = parse_libsvm_str("1 1:1\n2 2:1\n3 1:3\n", None, Some(2)).unwrap();
        assert_eq!(a.shape(), (2, 2));
        assert_eq!(b.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn round_trip() {
        let text = "-1 1:0.5 4:2\n2.25 2:-3\n";
        let (a, b) = parse_libsvm_str(text, None, None).unwrap();
        let mut out = Vec::new();
        write_libsvm(&mut out, &a, &b).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
