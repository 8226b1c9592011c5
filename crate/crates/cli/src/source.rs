//! Where a problem comes from: a libsvm file or a synthetic spec.

use std::path::PathBuf;

use less_core::synth::{standardize_columns, SynthSpec};
use less_core::{DenseMatrix, DenseVector};

use crate::error::CliError;
use crate::libsvm::parse_libsvm;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Dataset { path: PathBuf, d_hint: Option<usize> },
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::Synthetic(s) => format!(
                "synthetic n={} d={} noise={} cond={} seed={} tail={}",
                s.n,
                s.d,
                s.noise_sigma,
                s.cond,
                s.seed,
                s.row_tail.map_or("none".to_string(), |t| t.to_string())
            ),
            DataSource::Dataset { path, .. } => format!("libsvm {}", path.display()),
        }
    }
}

/// Parse `k=v,...` with keys `n`, `d`, `noise`, `cond`, `seed`, `tail`.
/// Unset keys take [`SynthSpec::new`] defaults (`n = 2000`, `d = 20`).
pub fn parse_synthetic(spec: &str) -> Result<SynthSpec, CliError> {
    let mut out = SynthSpec::new(2000, 20);
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("synthetic spec entry '{part}' is not k=v")))?;
        let bad = || CliError::Usage(format!("synthetic spec: bad value '{v}' for '{k}'"));
        match k.trim() {
            "n" => out.n = v.parse().map_err(|_| bad())?,
            "d" => out.d = v.parse().map_err(|_| bad())?,
            "noise" | "noise_sigma" => out.noise_sigma = v.parse().map_err(|_| bad())?,
            "cond" => out.cond = v.parse().map_err(|_| bad())?,
            "seed" => out.seed = v.parse().map_err(|_| bad())?,
            "tail" | "row_tail" => out.row_tail = Some(v.parse().map_err(|_| bad())?),
            other => return Err(CliError::Usage(format!("synthetic spec: unknown key '{other}'"))),
        }
    }
    Ok(out)
}

/// Load the problem, keep at most `truncate` rows, and optionally scale
/// columns to unit norm.
pub fn load(
    source: &DataSource,
    truncate: Option<usize>,
    standardize: bool,
) -> Result<(DenseMatrix, DenseVector), CliError> {
    let (mut a, b) = match source {
        DataSource::Synthetic(spec) => {
            let n = truncate.map_or(spec.n, |t| t.min(spec.n));
            let p = SynthSpec { n, ..spec.clone() }.generate()?;
            (p.a, p.b)
        }
        DataSource::Dataset { path, d_hint } => parse_libsvm(path, *d_hint, truncate)?,
    };
    if standardize {
        standardize_columns(&mut a);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec() {
        let s = parse_synthetic("n=300, d=5,tail=1.5,seed=9").unwrap();
        assert_eq!((s.n, s.d, s.seed, s.row_tail), (300, 5, 9, Some(1.5)));
        assert!(parse_synthetic("n=3,q=1").is_err());
        assert!(parse_synthetic("n").is_err());
        assert!(parse_synthetic("n=x").is_err());
    }
}
