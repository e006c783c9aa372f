//! Plain-text persistence for [`PriorWeights`].
//!
//! ```text
//! chromalab-priors 1
//! grid_step 10
//! lambda 0.5
//! sigma 5
//! q 309
//! pixel_count 2048000
//! # bin a b p p_smoothed w w_lambda0
//! 0 -90 0 0.0001 ...
//! ```
//!
//! Floats use the shortest representation that parses back to the same bits,
//! so a save/load/save cycle is byte-identical. A missing λ = 0 weight is
//! written as `-`.

use std::fmt::Write as _;
use std::path::Path;

use crate::rebalance::PriorWeights;
use crate::{Error, Result};

const MAGIC: &str = "chromalab-priors";
const VERSION: u32 = 1;
const COLUMNS: &str = "# bin a b p p_smoothed w w_lambda0";

pub fn format_priors(pw: &PriorWeights) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "grid_step {}", pw.grid_step);
    let _ = writeln!(s, "lambda {}", pw.lambda);
    let _ = writeln!(s, "sigma {}", pw.sigma);
    let _ = writeln!(s, "q {}", pw.q());
    let _ = writeln!(s, "pixel_count {}", pw.pixel_count);
    let _ = writeln!(s, "{COLUMNS}");
    for q in 0..pw.q() {
        let w0 = pw
            .weights_lambda0
            .as_ref()
            .map_or_else(|| "-".to_string(), |w| w[q].to_string());
        let _ = writeln!(
            s,
            "{q} {} {} {} {} {} {w0}",
            pw.centers[q][0], pw.centers[q][1], pw.prior[q], pw.smoothed_prior[q], pw.weights[q]
        );
    }
    s
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedPriors {
        line,
        reason: reason.into(),
    }
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (n, line) = lines.next().ok_or_else(|| malformed(0, format!("missing {key}")))?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| malformed(n, format!("expected `{key} <value>`")))?;
    Ok((n, value))
}

fn number<T: std::str::FromStr>(line: usize, field: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| malformed(line, format!("{field}: cannot parse `{s}`")))
}

pub fn parse_priors(text: &str) -> Result<PriorWeights> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, version) = header(&mut lines, MAGIC)?;
    if number::<u32>(n, "version", version)? != VERSION {
        return Err(malformed(n, format!("unsupported version {version}")));
    }
    let (n, v) = header(&mut lines, "grid_step")?;
    let grid_step: f64 = number(n, "grid_step", v)?;
    let (n, v) = header(&mut lines, "lambda")?;
    let lambda: f64 = number(n, "lambda", v)?;
    let (n, v) = header(&mut lines, "sigma")?;
    let sigma: f64 = number(n, "sigma", v)?;
    let (n, v) = header(&mut lines, "q")?;
    let q: usize = number(n, "q", v)?;
    let (n, v) = header(&mut lines, "pixel_count")?;
    let pixel_count: u64 = number(n, "pixel_count", v)?;
    match lines.next() {
        Some((_, l)) if l == COLUMNS => {}
        Some((n, _)) => return Err(malformed(n, "expected column header")),
        None => return Err(malformed(0, "missing column header")),
    }

    let mut centers = Vec::with_capacity(q);
    let mut prior = Vec::with_capacity(q);
    let mut smoothed = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    let mut w0: Vec<Option<f64>> = Vec::with_capacity(q);
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 7 {
            return Err(malformed(n, format!("expected 7 fields, got {}", fields.len())));
        }
        let idx: usize = number(n, "bin", fields[0])?;
        if idx != centers.len() {
            return Err(malformed(n, format!("bin {idx} out of sequence")));
        }
        centers.push([number(n, "a", fields[1])?, number(n, "b", fields[2])?]);
        prior.push(number(n, "p", fields[3])?);
        smoothed.push(number(n, "p_smoothed", fields[4])?);
        weights.push(number(n, "w", fields[5])?);
        w0.push(if fields[6] == "-" { None } else { Some(number(n, "w_lambda0", fields[6])?) });
    }
    if centers.len() != q {
        return Err(Error::InvalidPriors(format!("header says q = {q}, found {} bins", centers.len())));
    }
    let weights_lambda0 = if w0.iter().all(Option::is_some) {
        Some(w0.into_iter().flatten().collect())
    } else if w0.iter().all(Option::is_none) {
        None
    } else {
        return Err(Error::InvalidPriors("w_lambda0 column is partially missing".into()));
    };
    let pw = PriorWeights {
        grid_step,
        centers,
        lambda,
        sigma,
        pixel_count,
        prior,
        smoothed_prior: smoothed,
        weights,
        weights_lambda0,
    };
    pw.validate()?;
    Ok(pw)
}

pub fn save_priors(path: impl AsRef<Path>, pw: &PriorWeights) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_priors(pw)).map_err(|e| Error::io(path, e))
}

pub fn load_priors(path: impl AsRef<Path>) -> Result<PriorWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_priors(&text)
}
