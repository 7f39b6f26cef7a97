//! Plain-text artifact formats: the propensity curve CSV and number
//! formatting shared by the CSV writers.

use std::io::{BufRead, Write};

use crate::domain::{Method, PropensityCurve};
use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "rank,propensity";

/// Formats `v` with `digits` significant digits, in positional notation when
/// the exponent is moderate and scientific otherwise (like C's `%.*g`, but
/// keeping trailing zeros).
pub fn format_sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp < -5 || exp >= digits as i32 {
        sci
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, v)
    }
}

/// Writes one `rank,propensity` row per rank with 9 significant digits.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &PropensityCurve) -> std::io::Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for (i, v) in curve.values().iter().enumerate() {
        writeln!(w, "{},{}", i + 1, format_sig(*v, 9))?;
    }
    w.flush()
}

/// Reads a curve CSV. Rows must cover ranks `1..=n` in order; the values are
/// renormalized so the rank-1 entry is exactly 1.
pub fn read_curve_csv<R: BufRead>(reader: R, method: Method) -> Result<PropensityCurve> {
    let mut values = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line_no == 1 {
            if line != CURVE_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{CURVE_HEADER}`"),
                });
            }
            continue;
        }
        let bad = |message: String| Error::Parse { line: line_no, message };
        let (rank, value) = line
            .split_once(',')
            .ok_or_else(|| bad("expected `rank,propensity`".into()))?;
        let rank: usize = rank.trim().parse().map_err(|_| bad(format!("bad rank `{rank}`")))?;
        let value: f64 = value.trim().parse().map_err(|_| bad(format!("bad propensity `{value}`")))?;
        if rank != values.len() + 1 {
            return Err(bad(format!("expected rank {}, found {rank}", values.len() + 1)));
        }
        values.push(value);
    }
    PropensityCurve::normalized(&values, method)
}
