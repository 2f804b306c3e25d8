//! Plain-text file formats.
//!
//! A matrix record is a line `rows cols` followed by `rows` lines of `cols`
//! whitespace-separated decimals. Blank lines and lines starting with `#`
//! are skipped.
//!
//! * cloud: one record of shape `d m`
//! * cloud set: a line `n`, then `n` cloud records
//! * stack: a line `n`, then `n` records of shape `d p`
//! * gram: a line `n d`, then `nd` lines of `nd` decimals
//!
//! Values are written with shortest round-trip formatting, so
//! `parse(write(x)) == x` bit for bit.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linops::{BlockStack, StiefelStack};
use crate::model::{GramMatrix, PointCloud, PointCloudSet};

/// Upper bound on the number of entries in any single record.
pub const MAX_ENTRIES: usize = 1 << 26;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    budget: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), budget: text.len() }
    }

    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (idx, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Some((idx + 1, line));
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_content().ok_or_else(|| Error::Parse { line: 0, message: format!("unexpected end of input, expected {what}") })
    }

    fn header<const K: usize>(&mut self, what: &str) -> Result<(usize, [usize; K])> {
        let (line, text) = self.expect(what)?;
        let mut out = [0usize; K];
        let mut tokens = text.split_whitespace();
        for slot in out.iter_mut() {
            let tok = tokens.next().ok_or_else(|| Error::Parse { line, message: format!("{what}: expected {K} integers") })?;
            *slot = tok.parse().map_err(|_| Error::Parse { line, message: format!("{what}: bad integer `{tok}`") })?;
        }
        if tokens.next().is_some() {
            return Err(Error::Parse { line, message: format!("{what}: expected {K} integers") });
        }
        Ok((line, out))
    }

    fn matrix(&mut self, rows: usize, cols: usize, header_line: usize) -> Result<DMatrix<f64>> {
        let entries = rows
            .checked_mul(cols)
            .filter(|&e| e <= MAX_ENTRIES)
            .ok_or_else(|| Error::Parse { line: header_line, message: format!("record {rows}x{cols} too large") })?;
        // each value needs at least one digit and one separator
        if entries > self.budget / 2 + 1 {
            return Err(Error::Parse { line: header_line, message: format!("record {rows}x{cols} exceeds input size") });
        }
        let mut data = Vec::with_capacity(entries);
        for _ in 0..rows {
            let (line, text) = self.expect("matrix row")?;
            let before = data.len();
            for tok in text.split_whitespace() {
                if data.len() - before == cols {
                    return Err(Error::Parse { line, message: format!("expected {cols} values") });
                }
                let v: f64 = tok.parse().map_err(|_| Error::Parse { line, message: format!("bad number `{tok}`") })?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::Parse { line, message: format!("expected {cols} values, found {}", data.len() - before) });
            }
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn record(&mut self, what: &str) -> Result<DMatrix<f64>> {
        let (line, [rows, cols]) = self.header::<2>(what)?;
        self.matrix(rows, cols, line)
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_content() {
            Some((line, _)) => Err(Error::Parse { line, message: "trailing content".into() }),
            None => Ok(()),
        }
    }
}

fn write_record(out: &mut String, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    write_rows(out, m);
}

fn write_rows(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", m[(r, c)]);
        }
        out.push('\n');
    }
}

pub fn write_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    write_record(&mut out, m);
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = Lines::new(text);
    let m = lines.record("matrix header")?;
    lines.finish()?;
    Ok(m)
}

pub fn write_cloud(cloud: &PointCloud) -> String {
    write_matrix(cloud.points())
}

pub fn parse_cloud(text: &str) -> Result<PointCloud> {
    PointCloud::new(parse_matrix(text)?)
}

pub fn write_cloud_set(set: &PointCloudSet) -> String {
    let mut out = format!("{}\n", set.n());
    for cloud in set.clouds() {
        write_record(&mut out, cloud.points());
    }
    out
}

fn parse_records(text: &str, what: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut lines = Lines::new(text);
    let (line, [n]) = lines.header::<1>("record count")?;
    if n > lines.budget / 4 + 1 {
        return Err(Error::Parse { line, message: format!("record count {n} exceeds input size") });
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        records.push(lines.record(what)?);
    }
    lines.finish()?;
    Ok(records)
}

pub fn parse_cloud_set(text: &str) -> Result<PointCloudSet> {
    let clouds = parse_records(text, "cloud header")?
        .into_iter()
        .enumerate()
        .map(|(index, m)| PointCloud::new(m).map_err(|e| Error::BadCloud { index, reason: e.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    PointCloudSet::new(clouds)
}

pub fn write_stack(stack: &BlockStack) -> String {
    let mut out = format!("{}\n", stack.n());
    for b in stack.blocks() {
        write_record(&mut out, &b.clone_owned());
    }
    out
}

pub fn parse_stack(text: &str) -> Result<BlockStack> {
    let blocks = parse_records(text, "block header")?;
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("stack has no blocks".into()));
    }
    BlockStack::from_blocks(&blocks)
}

/// Parses a stack and checks that every block has orthonormal rows.
pub fn parse_stiefel_stack(text: &str) -> Result<StiefelStack> {
    StiefelStack::new(parse_stack(text)?)
}

pub fn write_gram(c: &GramMatrix) -> String {
    let mut out = format!("{} {}\n", c.n(), c.d());
    write_rows(&mut out, c.as_matrix());
    out
}

pub fn parse_gram(text: &str) -> Result<GramMatrix> {
    let mut lines = Lines::new(text);
    let (line, [n, d]) = lines.header::<2>("gram header")?;
    if n == 0 || d == 0 {
        return Err(Error::Parse { line, message: "n and d must be positive".into() });
    }
    let size = n.checked_mul(d).ok_or_else(|| Error::Parse { line, message: "size overflow".into() })?;
    let m = lines.matrix(size, size, line)?;
    lines.finish()?;
    GramMatrix::new(m, d)
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut lines = Lines::new(text);
    while let Some((line, content)) = lines.next_content() {
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, message: "expected key=value".into() })?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Parse { line, message: format!("bad key `{key}`") });
        }
        out.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 5e300, f64::MIN_POSITIVE, -0.0]);
        let back = parse_matrix(&write_matrix(&m)).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_matrix("2 2\n1 2\n3\n").is_err());
        assert!(parse_matrix("2 2\n1 2\n3 4 5\n").is_err());
        assert!(parse_matrix("1 1\nx\n").is_err());
        assert!(parse_matrix("1 1\n1\n2\n").is_err());
        assert!(parse_matrix("99999999 99999999\n").is_err());
        assert!(parse_cloud("2 2\n1 2\n3 4\n").is_err());
        assert!(parse_cloud_set("18446744073709551615\n").is_err());
        assert!(parse_gram("1 2\n1 0\n0 -1\n").is_err());
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let m = parse_matrix("# hi\n\n1 2\n  3 4  \n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let cfg = parse_config("# c\nmax_iter = 10\nseed=3\n").unwrap();
        assert_eq!(cfg, vec![("max-iter".into(), "10".into()), ("seed".into(), "3".into())]);
    }
}
