//! Plain-text point clouds: one `x y z` line per point.
//!
//! Coordinates are written in the shortest form that parses back to the same
//! `f64`, so a write/read cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use lindeform_core::geometry::{Point, PointCloud};

use crate::{read_file, write_atomic, Error, Result};

pub fn format_xyz(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(pc.len() * 48);
    for p in pc.points() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}

/// Parses `x y z` lines; blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points: Vec<Point> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::format(format!("line {}: expected three numbers", lineno + 1));
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = it.next().ok_or_else(bad)?.map_err(|_| bad())?;
        }
        if it.next().is_some() {
            return Err(bad());
        }
        points.push(p);
    }
    Ok(PointCloud::new(points)?)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(format!("{}: not UTF-8", path.display())))?;
    parse_xyz(text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_xyz(path: &Path, pc: &PointCloud) -> Result<()> {
    write_atomic(path, format_xyz(pc).as_bytes())
}
