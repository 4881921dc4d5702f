use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// One `x y z` triple per line. Blank lines and `#` comments are skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&read_text(path)?, path)
}

pub(crate) fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            p[k] = f
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, format!("'{f}' is not a number")))?;
            if !p[k].is_finite() {
                return Err(parse_err(i + 1, format!("coordinate '{f}' is not finite")));
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_err(0, "file contains no points".into()));
    }
    PointCloud::new(points)
}

/// Shortest decimal representation that parses back to the same bits.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 64);
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2]).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}
