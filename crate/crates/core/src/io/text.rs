//! Whitespace-separated text files: correspondences, 4x4 transforms and
//! inlier labels.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix4;

use crate::error::{Error, Location, ParseErrorKind, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::outlier_removal::{Correspondence, CorrespondenceSet};

/// Rotation blocks further than this from orthonormal are rejected.
pub const TRANSFORM_TOL: f64 = 1e-4;

/// Non-blank, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, t))
    })
}

fn parse_numbers<const N: usize>(path: &Path, line_no: usize, line: &str) -> Result<[f64; N]> {
    let err = |kind| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Line(line_no),
        kind,
    };
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != N {
        return Err(err(ParseErrorKind::WrongArity {
            expected: N,
            found: tokens.len(),
        }));
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(&tokens) {
        let v: f64 = tok
            .parse()
            .map_err(|_| err(ParseErrorKind::InvalidNumber(tok.to_string())))?;
        if !v.is_finite() {
            return Err(err(ParseErrorKind::InvalidNumber(tok.to_string())));
        }
        *slot = v;
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `px py pz qx qy qz` lines. The n-th data line gets source index n.
pub fn parse_correspondences(path: &Path, text: &str) -> Result<CorrespondenceSet> {
    let mut pairs = Vec::new();
    for (line_no, line) in data_lines(text) {
        let [px, py, pz, qx, qy, qz] = parse_numbers::<6>(path, line_no, line)?;
        pairs.push(Correspondence::new(
            Point3::new(px, py, pz),
            Point3::new(qx, qy, qz),
            pairs.len(),
        ));
    }
    Ok(CorrespondenceSet::initial(pairs))
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    parse_correspondences(path, &read_text(path)?)
}

pub fn format_correspondences(corr: &CorrespondenceSet) -> String {
    let mut out = String::new();
    for c in &corr.pairs {
        writeln!(
            out,
            "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            c.p.x, c.p.y, c.p.z, c.q.x, c.q.y, c.q.z
        )
        .unwrap();
    }
    out
}

pub fn write_correspondences(path: impl AsRef<Path>, corr: &CorrespondenceSet) -> Result<()> {
    write_text(path.as_ref(), &format_correspondences(corr))
}

/// Four rows of four numbers. The rotation block is accepted within
/// [`TRANSFORM_TOL`] and then projected onto SO(3).
pub fn parse_transform(path: &Path, text: &str) -> Result<RigidTransform> {
    let rows: Vec<(usize, &str)> = data_lines(text).collect();
    if rows.len() != 4 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(rows.last().map_or(1, |r| r.0)),
            kind: ParseErrorKind::WrongArity {
                expected: 4,
                found: rows.len(),
            },
        });
    }
    let mut m = Matrix4::zeros();
    for (r, (line_no, line)) in rows.iter().enumerate() {
        let v = parse_numbers::<4>(path, *line_no, line)?;
        for c in 0..4 {
            m[(r, c)] = v[c];
        }
    }
    RigidTransform::from_homogeneous(&m, TRANSFORM_TOL)
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    parse_transform(path, &read_text(path)?)
}

pub fn format_transform(t: &RigidTransform) -> String {
    let v = t.to_row_major();
    let mut out = String::new();
    for row in v.chunks(4) {
        writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", row[0], row[1], row[2], row[3]).unwrap();
    }
    out
}

pub fn write_transform(path: impl AsRef<Path>, t: &RigidTransform) -> Result<()> {
    write_text(path.as_ref(), &format_transform(t))
}

/// One `inlier` / `outlier` word per correspondence.
pub fn format_labels(labels: &[bool]) -> String {
    labels
        .iter()
        .map(|&inlier| if inlier { "inlier\n" } else { "outlier\n" })
        .collect()
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<bool>> {
    data_lines(text)
        .map(|(line_no, line)| match line {
            "inlier" => Ok(true),
            "outlier" => Ok(false),
            other => Err(Error::Parse {
                path: path.to_path_buf(),
                location: Location::Line(line_no),
                kind: ParseErrorKind::InvalidNumber(other.to_string()),
            }),
        })
        .collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    parse_labels(path, &read_text(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[bool]) -> Result<()> {
    write_text(path.as_ref(), &format_labels(labels))
}
