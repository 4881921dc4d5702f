use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::metrics::TriangleMesh;

struct Element {
    name: String,
    count: usize,
    /// `(name, is_list)` per property.
    properties: Vec<(String, bool)>,
}

struct Parsed {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

fn parse(text: &str, path: &Path) -> Result<Parsed> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let (ln, line) = lines.next().ok_or_else(|| err(0, "header has no end_header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                match tok.get(1).copied() {
                    Some("ascii") => {}
                    Some(other) => {
                        return Err(Error::UnsupportedFormat(format!(
                            "{}: PLY encoding '{other}' is not supported; only ascii 1.0 is",
                            path.display()
                        )))
                    }
                    None => return Err(err(ln, "format line lacks an encoding".into())),
                }
                if tok.get(2).copied() != Some("1.0") {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}: PLY version {:?} is not supported",
                        path.display(),
                        tok.get(2)
                    )));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if tok.len() != 3 {
                    return Err(err(ln, "element line must read 'element <name> <count>'".into()));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| err(ln, format!("bad element count '{}'", tok[2])))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(ln, "property before any element".into()))?;
                let is_list = tok.get(1).copied() == Some("list");
                let name = if is_list { tok.get(4) } else { tok.get(2) };
                let name = name.ok_or_else(|| err(ln, "property line lacks a name".into()))?;
                el.properties.push((name.to_string(), is_list));
            }
            Some("end_header") => break,
            Some(other) => return Err(err(ln, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(err(2, "header has no format line".into()));
    }
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("file ends inside element '{}'", el.name)))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => vertices.push(parse_vertex(el, &tok).map_err(|m| err(ln, m))?),
                "face" => parse_face(el, &tok, &mut faces).map_err(|m| err(ln, m))?,
                _ => {}
            }
        }
    }
    Ok(Parsed { vertices, faces })
}

fn parse_vertex(el: &Element, tok: &[&str]) -> std::result::Result<Point3, String> {
    if el.properties.iter().any(|(_, list)| *list) {
        return Err("list properties on vertices are not supported".into());
    }
    if tok.len() != el.properties.len() {
        return Err(format!("expected {} vertex values, found {}", el.properties.len(), tok.len()));
    }
    let mut p = [f64::NAN; 3];
    for ((name, _), v) in el.properties.iter().zip(tok) {
        let k = match name.as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => continue,
        };
        p[k] = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
    }
    if p.iter().any(|c| !c.is_finite()) {
        return Err("vertex lacks finite x, y and z".into());
    }
    Ok(p)
}

/// Scalar properties before the first list are skipped; that list is the
/// polygon, fan-triangulated.
fn parse_face(el: &Element, tok: &[&str], faces: &mut Vec<[usize; 3]>) -> std::result::Result<(), String> {
    let pos = el
        .properties
        .iter()
        .position(|(_, is_list)| *is_list)
        .ok_or("face element has no vertex index list")?;
    let n: usize = tok
        .get(pos)
        .ok_or("face line is truncated")?
        .parse()
        .map_err(|_| "bad list length".to_string())?;
    let idx = tok
        .get(pos + 1..pos + 1 + n)
        .ok_or("face line is truncated")?
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| format!("'{s}' is not a vertex index")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if idx.len() < 3 {
        return Err("faces need at least 3 vertices".into());
    }
    for i in 1..idx.len() - 1 {
        faces.push([idx[0], idx[i], idx[i + 1]]);
    }
    Ok(())
}

/// Vertices of an ASCII PLY file; other elements are ignored.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let parsed = parse(&read_text(path)?, path)?;
    if parsed.vertices.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "PLY file has no vertices".into(),
        });
    }
    PointCloud::new(parsed.vertices)
}

/// Vertices and faces of an ASCII PLY file; polygons are fan-triangulated.
pub fn read_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let parsed = parse(&read_text(path)?, path)?;
    TriangleMesh::new(parsed.vertices, parsed.faces)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 64 + 128);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).expect("string write");
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2]).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}
