//! Neutral line-oriented FE mesh format.
//!
//! ```text
//! # comment
//! NODE <id> <x> <y> <z>
//! ELEM <id> <kind> <part> <n1> ... <nk>
//! ```
//!
//! Canonical output lists nodes in ascending id order followed by elements
//! in stored order, with coordinates at 17 significant digits so that a
//! read/write cycle reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Element, ElementKind, FEMesh};
use crate::error::{Error, Result};
use crate::Vec3;

pub const FEMESH_COORD_DIGITS: usize = 17;

pub fn read_femesh(path: impl AsRef<Path>) -> Result<FEMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_femesh(&text)
}

pub(crate) fn parse_femesh(text: &str) -> Result<FEMesh> {
    let mut nodes = BTreeMap::new();
    let mut elements = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len() as u64;
        let content = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        let Some((&keyword, rest)) = fields.split_first() else {
            continue;
        };
        let err = |msg: String| Error::parse(line_offset, msg);
        let int = |s: &str| s.parse::<u64>().map_err(|_| err(format!("invalid id '{s}'")));
        match keyword {
            "NODE" => {
                if rest.len() != 4 {
                    return Err(err(format!("NODE expects 4 fields, found {}", rest.len())));
                }
                let id = int(rest[0])?;
                let mut c = [0.0; 3];
                for (k, s) in rest[1..].iter().enumerate() {
                    c[k] = s
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("invalid coordinate '{s}'")))?;
                }
                if nodes.insert(id, Vec3::from(c)).is_some() {
                    return Err(err(format!("duplicate node id {id}")));
                }
            }
            "ELEM" => {
                if rest.len() < 3 {
                    return Err(err("ELEM expects id, kind, part and node ids".into()));
                }
                let id = int(rest[0])?;
                let kind: ElementKind = rest[1].parse().map_err(err)?;
                let ids = rest[3..].iter().map(|s| int(s)).collect::<Result<Vec<_>>>()?;
                if ids.len() != kind.arity() {
                    return Err(err(format!(
                        "element {id} of kind {kind} lists {} nodes, expected {}",
                        ids.len(),
                        kind.arity()
                    )));
                }
                elements.push(Element {
                    id,
                    kind,
                    part: rest[2].to_string(),
                    nodes: ids,
                });
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    FEMesh::new(nodes, elements)
}

pub(crate) fn format_femesh(mesh: &FEMesh) -> String {
    let mut out = String::new();
    out.push_str("# morphforge neutral FE mesh\n");
    for (id, p) in mesh.nodes() {
        let _ = writeln!(
            out,
            "NODE {id} {:.prec$e} {:.prec$e} {:.prec$e}",
            p.x,
            p.y,
            p.z,
            prec = FEMESH_COORD_DIGITS - 1
        );
    }
    for e in mesh.elements() {
        let _ = write!(out, "ELEM {} {} {}", e.id, e.kind, e.part);
        for n in &e.nodes {
            let _ = write!(out, " {n}");
        }
        out.push('\n');
    }
    out
}

pub fn write_femesh(mesh: &FEMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_femesh(mesh)).map_err(|e| Error::io(path, e))
}
