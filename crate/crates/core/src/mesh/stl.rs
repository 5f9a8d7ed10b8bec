use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::Vec3;

const HEADER_LEN: usize = 80;
const FACET_LEN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StlFormat {
    Ascii,
    Binary,
}

/// Read an ASCII or binary STL file.
///
/// Vertices are merged only when their coordinates are bitwise equal.
/// Facets that collapse after merging are dropped with a warning.
pub fn read_stl(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stl(&bytes)
}

pub(crate) fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh> {
    let mut builder = Builder::default();
    if looks_binary(bytes) {
        parse_binary(bytes, &mut builder)?;
    } else if starts_with_solid(bytes) {
        parse_ascii(bytes, &mut builder)?;
    } else if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::parse(
            bytes.len() as u64,
            "file too short for a binary STL header",
        ));
    } else {
        parse_binary(bytes, &mut builder)?;
    }
    builder.finish()
}

fn starts_with_solid(bytes: &[u8]) -> bool {
    let trimmed = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .map_or(&[][..], |i| &bytes[i..]);
    trimmed.len() >= 5 && trimmed[..5].eq_ignore_ascii_case(b"solid")
}

fn looks_binary(bytes: &[u8]) -> bool {
    if bytes.len() < HEADER_LEN + 4 {
        return false;
    }
    let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
    count.checked_mul(FACET_LEN).and_then(|n| n.checked_add(HEADER_LEN + 4)) == Some(bytes.len())
}

#[derive(Default)]
struct Builder {
    index: HashMap<[u64; 3], usize>,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    dropped: usize,
}

impl Builder {
    fn vertex(&mut self, p: Vec3) -> usize {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }

    fn facet(&mut self, corners: [Vec3; 3]) {
        let t = corners.map(|p| self.vertex(p));
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            self.dropped += 1;
        } else {
            self.triangles.push(t);
        }
    }

    fn finish(self) -> Result<TriangleMesh> {
        if self.dropped > 0 {
            log::warn!("dropped {} degenerate facet(s) with repeated vertices", self.dropped);
        }
        if self.triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        TriangleMesh::new(self.vertices, self.triangles)
    }
}

fn parse_binary(bytes: &[u8], builder: &mut Builder) -> Result<()> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::parse(bytes.len() as u64, "truncated binary STL header"));
    }
    let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN + 4..];
    let needed = count as u64 * FACET_LEN as u64;
    if (body.len() as u64) < needed {
        let complete = body.len() / FACET_LEN;
        return Err(Error::parse(
            (HEADER_LEN + 4 + complete * FACET_LEN) as u64,
            format!("binary STL declares {count} facets but facet {complete} is truncated"),
        ));
    }
    let read_f32 = |off: usize| f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64;
    for f in 0..count {
        let base = f * FACET_LEN + 12;
        let corner = |k: usize| {
            let o = base + 12 * k;
            Vec3::new(read_f32(o), read_f32(o + 4), read_f32(o + 8))
        };
        let corners = [corner(0), corner(1), corner(2)];
        if corners.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::parse(
                (HEADER_LEN + 4 + f * FACET_LEN) as u64,
                "non-finite vertex coordinate",
            ));
        }
        builder.facet(corners);
    }
    Ok(())
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(u64, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("\u{fffd}");
        Some((start as u64, text))
    }

    fn skip_line(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        match self.next() {
            Some((_, t)) if t.eq_ignore_ascii_case(word) => Ok(()),
            Some((off, t)) => Err(Error::parse(off, format!("expected '{word}', found '{t}'"))),
            None => Err(Error::parse(
                self.pos as u64,
                format!("expected '{word}', found end of file"),
            )),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.next() {
            Some((off, t)) => match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(off, format!("invalid number '{t}'"))),
            },
            None => Err(Error::parse(self.pos as u64, "expected a number, found end of file")),
        }
    }

    fn point(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.number()?, self.number()?, self.number()?))
    }
}

fn parse_ascii(bytes: &[u8], builder: &mut Builder) -> Result<()> {
    let mut tok = Tokens { bytes, pos: 0 };
    tok.expect("solid")?;
    // Solid name runs to end of line.
    tok.skip_line();
    loop {
        match tok.next() {
            Some((_, t)) if t.eq_ignore_ascii_case("facet") => {
                tok.expect("normal")?;
                tok.point()?;
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut corners = [Vec3::zeros(); 3];
                for c in &mut corners {
                    tok.expect("vertex")?;
                    *c = tok.point()?;
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                builder.facet(corners);
            }
            Some((_, t)) if t.eq_ignore_ascii_case("endsolid") => return Ok(()),
            Some((off, t)) => {
                return Err(Error::parse(
                    off,
                    format!("expected 'facet' or 'endsolid', found '{t}'"),
                ))
            }
            None => return Err(Error::parse(bytes.len() as u64, "missing 'endsolid'")),
        }
    }
}

fn facet_normal(mesh: &TriangleMesh, i: usize) -> Vec3 {
    let [a, b, c] = mesh.triangle(i);
    (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vec3::zeros)
}

pub fn write_stl(mesh: &TriangleMesh, path: impl AsRef<Path>, format: StlFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_stl(mesh, format)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_stl(mesh: &TriangleMesh, format: StlFormat) -> Result<Vec<u8>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut out = Vec::new();
    match format {
        StlFormat::Ascii => {
            out.extend_from_slice(b"solid morphforge\n");
            for i in 0..mesh.triangles().len() {
                let n = facet_normal(mesh, i);
                out.extend_from_slice(
                    format!("  facet normal {:e} {:e} {:e}\n    outer loop\n", n.x, n.y, n.z).as_bytes(),
                );
                for p in mesh.triangle(i) {
                    out.extend_from_slice(format!("      vertex {:e} {:e} {:e}\n", p.x, p.y, p.z).as_bytes());
                }
                out.extend_from_slice(b"    endloop\n  endfacet\n");
            }
            out.extend_from_slice(b"endsolid morphforge\n");
        }
        StlFormat::Binary => {
            let count = u32::try_from(mesh.triangles().len())
                .map_err(|_| Error::InvalidMesh("too many facets for binary STL".into()))?;
            let mut header = [0u8; HEADER_LEN];
            let tag = b"morphforge binary STL";
            header[..tag.len()].copy_from_slice(tag);
            out.extend_from_slice(&header);
            out.extend_from_slice(&count.to_le_bytes());
            for i in 0..mesh.triangles().len() {
                let n = facet_normal(mesh, i);
                for p in std::iter::once(n).chain(mesh.triangle(i)) {
                    for c in p.iter() {
                        out.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
                out.extend_from_slice(&0u16.to_le_bytes());
            }
        }
    }
    Ok(out)
}
