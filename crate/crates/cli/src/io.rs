//! File-type dispatch shared by the subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use morphforge::image_io::{self, ElementType};
use morphforge::{read_femesh, read_stl, write_femesh, write_stl, FEMesh, StlFormat, TriangleMesh};

pub enum Mesh {
    Surface(TriangleMesh),
    Volume(FEMesh),
}

fn is_stl(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("stl"))
}

/// `.stl` files are surfaces; anything else is read as a neutral FE mesh.
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    Ok(if is_stl(path) {
        Mesh::Surface(read_stl(path)?)
    } else {
        Mesh::Volume(read_femesh(path)?)
    })
}

pub fn write_surface(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    write_stl(mesh, path, StlFormat::Ascii).with_context(|| format!("writing {}", path.display()))
}

pub fn write_volume(mesh: &FEMesh, path: &Path) -> Result<()> {
    write_femesh(mesh, path).with_context(|| format!("writing {}", path.display()))
}

pub fn image_type(path: &Path) -> Result<(ElementType, usize)> {
    let h = image_io::read_header(path)?;
    Ok((h.element_type, h.channels))
}
