//! Grid container files: a MetaImage-style text header (`.mhd`) next to a
//! little-endian raw data file, x-fastest with interleaved channels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};
use crate::{BinaryImage3D, DisplacementField, ScalarImage3D, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Uint8,
    Float32,
}

impl ElementType {
    fn as_str(self) -> &'static str {
        match self {
            ElementType::Uint8 => "UINT8",
            ElementType::Float32 => "FLOAT32",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "UINT8" | "MET_UCHAR" => Some(ElementType::Uint8),
            "FLOAT32" | "MET_FLOAT" => Some(ElementType::Float32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Uint8 => 1,
            ElementType::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageHeader {
    pub grid: Grid,
    pub element_type: ElementType,
    pub channels: usize,
    pub data_file: PathBuf,
}

fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn format_header(grid: &Grid, ty: ElementType, channels: usize, data_file: &str) -> String {
    let join = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
    let mut s = String::new();
    writeln!(s, "ObjectType = Image").unwrap();
    writeln!(s, "NDims = 3").unwrap();
    writeln!(s, "BinaryData = True").unwrap();
    writeln!(s, "BinaryDataByteOrderMSB = False").unwrap();
    writeln!(s, "DimSize = {} {} {}", grid.dims[0], grid.dims[1], grid.dims[2]).unwrap();
    writeln!(s, "ElementSpacing = {}", join(grid.spacing)).unwrap();
    writeln!(s, "Offset = {}", join(grid.origin)).unwrap();
    writeln!(s, "ElementNumberOfChannels = {channels}").unwrap();
    writeln!(s, "ElementType = {}", ty.as_str()).unwrap();
    writeln!(s, "ElementDataFile = {data_file}").unwrap();
    s
}

fn write_image(path: &Path, grid: &Grid, ty: ElementType, channels: usize, bytes: &[u8]) -> Result<()> {
    let raw = raw_path(path);
    let name = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("unusable image path {}", path.display())))?;
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    fs::write(path, format_header(grid, ty, channels, name)).map_err(|e| Error::io(path, e))
}

/// Parse a header file; the data file path is resolved next to it.
pub fn read_header(path: impl AsRef<Path>) -> Result<ImageHeader> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = HashMap::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(offset, format!("expected 'Key = value', found '{trimmed}'")))?;
            keys.insert(k.trim().to_string(), (offset, v.trim().to_string()));
        }
        offset += line.len() as u64;
    }
    let get = |k: &str| {
        keys.get(k)
            .ok_or_else(|| Error::parse(offset, format!("missing header key {k}")))
    };
    let triple = |k: &str| -> Result<[f64; 3]> {
        let (at, v) = get(k)?;
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(*at, format!("{k}: invalid number in '{v}'")))?;
        parts
            .try_into()
            .map_err(|_| Error::parse(*at, format!("{k}: expected three values")))
    };

    let (at, ndims) = get("NDims")?;
    if ndims != "3" {
        return Err(Error::parse(*at, format!("NDims must be 3, found {ndims}")));
    }
    if let Some((at, msb)) = keys
        .get("BinaryDataByteOrderMSB")
        .or_else(|| keys.get("ElementByteOrderMSB"))
    {
        if !msb.eq_ignore_ascii_case("false") {
            return Err(Error::parse(*at, "only little-endian data is supported"));
        }
    }
    let dims_f = triple("DimSize")?;
    if dims_f.iter().any(|d| d.fract() != 0.0 || *d < 1.0) {
        return Err(Error::parse(get("DimSize")?.0, "DimSize must be positive integers"));
    }
    let dims = dims_f.map(|d| d as usize);
    let spacing = triple("ElementSpacing")?;
    let origin = match keys.get("Offset") {
        Some(_) => triple("Offset")?,
        None => [0.0; 3],
    };
    let (at, ty) = get("ElementType")?;
    let element_type =
        ElementType::parse(ty).ok_or_else(|| Error::parse(*at, format!("unsupported ElementType {ty}")))?;
    let channels = match keys.get("ElementNumberOfChannels") {
        Some((at, c)) => match c.as_str() {
            "1" => 1,
            "3" => 3,
            _ => {
                return Err(Error::parse(
                    *at,
                    format!("ElementNumberOfChannels must be 1 or 3, found {c}"),
                ))
            }
        },
        None => 1,
    };
    let (_, data) = get("ElementDataFile")?;
    let data_file = path.parent().unwrap_or(Path::new(".")).join(data);
    Ok(ImageHeader {
        grid: Grid::new(dims, spacing, origin)?,
        element_type,
        channels,
        data_file,
    })
}

fn read_values(path: &Path, want_channels: usize) -> Result<(Grid, Vec<f64>)> {
    let h = read_header(path)?;
    if h.channels != want_channels {
        return Err(Error::InvalidParameter(format!(
            "{} has {} channel(s), expected {want_channels}",
            path.display(),
            h.channels
        )));
    }
    let bytes = fs::read(&h.data_file).map_err(|e| Error::io(&h.data_file, e))?;
    let count = h.grid.len() * h.channels;
    let expected = count * h.element_type.size();
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected) as u64,
            format!(
                "{}: expected {expected} bytes, found {}",
                h.data_file.display(),
                bytes.len()
            ),
        ));
    }
    let values = match h.element_type {
        ElementType::Uint8 => bytes.iter().map(|&b| b as f64).collect(),
        ElementType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    Ok((h.grid, values))
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn write_binary_image(img: &BinaryImage3D, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&b| b as u8).collect();
    write_image(path.as_ref(), img.grid(), ElementType::Uint8, 1, &bytes)
}

/// Any nonzero voxel reads as occupied.
pub fn read_binary_image(path: impl AsRef<Path>) -> Result<BinaryImage3D> {
    let (grid, v) = read_values(path.as_ref(), 1)?;
    Volume::new(grid, v.into_iter().map(|x| x != 0.0).collect())
}

pub fn write_scalar_image(img: &ScalarImage3D, path: impl AsRef<Path>) -> Result<()> {
    let bytes = f32_bytes(img.data().iter().copied());
    write_image(path.as_ref(), img.grid(), ElementType::Float32, 1, &bytes)
}

pub fn read_scalar_image(path: impl AsRef<Path>) -> Result<ScalarImage3D> {
    let (grid, v) = read_values(path.as_ref(), 1)?;
    Volume::new(grid, v)
}

pub fn write_field(field: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    let bytes = f32_bytes(field.data().iter().flat_map(|v| [v.x, v.y, v.z]));
    write_image(path.as_ref(), field.grid(), ElementType::Float32, 3, &bytes)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let (grid, v) = read_values(path.as_ref(), 3)?;
    Volume::new(grid, v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}
