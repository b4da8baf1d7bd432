//! MetaImage (`.mhd` + `.raw`) reading and writing, plus NIfTI-1 reading.
//!
//! Payloads are little-endian and uncompressed. Only axis-aligned images are
//! accepted: a `TransformMatrix` other than identity is rejected, and an
//! `AnatomicalOrientation` whose third letter is not `S` (z increasing toward
//! the feet) is rejected as well.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt};
use serde::{Deserialize, Serialize};

use super::{Grid, LabelVolume, Volume3D};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeFormat {
    MhdRaw,
    Nifti,
}

impl VolumeFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".mhd") || name.ends_with(".mha") {
            Some(VolumeFormat::MhdRaw)
        } else if name.ends_with(".nii") {
            Some(VolumeFormat::Nifti)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Short,
    UChar,
    Float,
}

impl ElementType {
    fn tag(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "MET_SHORT" => Ok(ElementType::Short),
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_FLOAT" => Ok(ElementType::Float),
            other => Err(Error::UnsupportedElementType(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }
}

pub fn read_volume(path: impl AsRef<Path>, format: VolumeFormat) -> Result<Volume3D> {
    match format {
        VolumeFormat::MhdRaw => read_mhd(path),
        VolumeFormat::Nifti => read_nifti(path),
    }
}

/// Reads a volume, picking the format from the file extension.
pub fn read_volume_auto(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let format = VolumeFormat::from_path(path).ok_or_else(|| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: "unrecognised file extension".into(),
    })?;
    read_volume(path, format)
}

/// Reads a label volume; every voxel must hold an integer in `0..=255`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let v = read_volume_auto(path)?;
    let mut labels = Vec::with_capacity(v.data().len());
    for &x in v.data() {
        if x.fract() != 0.0 || !(0.0..=255.0).contains(&x) {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: format!("non-label voxel value {x}"),
            });
        }
        labels.push(x as u8);
    }
    LabelVolume::from_vec(*v.grid(), labels)
}

struct MhdHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    element: ElementType,
    data_file: String,
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let bad = || Error::MalformedHeader { path: path.to_path_buf(), reason: format!("{key} = `{value}`") };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| bad())?);
    }
    out.try_into().map_err(|_| bad())
}

fn parse_mhd_header(path: &Path, text: &str) -> Result<(MhdHeader, usize)> {
    let malformed = |reason: String| Error::MalformedHeader { path: path.to_path_buf(), reason };
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut element = None;
    let mut data_file = None;
    let mut consumed = 0;
    for line in text.split_inclusive('\n') {
        consumed += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| malformed(format!("expected `key = value`, got `{trimmed}`")))?;
        match key {
            "ObjectType" if value != "Image" => return Err(malformed(format!("ObjectType {value}"))),
            "NDims" if value != "3" => return Err(malformed(format!("NDims {value}, expected 3"))),
            "DimSize" => dims = Some(parse_triple::<usize>(path, key, value)?),
            "ElementSpacing" | "ElementSize" => spacing = parse_triple(path, key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_triple(path, key, value)?,
            "ElementType" => element = Some(ElementType::parse(value)?),
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if value.eq_ignore_ascii_case("true") => {
                return Err(malformed("big-endian payloads are not supported".into()))
            }
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(malformed("compressed payloads are not supported".into()))
            }
            "TransformMatrix" | "Rotation" | "Orientation" => {
                let m: Vec<f64> = value
                    .split_whitespace()
                    .map(|x| x.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| malformed(format!("{key} = `{value}`")))?;
                let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
                if m.len() != 9 || m.iter().zip(identity).any(|(a, b)| (a - b).abs() > 1e-6) {
                    return Err(Error::UnsupportedOrientation(format!("{key} = {value}")));
                }
            }
            "AnatomicalOrientation" => {
                if value.len() == 3 && !value.to_ascii_uppercase().ends_with('S') {
                    return Err(Error::UnsupportedOrientation(format!(
                        "AnatomicalOrientation {value}: z must run head to foot"
                    )));
                }
            }
            "ElementDataFile" => {
                data_file = Some(value.to_string());
                break;
            }
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| malformed("missing DimSize".into()))?;
    let element = element.ok_or_else(|| malformed("missing ElementType".into()))?;
    let data_file = data_file.ok_or_else(|| malformed("missing ElementDataFile".into()))?;
    Ok((MhdHeader { dims, spacing, origin, element, data_file }, consumed))
}

fn decode_payload(bytes: &[u8], element: ElementType, count: usize) -> Result<Vec<f32>> {
    let needed = count * element.size();
    if bytes.len() < needed {
        return Err(Error::ElementCountMismatch { expected: count, found: bytes.len() / element.size() });
    }
    let bytes = &bytes[..needed];
    Ok(match element {
        ElementType::UChar => bytes.iter().map(|&b| f32::from(b)).collect(),
        ElementType::Short => bytes.chunks_exact(2).map(|c| f32::from(LittleEndian::read_i16(c))).collect(),
        ElementType::Float => bytes.chunks_exact(4).map(LittleEndian::read_f32).collect(),
    })
}

pub fn read_mhd(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    // The header is ASCII; for LOCAL payloads only the prefix is text.
    let text = String::from_utf8_lossy(&raw);
    let (header, consumed) = parse_mhd_header(path, &text)?;
    let grid = Grid::new(header.dims, header.spacing, header.origin)?;
    let payload = if header.data_file == "LOCAL" {
        // lossy decoding may change byte lengths, so locate the payload in the raw bytes
        let marker = b"ElementDataFile";
        let pos = raw.windows(marker.len()).position(|w| w == marker).unwrap_or(0);
        let nl = raw[pos..].iter().position(|&b| b == b'\n').map(|p| pos + p + 1).unwrap_or(consumed);
        raw[nl..].to_vec()
    } else {
        let data_path = path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
        fs::read(&data_path).map_err(|e| Error::io(data_path, e))?
    };
    let data = decode_payload(&payload, header.element, grid.len())?;
    if payload.len() != grid.len() * header.element.size() {
        return Err(Error::ElementCountMismatch {
            expected: grid.len(),
            found: payload.len() / header.element.size(),
        });
    }
    Volume3D::from_vec(grid, data)
}

fn raw_path_for(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn write_mhd_bytes(path: &Path, grid: &Grid, element: ElementType, payload: &[u8]) -> Result<()> {
    let raw_path = raw_path_for(path);
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad output path {}", path.display())))?
        .to_string();
    let fmt3 = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         TransformMatrix = 1 0 0 0 1 0 0 0 1\n\
         Offset = {}\n\
         AnatomicalOrientation = RAS\n\
         ElementSpacing = {}\n\
         DimSize = {} {} {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        fmt3(grid.origin),
        fmt3(grid.spacing),
        grid.dims[0],
        grid.dims[1],
        grid.dims[2],
        element.tag(),
        raw_name
    );
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, header).map_err(|e| Error::io(path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Writes `v` as `path` (header) plus a sibling `.raw` payload. Values are
/// rounded and saturated when the element type is an integer type.
pub fn write_mhd(path: impl AsRef<Path>, v: &Volume3D, element: ElementType) -> Result<()> {
    let mut payload = Vec::with_capacity(v.data().len() * element.size());
    match element {
        ElementType::Float => {
            for &x in v.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        ElementType::Short => {
            for &x in v.data() {
                let s = x.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                payload.extend_from_slice(&s.to_le_bytes());
            }
        }
        ElementType::UChar => payload.extend(v.data().iter().map(|&x| x.round().clamp(0.0, 255.0) as u8)),
    }
    write_mhd_bytes(path.as_ref(), v.grid(), element, &payload)
}

/// Writes a label volume as `MET_UCHAR`.
pub fn write_labels(path: impl AsRef<Path>, v: &LabelVolume) -> Result<()> {
    write_mhd_bytes(path.as_ref(), v.grid(), ElementType::UChar, v.data())
}

/// Reads an uncompressed single-file NIfTI-1 (`.nii`) volume. Only the
/// voxel size and the qform offsets are used for geometry.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::MalformedHeader { path: path.to_path_buf(), reason: reason.into() };
    if bytes.len() < 348 {
        return Err(malformed("file shorter than a NIfTI-1 header"));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == 348 {
        parse_nifti::<LittleEndian>(path, &bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == 348 {
        parse_nifti::<BigEndian>(path, &bytes)
    } else {
        Err(malformed("sizeof_hdr is not 348"))
    }
}

fn parse_nifti<B: ByteOrder>(path: &Path, bytes: &[u8]) -> Result<Volume3D> {
    let malformed = |reason: String| Error::MalformedHeader { path: path.to_path_buf(), reason };
    if &bytes[344..347] != b"n+1" {
        return Err(malformed("magic is not `n+1` (only single-file NIfTI-1 is supported)".into()));
    }
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&bytes[40 + 2 * i..])).collect();
    if !(3..=4).contains(&dim[0]) || (dim[0] == 4 && dim[4] > 1) {
        return Err(malformed(format!("expected a 3D volume, dim = {dim:?}")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(malformed(format!("invalid dim {dim:?}")));
    }
    let datatype = B::read_i16(&bytes[70..]);
    let pixdim: Vec<f32> = (0..8).map(|i| B::read_f32(&bytes[76 + 4 * i..])).collect();
    let vox_offset = B::read_f32(&bytes[108..]) as usize;
    let slope = B::read_f32(&bytes[112..]);
    let inter = B::read_f32(&bytes[116..]);
    let origin = [
        f64::from(B::read_f32(&bytes[268..])),
        f64::from(B::read_f32(&bytes[272..])),
        f64::from(B::read_f32(&bytes[276..])),
    ];
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let spacing = [f64::from(pixdim[1]), f64::from(pixdim[2]), f64::from(pixdim[3])];
    let grid = Grid::new(dims, spacing, origin)?;
    let n = grid.len();
    let payload = bytes.get(vox_offset.max(348)..).unwrap_or(&[]);
    let elem = match datatype {
        2 => 1,
        4 | 512 => 2,
        8 | 16 => 4,
        other => return Err(Error::UnsupportedElementType(format!("NIfTI datatype {other}"))),
    };
    if payload.len() < n * elem {
        return Err(Error::ElementCountMismatch { expected: n, found: payload.len() / elem });
    }
    let mut rdr = Cursor::new(payload);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let x = match datatype {
            2 => f32::from(rdr.read_u8().map_err(|e| Error::io(path, e))?),
            4 => f32::from(rdr.read_i16::<B>().map_err(|e| Error::io(path, e))?),
            512 => f32::from(rdr.read_u16::<B>().map_err(|e| Error::io(path, e))?),
            8 => rdr.read_i32::<B>().map_err(|e| Error::io(path, e))? as f32,
            _ => rdr.read_f32::<B>().map_err(|e| Error::io(path, e))?,
        };
        data.push(x);
    }
    if slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        for x in &mut data {
            *x = *x * slope + inter;
        }
    }
    Volume3D::from_vec(grid, data)
}
