//! MetaImage reader and writer: `.mha` (header and data in one file) and
//! `.mhd` with a detached raw payload.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::ZlibDecoder;

use super::scalar::{encode_f32, encode_i32, ScalarType};
use super::RawVolume;
use crate::error::{Error, Result};

fn element_type(name: &str) -> Option<ScalarType> {
    Some(match name {
        "MET_CHAR" => ScalarType::I8,
        "MET_UCHAR" => ScalarType::U8,
        "MET_SHORT" => ScalarType::I16,
        "MET_USHORT" => ScalarType::U16,
        "MET_INT" | "MET_LONG" => ScalarType::I32,
        "MET_UINT" | "MET_ULONG" => ScalarType::U32,
        "MET_LONG_LONG" => ScalarType::I64,
        "MET_ULONG_LONG" => ScalarType::U64,
        "MET_FLOAT" => ScalarType::F32,
        "MET_DOUBLE" => ScalarType::F64,
        _ => return None,
    })
}

fn parse_floats(path: &Path, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad {key} value {v:?}"))))
        .collect()
}

fn is_true(v: &str) -> bool {
    v.eq_ignore_ascii_case("true") || v == "1"
}

pub(crate) fn read(path: &Path) -> Result<RawVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;

    let mut ndims = None;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = [0.0; 3];
    let mut etype = None;
    let mut compressed = false;
    let mut data_file = None;
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&c| c == b'\n').map_or(bytes.len(), |e| pos + e);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| Error::format(path, "non-text header line"))?
            .trim();
        pos = end + 1;
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("malformed header line {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "NDims" => ndims = v.parse::<usize>().ok(),
            "DimSize" => dims = Some(parse_floats(path, k, v)?),
            "ElementSpacing" | "ElementSize" if spacing.is_none() || k == "ElementSpacing" => {
                spacing = Some(parse_floats(path, k, v)?)
            }
            "Offset" | "Origin" | "Position" => {
                let o = parse_floats(path, k, v)?;
                if o.len() >= 3 {
                    origin = [o[0], o[1], o[2]];
                }
            }
            "ElementType" => {
                etype = Some(
                    element_type(v)
                        .ok_or_else(|| Error::format(path, format!("unsupported ElementType {v}")))?,
                )
            }
            "CompressedData" => compressed = is_true(v),
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if is_true(v) => {
                return Err(Error::format(path, "big-endian MetaImage is not supported"))
            }
            "ElementNumberOfChannels" if v != "1" => {
                return Err(Error::format(path, "multi-channel MetaImage is not supported"))
            }
            "ElementDataFile" => {
                data_file = Some(v.to_string());
                break;
            }
            _ => {}
        }
    }

    let dims_f = dims.ok_or_else(|| Error::format(path, "missing DimSize"))?;
    let nd = ndims.unwrap_or(dims_f.len());
    if nd != 3 || dims_f.len() != 3 || dims_f.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
        return Err(Error::format(path, format!("non-3D payload (NDims = {nd}, DimSize = {dims_f:?})")));
    }
    let sp = spacing.ok_or_else(|| Error::format(path, "missing spacing metadata (ElementSpacing)"))?;
    if sp.len() != 3 {
        return Err(Error::format(path, "ElementSpacing must have 3 entries"));
    }
    let spacing = [sp[0], sp[1], sp[2]];
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidSpacing(spacing));
    }
    let st = etype.ok_or_else(|| Error::format(path, "missing ElementType"))?;
    let data_file = data_file.ok_or_else(|| Error::format(path, "missing ElementDataFile"))?;

    let payload = if data_file == "LOCAL" {
        bytes[pos.min(bytes.len())..].to_vec()
    } else {
        let raw_path = path.parent().unwrap_or(Path::new(".")).join(&data_file);
        std::fs::read(&raw_path).map_err(|e| Error::io(raw_path, e))?
    };
    let payload = if compressed {
        let mut out = Vec::new();
        ZlibDecoder::new(&payload[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("zlib: {e}")))?;
        out
    } else {
        payload
    };
    let dims = [dims_f[0] as usize, dims_f[1] as usize, dims_f[2] as usize];
    let data = st.decode(&payload, dims.iter().product(), path)?;
    Ok(RawVolume { dims, spacing, origin, data, integer_typed: st.is_integer() })
}

fn header(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], etype: &str, data_file: &str) -> String {
    format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         CompressedData = False\nTransformMatrix = 1 0 0 0 1 0 0 0 1\nOffset = {} {} {}\n\
         ElementSpacing = {} {} {}\nDimSize = {} {} {}\nElementType = {etype}\nElementDataFile = {data_file}\n",
        origin[0], origin[1], origin[2], spacing[0], spacing[1], spacing[2], dims[0], dims[1], dims[2]
    )
}

fn write(path: &Path, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], etype: &str, payload: Vec<u8>) -> Result<()> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };
    let detached = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    if detached {
        let raw: PathBuf = path.with_extension("raw");
        let name = raw.file_name().unwrap().to_string_lossy().into_owned();
        std::fs::write(path, header(dims, spacing, origin, etype, &name)).map_err(io(path))?;
        std::fs::write(&raw, payload).map_err(io(&raw))?;
    } else {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io(path))?);
        f.write_all(header(dims, spacing, origin, etype, "LOCAL").as_bytes()).map_err(io(path))?;
        f.write_all(&payload).map_err(io(path))?;
        f.flush().map_err(io(path))?;
    }
    Ok(())
}

pub(crate) fn write_f32(path: &Path, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: impl Iterator<Item = f32>) -> Result<()> {
    write(path, dims, spacing, origin, "MET_FLOAT", encode_f32(data))
}

pub(crate) fn write_i32(path: &Path, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: impl Iterator<Item = i32>) -> Result<()> {
    write(path, dims, spacing, origin, "MET_INT", encode_i32(data))
}
