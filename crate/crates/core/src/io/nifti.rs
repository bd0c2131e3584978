//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::scalar::{encode_f32, encode_i32, ScalarType};
use super::RawVolume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;
const DT_INT64: i16 = 1024;
const DT_UINT64: i16 = 1280;

fn scalar_type(code: i16) -> Option<ScalarType> {
    Some(match code {
        DT_UINT8 => ScalarType::U8,
        DT_INT16 => ScalarType::I16,
        DT_INT32 => ScalarType::I32,
        DT_FLOAT32 => ScalarType::F32,
        DT_FLOAT64 => ScalarType::F64,
        DT_INT8 => ScalarType::I8,
        DT_UINT16 => ScalarType::U16,
        DT_UINT32 => ScalarType::U32,
        DT_INT64 => ScalarType::I64,
        DT_UINT64 => ScalarType::U64,
        _ => return None,
    })
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub(crate) fn read(path: &Path) -> Result<RawVolume> {
    let b = read_all(path)?;
    if b.len() < HEADER_SIZE {
        return Err(Error::format(path, "file shorter than a NIfTI-1 header"));
    }
    match i32_at(&b, 0) {
        348 => {}
        v if v.swap_bytes() == 348 => {
            return Err(Error::format(path, "big-endian NIfTI is not supported"))
        }
        v => return Err(Error::format(path, format!("sizeof_hdr is {v}, not 348"))),
    }
    if &b[344..347] != b"n+1" {
        return Err(Error::format(path, "missing n+1 magic (only single-file NIfTI-1 is supported)"));
    }
    let ndim = i16_at(&b, 40);
    let dim: Vec<i64> = (1..=7).map(|i| i16_at(&b, 40 + 2 * i) as i64).collect();
    let extra: i64 = dim[3..(ndim.clamp(3, 7) as usize)].iter().product();
    if !(3..=7).contains(&ndim) || extra != 1 || dim[..3].iter().any(|&d| d < 1) {
        return Err(Error::format(path, format!("non-3D payload (dim = {ndim}, {:?})", &dim)));
    }
    let datatype = i16_at(&b, 70);
    let st = scalar_type(datatype)
        .ok_or_else(|| Error::format(path, format!("unsupported datatype {datatype}")))?;

    let unit_scale = match b[123] & 0x07 {
        1 => 1000.0, // metres
        3 => 1e-3,   // microns
        _ => 1.0,
    };
    let spacing = [1, 2, 3].map(|i| f32_at(&b, 76 + 4 * i) as f64 * unit_scale);
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidSpacing(spacing));
    }

    let sform_code = i16_at(&b, 254);
    let qform_code = i16_at(&b, 252);
    let origin = if sform_code > 0 {
        [280, 296, 312].map(|o| f32_at(&b, o + 12) as f64 * unit_scale)
    } else if qform_code > 0 {
        [268, 272, 276].map(|o| f32_at(&b, o) as f64 * unit_scale)
    } else {
        [0.0; 3]
    };

    let vox_offset = f32_at(&b, 108).max(HEADER_SIZE as f32) as usize;
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];
    let count = dims.iter().product();
    if b.len() < vox_offset {
        return Err(Error::format(path, "vox_offset beyond end of file"));
    }
    let mut data = st.decode(&b[vox_offset..], count, path)?;

    let slope = f32_at(&b, 112) as f64;
    let inter = f32_at(&b, 116) as f64;
    let scaled = slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0);
    if scaled {
        data.iter_mut().for_each(|v| *v = *v * slope + inter);
    }
    Ok(RawVolume { dims, spacing, origin, data, integer_typed: st.is_integer() && !scaled })
}

fn header(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    put_i16(&mut h, 40, 3);
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * i, *d as i16);
    }
    for i in 4..8 {
        put_i16(&mut h, 40 + 2 * i, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0); // qfac
    for (i, s) in spacing.iter().enumerate() {
        put_f32(&mut h, 80 + 4 * i, *s as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    h[123] = 2; // mm
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    for (i, o) in origin.iter().enumerate() {
        put_f32(&mut h, 268 + 4 * i, *o as f32);
    }
    for (row, base) in [280usize, 296, 312].iter().enumerate() {
        put_f32(&mut h, base + 4 * row, spacing[row] as f32);
        put_f32(&mut h, base + 12, origin[row] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn write_bytes(path: &Path, head: Vec<u8>, payload: Vec<u8>) -> Result<()> {
    let gz = path.to_string_lossy().ends_with(".gz");
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    if gz {
        let mut enc = GzEncoder::new(std::io::BufWriter::new(file), Compression::fast());
        enc.write_all(&head).map_err(io)?;
        enc.write_all(&payload).map_err(io)?;
        enc.finish().map_err(io)?.flush().map_err(io)?;
    } else {
        let mut w = std::io::BufWriter::new(file);
        w.write_all(&head).map_err(io)?;
        w.write_all(&payload).map_err(io)?;
        w.flush().map_err(io)?;
    }
    Ok(())
}

pub(crate) fn write_f32(path: &Path, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: impl Iterator<Item = f32>) -> Result<()> {
    write_bytes(path, header(dims, spacing, origin, DT_FLOAT32, 32), encode_f32(data))
}

pub(crate) fn write_i32(path: &Path, dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: impl Iterator<Item = i32>) -> Result<()> {
    write_bytes(path, header(dims, spacing, origin, DT_INT32, 32), encode_i32(data))
}
