//! Little-endian scalar payload decoding shared by the volume codecs.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::I64 | ScalarType::U64 | ScalarType::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    /// Decodes `count` values; every supported type fits losslessly in f64
    /// except 64-bit integers beyond 2^53, which no CT or label data reaches.
    pub fn decode(self, bytes: &[u8], count: usize, path: &Path) -> Result<Vec<f64>> {
        let need = count * self.size();
        if bytes.len() < need {
            return Err(Error::format(
                path,
                format!("payload has {} bytes, expected {need}", bytes.len()),
            ));
        }
        let b = &bytes[..need];
        macro_rules! dec {
            ($t:ty) => {
                b.chunks_exact(std::mem::size_of::<$t>())
                    .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            };
        }
        Ok(match self {
            ScalarType::I8 => dec!(i8),
            ScalarType::U8 => dec!(u8),
            ScalarType::I16 => dec!(i16),
            ScalarType::U16 => dec!(u16),
            ScalarType::I32 => dec!(i32),
            ScalarType::U32 => dec!(u32),
            ScalarType::I64 => dec!(i64),
            ScalarType::U64 => dec!(u64),
            ScalarType::F32 => dec!(f32),
            ScalarType::F64 => dec!(f64),
        })
    }
}

pub(crate) fn encode_f32(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn encode_i32(values: impl Iterator<Item = i32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}
