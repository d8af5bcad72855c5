//! ITNF model file format.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "ITNF"
//! version u32      currently 1
//! cfg_len u32      followed by cfg_len bytes of config JSON
//! voc_len u32      followed by voc_len bytes of the compact vocabulary
//!                  (count u32, then per piece: flag u8, len u8, bytes)
//! n_param u32
//! then per parameter:
//!   name_len u16, name bytes (utf-8)
//!   rows u32, cols u32
//!   rows*cols f16 values, row-major
//! ```
//!
//! Parameters are stored at float16 precision; training finishes by
//! quantizing weights to f16-representable values so a save/load cycle is
//! bit-exact.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{ItnError, Result};

use super::net::Params;

pub const MAGIC: &[u8; 4] = b"ITNF";
pub const FORMAT_VERSION: u32 = 1;

/// IEEE 754 binary16 encode with round-to-nearest-even.
pub fn f32_to_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let mant = bits & 0x007F_FFFF;

    if exp == 0xFF {
        // Inf or NaN.
        return if mant != 0 {
            sign | 0x7E00
        } else {
            sign | 0x7C00
        };
    }
    let unbiased = exp - 127;
    let half_exp = unbiased + 15;
    if half_exp >= 0x1F {
        return sign | 0x7C00; // overflow to inf
    }
    if half_exp <= 0 {
        // Subnormal half or zero.
        if half_exp < -10 {
            return sign;
        }
        let mant = mant | 0x0080_0000;
        let shift = (14 - half_exp) as u32;
        let halfway = 1u32 << (shift - 1);
        let rest = mant & ((1 << shift) - 1);
        let mut hm = mant >> shift;
        if rest > halfway || (rest == halfway && hm & 1 == 1) {
            hm += 1;
        }
        return sign | hm as u16;
    }
    let halfway = 0x1000u32;
    let rest = mant & 0x1FFF;
    let mut combined = ((half_exp as u32) << 10) | (mant >> 13);
    if rest > halfway || (rest == halfway && combined & 1 == 1) {
        combined += 1; // may carry into the exponent, which is correct
    }
    sign | combined as u16
}

/// IEEE 754 binary16 decode.
pub fn f16_to_f32(h: u16) -> f32 {
    let sign = ((h >> 15) & 1) as u32;
    let exp = ((h >> 10) & 0x1F) as u32;
    let mant = (h & 0x3FF) as u32;
    if exp == 0 {
        // Subnormal: mant * 2^-24, computed exactly.
        let magnitude = mant as f32 / 16_777_216.0;
        return if sign == 1 { -magnitude } else { magnitude };
    }
    if exp == 0x1F {
        let bits = (sign << 31) | 0x7F80_0000 | (mant << 13);
        return f32::from_bits(bits);
    }
    f32::from_bits((sign << 31) | ((exp + 112) << 23) | (mant << 13))
}

/// Round every parameter to its f16-representable value.
pub fn quantize_params(params: &mut Params<f32>) {
    for name in params.order.clone() {
        params
            .get_mut(&name)
            .mapv_inplace(|v| f16_to_f32(f32_to_f16(v)));
    }
}

pub fn write_model<W: Write>(
    writer: &mut W,
    config_json: &str,
    vocab_block: &[u8],
    params: &Params<f32>,
) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let cfg = config_json.as_bytes();
    writer.write_all(&(cfg.len() as u32).to_le_bytes())?;
    writer.write_all(cfg)?;
    writer.write_all(&(vocab_block.len() as u32).to_le_bytes())?;
    writer.write_all(vocab_block)?;
    writer.write_all(&(params.order.len() as u32).to_le_bytes())?;
    for name in &params.order {
        let tensor = params.get(name);
        let bytes = name.as_bytes();
        writer.write_all(&(bytes.len() as u16).to_le_bytes())?;
        writer.write_all(bytes)?;
        let (rows, cols) = tensor.dim();
        writer.write_all(&(rows as u32).to_le_bytes())?;
        writer.write_all(&(cols as u32).to_le_bytes())?;
        for &v in tensor.iter() {
            writer.write_all(&f32_to_f16(v).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(reader: &mut R) -> Result<(String, Vec<u8>, Params<f32>)> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ItnError::ModelFile(format!(
            "bad magic {magic:?}, expected ITNF"
        )));
    }
    let version = read_u32(reader)?;
    if version != FORMAT_VERSION {
        return Err(ItnError::ModelFile(format!(
            "unsupported format version {version}"
        )));
    }
    let cfg_len = read_u32(reader)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    reader.read_exact(&mut cfg)?;
    let voc_len = read_u32(reader)? as usize;
    let mut voc = vec![0u8; voc_len];
    reader.read_exact(&mut voc)?;
    let n_params = read_u32(reader)? as usize;
    let mut params = Params::new();
    for _ in 0..n_params {
        let mut len2 = [0u8; 2];
        reader.read_exact(&mut len2)?;
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ItnError::ModelFile("non-utf8 parameter name".into()))?;
        let rows = read_u32(reader)? as usize;
        let cols = read_u32(reader)? as usize;
        let mut data = vec![0u8; rows * cols * 2];
        reader.read_exact(&mut data)?;
        let values: Vec<f32> = data
            .chunks_exact(2)
            .map(|c| f16_to_f32(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| ItnError::ModelFile(format!("bad tensor shape: {e}")))?;
        params.insert(&name, tensor);
    }
    let cfg = String::from_utf8(cfg).map_err(|_| ItnError::ModelFile("non-utf8 config".into()))?;
    Ok((cfg, voc, params))
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_f16_encodings() {
        assert_eq!(f32_to_f16(0.0), 0x0000);
        assert_eq!(f32_to_f16(-0.0), 0x8000);
        assert_eq!(f32_to_f16(1.0), 0x3C00);
        assert_eq!(f32_to_f16(-2.0), 0xC000);
        assert_eq!(f32_to_f16(0.5), 0x3800);
        assert_eq!(f32_to_f16(65504.0), 0x7BFF);
        assert_eq!(f32_to_f16(65536.0), 0x7C00);
        assert_eq!(f32_to_f16(f32::INFINITY), 0x7C00);
        assert_eq!(f32_to_f16(f32::from_bits(0x3880_0000)), 0x0400); // 2^-14, smallest normal
        assert_eq!(f32_to_f16(f32::from_bits(0x3380_0000)), 0x0001); // 2^-24, smallest subnormal
    }

    #[test]
    fn f16_round_trip_all_values() {
        for h in 0u16..=u16::MAX {
            let f = f16_to_f32(h);
            if f.is_nan() {
                assert!(f16_to_f32(f32_to_f16(f)).is_nan());
            } else {
                assert_eq!(f32_to_f16(f), h, "half bits 0x{h:04x}");
            }
        }
    }

    #[test]
    fn decode_known_values() {
        assert_eq!(f16_to_f32(0x3C00), 1.0);
        assert_eq!(f16_to_f32(0x3800), 0.5);
        assert_eq!(f16_to_f32(0x7BFF), 65504.0);
        assert!(f16_to_f32(0x7C00).is_infinite());
        assert_eq!(f16_to_f32(0x0001), f32::from_bits(0x3380_0000));
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut params = Params::<f32>::new();
        params.insert("a", Array2::from_shape_vec((2, 3), vec![0.1, -0.2, 0.3, 1.5, -2.5, 0.0]).unwrap());
        params.insert("b", Array2::zeros((1, 4)));
        quantize_params(&mut params);
        let mut buf = Vec::new();
        write_model(&mut buf, "{\"x\":1}", b"vocabbytes", &params).unwrap();
        let (cfg, voc, loaded) = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(cfg, "{\"x\":1}");
        assert_eq!(voc, b"vocabbytes");
        assert_eq!(loaded.order, params.order);
        for name in &params.order {
            assert_eq!(loaded.get(name), params.get(name));
        }
        // Second generation is byte-identical.
        let mut buf2 = Vec::new();
        write_model(&mut buf2, "{\"x\":1}", b"vocabbytes", &loaded).unwrap();
        assert_eq!(buf, buf2);
    }
}
