//! Strict EVM ABI encoding/decoding (head/tail layout, 32-byte words).
//!
//! The decoder only accepts canonical encodings: zero padding where the
//! layout demands it, tail offsets exactly where the encoder would place
//! them, and no trailing bytes.

use num_bigint::{BigInt, BigUint};

use super::{AbiType, CodecError};
use crate::value::CanonicalValue;

const WORD: usize = 32;

/// Encodes `values` as a function-return tuple of `types`.
pub fn encode_abi(values: &[CanonicalValue], types: &[AbiType]) -> Result<Vec<u8>, CodecError> {
    encode_components(values, types)
}

/// Decodes a function-return payload; every byte must be accounted for.
pub fn decode_abi(data: &[u8], types: &[AbiType]) -> Result<Vec<CanonicalValue>, CodecError> {
    let (values, consumed) = decode_components(data, types)?;
    if consumed != data.len() {
        return Err(CodecError::TrailingBytes(data.len() - consumed));
    }
    Ok(values)
}

fn is_dynamic(t: &AbiType) -> bool {
    match t {
        AbiType::Bytes | AbiType::Str | AbiType::Array(_) => true,
        AbiType::Tuple(ts) => ts.iter().any(is_dynamic),
        AbiType::FixedArray(t, _) => is_dynamic(t),
        _ => false,
    }
}

fn static_size(t: &AbiType) -> usize {
    match t {
        AbiType::Tuple(ts) => ts.iter().map(static_size).sum(),
        AbiType::FixedArray(t, k) => k * static_size(t),
        _ => WORD,
    }
}

fn head_size(t: &AbiType) -> usize {
    if is_dynamic(t) {
        WORD
    } else {
        static_size(t)
    }
}

fn kind_err(t: &AbiType, v: &CanonicalValue) -> CodecError {
    CodecError::TypeMismatch { expected: format!("{t:?}"), got: v.shape() }
}

fn encode_components(values: &[CanonicalValue], types: &[AbiType]) -> Result<Vec<u8>, CodecError> {
    if values.len() != types.len() {
        return Err(CodecError::ArityMismatch(values.len(), types.len()));
    }
    let head_len: usize = types.iter().map(head_size).sum();
    let mut head = Vec::with_capacity(head_len);
    let mut tail = Vec::new();
    for (v, t) in values.iter().zip(types) {
        if is_dynamic(t) {
            head.extend_from_slice(&usize_word(head_len + tail.len()));
            tail.extend_from_slice(&encode_one(v, t)?);
        } else {
            head.extend_from_slice(&encode_one(v, t)?);
        }
    }
    head.extend_from_slice(&tail);
    Ok(head)
}

fn encode_one(v: &CanonicalValue, t: &AbiType) -> Result<Vec<u8>, CodecError> {
    match (t, v) {
        (AbiType::Uint(bits), CanonicalValue::UInt(u)) => {
            if u.bits() > *bits as u64 {
                return Err(CodecError::OutOfRange(format!("uint{bits}")));
            }
            Ok(uint_word(u))
        }
        (AbiType::Int(bits), CanonicalValue::Int(i)) => {
            let half = BigInt::from(1) << (*bits as usize - 1);
            if *i >= half || *i < -&half {
                return Err(CodecError::OutOfRange(format!("int{bits}")));
            }
            Ok(int_word(i))
        }
        (AbiType::Bool, CanonicalValue::Bool(b)) => {
            let mut word = [0u8; WORD];
            word[WORD - 1] = u8::from(*b);
            Ok(word.to_vec())
        }
        (AbiType::Address, CanonicalValue::Address(a)) => {
            let mut word = [0u8; WORD];
            word[12..].copy_from_slice(a);
            Ok(word.to_vec())
        }
        (AbiType::FixedBytes(n), CanonicalValue::Bytes(b)) => {
            if b.len() != *n as usize {
                return Err(CodecError::OutOfRange(format!("bytes{n}")));
            }
            let mut word = [0u8; WORD];
            word[..b.len()].copy_from_slice(b);
            Ok(word.to_vec())
        }
        (AbiType::Bytes, CanonicalValue::Bytes(b)) => Ok(dyn_bytes(b)),
        (AbiType::Str, CanonicalValue::Str(s)) => Ok(dyn_bytes(s.as_bytes())),
        (AbiType::Tuple(ts), CanonicalValue::Tuple(vs)) => encode_components(vs, ts),
        (AbiType::Array(et), CanonicalValue::Array(vs)) => {
            let types = vec![(**et).clone(); vs.len()];
            let mut out = usize_word(vs.len()).to_vec();
            out.extend(encode_components(vs, &types)?);
            Ok(out)
        }
        (AbiType::FixedArray(et, k), CanonicalValue::Array(vs)) => {
            if vs.len() != *k {
                return Err(CodecError::ArityMismatch(vs.len(), *k));
            }
            let types = vec![(**et).clone(); *k];
            encode_components(vs, &types)
        }
        _ => Err(kind_err(t, v)),
    }
}

fn usize_word(n: usize) -> [u8; WORD] {
    let mut word = [0u8; WORD];
    word[WORD - 8..].copy_from_slice(&(n as u64).to_be_bytes());
    word
}

fn uint_word(u: &BigUint) -> Vec<u8> {
    let bytes = u.to_bytes_be();
    let mut word = vec![0u8; WORD];
    word[WORD - bytes.len()..].copy_from_slice(&bytes);
    word
}

fn int_word(i: &BigInt) -> Vec<u8> {
    let wrapped = if i.sign() == num_bigint::Sign::Minus {
        ((BigInt::from(1u8) << 256u32) + i).to_biguint().expect("wrapped value is positive")
    } else {
        i.to_biguint().expect("non-negative")
    };
    uint_word(&wrapped)
}

fn dyn_bytes(b: &[u8]) -> Vec<u8> {
    let mut out = usize_word(b.len()).to_vec();
    out.extend_from_slice(b);
    let padded = b.len().div_ceil(WORD) * WORD;
    out.resize(WORD + padded, 0);
    out
}

fn decode_components(
    data: &[u8],
    types: &[AbiType],
) -> Result<(Vec<CanonicalValue>, usize), CodecError> {
    let head_len: usize = types.iter().map(head_size).sum();
    if data.len() < head_len {
        return Err(CodecError::UnexpectedEnd(data.len()));
    }
    let mut values = Vec::with_capacity(types.len());
    let mut pos = 0usize;
    let mut tail_cursor = head_len;
    let mut any_dynamic = false;
    for t in types {
        if is_dynamic(t) {
            any_dynamic = true;
            let off = read_offset(&data[pos..pos + WORD])?;
            if off != tail_cursor {
                return Err(CodecError::BadOffset { found: off, expected: tail_cursor });
            }
            let (v, used) = decode_dynamic(&data[off..], t)?;
            values.push(v);
            tail_cursor = off + used;
            pos += WORD;
        } else {
            let size = static_size(t);
            if pos + size > data.len() {
                return Err(CodecError::UnexpectedEnd(pos));
            }
            values.push(decode_static(&data[pos..pos + size], t)?);
            pos += size;
        }
    }
    let consumed = if any_dynamic { tail_cursor } else { head_len };
    Ok((values, consumed))
}

fn decode_dynamic(data: &[u8], t: &AbiType) -> Result<(CanonicalValue, usize), CodecError> {
    match t {
        AbiType::Bytes | AbiType::Str => {
            if data.len() < WORD {
                return Err(CodecError::UnexpectedEnd(data.len()));
            }
            let len = read_offset(&data[..WORD])?;
            let padded = len.div_ceil(WORD) * WORD;
            if data.len() < WORD + padded {
                return Err(CodecError::UnexpectedEnd(data.len()));
            }
            let payload = &data[WORD..WORD + len];
            if let Some(i) = (WORD + len..WORD + padded).find(|&i| data[i] != 0) {
                return Err(CodecError::NonZeroPadding(i));
            }
            let value = match t {
                AbiType::Str => CanonicalValue::Str(
                    String::from_utf8(payload.to_vec()).map_err(|_| CodecError::InvalidUtf8)?,
                ),
                _ => CanonicalValue::Bytes(payload.to_vec()),
            };
            Ok((value, WORD + padded))
        }
        AbiType::Array(et) => {
            if data.len() < WORD {
                return Err(CodecError::UnexpectedEnd(data.len()));
            }
            let len = read_offset(&data[..WORD])?;
            let types = vec![(**et).clone(); len];
            let (values, used) = decode_components(&data[WORD..], &types)?;
            Ok((CanonicalValue::Array(values), WORD + used))
        }
        AbiType::FixedArray(et, k) => {
            let types = vec![(**et).clone(); *k];
            let (values, used) = decode_components(data, &types)?;
            Ok((CanonicalValue::Array(values), used))
        }
        AbiType::Tuple(ts) => {
            let (values, used) = decode_components(data, ts)?;
            Ok((CanonicalValue::Tuple(values), used))
        }
        _ => unreachable!("static type in dynamic position"),
    }
}

fn decode_static(word: &[u8], t: &AbiType) -> Result<CanonicalValue, CodecError> {
    match t {
        AbiType::Uint(bits) => {
            let nbytes = *bits as usize / 8;
            if let Some(i) = word[..WORD - nbytes].iter().position(|&b| b != 0) {
                return Err(CodecError::NonZeroPadding(i));
            }
            Ok(CanonicalValue::UInt(BigUint::from_bytes_be(word)))
        }
        AbiType::Int(bits) => {
            let nbytes = *bits as usize / 8;
            let negative = word[WORD - nbytes] & 0x80 != 0;
            let fill = if negative { 0xff } else { 0x00 };
            if let Some(i) = word[..WORD - nbytes].iter().position(|&b| b != fill) {
                return Err(CodecError::NonZeroPadding(i));
            }
            let unsigned = BigInt::from(BigUint::from_bytes_be(word));
            let value = if word[0] & 0x80 != 0 {
                unsigned - (BigInt::from(1) << 256)
            } else {
                unsigned
            };
            Ok(CanonicalValue::Int(value))
        }
        AbiType::Bool => {
            if word[..WORD - 1].iter().any(|&b| b != 0) || word[WORD - 1] > 1 {
                return Err(CodecError::InvalidBool);
            }
            Ok(CanonicalValue::Bool(word[WORD - 1] == 1))
        }
        AbiType::Address => {
            if let Some(i) = word[..12].iter().position(|&b| b != 0) {
                return Err(CodecError::NonZeroPadding(i));
            }
            let mut addr = [0u8; 20];
            addr.copy_from_slice(&word[12..WORD]);
            Ok(CanonicalValue::Address(addr))
        }
        AbiType::FixedBytes(n) => {
            let n = *n as usize;
            if let Some(i) = (n..WORD).find(|&i| word[i] != 0) {
                return Err(CodecError::NonZeroPadding(i));
            }
            Ok(CanonicalValue::Bytes(word[..n].to_vec()))
        }
        AbiType::Tuple(ts) => {
            let (values, _) = decode_components(word, ts)?;
            Ok(CanonicalValue::Tuple(values))
        }
        AbiType::FixedArray(et, k) => {
            let types = vec![(**et).clone(); *k];
            let (values, _) = decode_components(word, &types)?;
            Ok(CanonicalValue::Array(values))
        }
        _ => unreachable!("dynamic type in static position"),
    }
}

fn read_offset(word: &[u8]) -> Result<usize, CodecError> {
    if word[..WORD - 8].iter().any(|&b| b != 0) {
        return Err(CodecError::OutOfRange("offset".into()));
    }
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&word[WORD - 8..]);
    Ok(u64::from_be_bytes(buf) as usize)
}
