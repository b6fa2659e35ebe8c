//! Strict Borsh-style encoding/decoding: little-endian fixed-width
//! integers, u32 length prefixes, no padding, no trailing bytes.

use num_bigint::{BigInt, BigUint, Sign};

use super::{BorshType, CodecError};
use crate::value::CanonicalValue;

/// Encodes `values` as the concatenation of their Borsh forms.
pub fn encode_borsh(values: &[CanonicalValue], types: &[BorshType]) -> Result<Vec<u8>, CodecError> {
    if values.len() != types.len() {
        return Err(CodecError::ArityMismatch(values.len(), types.len()));
    }
    let mut out = Vec::new();
    for (v, t) in values.iter().zip(types) {
        encode_one(v, t, &mut out)?;
    }
    Ok(out)
}

/// Decodes a payload; every byte must be consumed.
pub fn decode_borsh(data: &[u8], types: &[BorshType]) -> Result<Vec<CanonicalValue>, CodecError> {
    let mut cursor = Cursor { data, pos: 0 };
    let values = types
        .iter()
        .map(|t| decode_one(&mut cursor, t))
        .collect::<Result<Vec<_>, _>>()?;
    if cursor.pos != data.len() {
        return Err(CodecError::TrailingBytes(data.len() - cursor.pos));
    }
    Ok(values)
}

fn kind_err(t: &BorshType, v: &CanonicalValue) -> CodecError {
    CodecError::TypeMismatch { expected: format!("{t:?}"), got: v.shape() }
}

fn encode_one(v: &CanonicalValue, t: &BorshType, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match (t, v) {
        (BorshType::Uint(bits), CanonicalValue::UInt(u)) => {
            if u.bits() > *bits as u64 {
                return Err(CodecError::OutOfRange(format!("u{bits}")));
            }
            out.extend_from_slice(&le_bytes(u, *bits as usize / 8));
            Ok(())
        }
        (BorshType::Int(bits), CanonicalValue::Int(i)) => {
            let half = BigInt::from(1) << (*bits as usize - 1);
            if *i >= half || *i < -&half {
                return Err(CodecError::OutOfRange(format!("i{bits}")));
            }
            let wrapped = if i.sign() == Sign::Minus {
                ((BigInt::from(1) << *bits as usize) + i).to_biguint().expect("positive")
            } else {
                i.to_biguint().expect("non-negative")
            };
            out.extend_from_slice(&le_bytes(&wrapped, *bits as usize / 8));
            Ok(())
        }
        (BorshType::Bool, CanonicalValue::Bool(b)) => {
            out.push(u8::from(*b));
            Ok(())
        }
        (BorshType::Address, CanonicalValue::Address(a)) => {
            out.extend_from_slice(a);
            Ok(())
        }
        (BorshType::FixedBytes(n), CanonicalValue::Bytes(b)) => {
            if b.len() != *n as usize {
                return Err(CodecError::OutOfRange(format!("bytes{n}")));
            }
            out.extend_from_slice(b);
            Ok(())
        }
        (BorshType::Bytes, CanonicalValue::Bytes(b)) => {
            write_len(b.len(), out)?;
            out.extend_from_slice(b);
            Ok(())
        }
        (BorshType::Str, CanonicalValue::Str(s)) => {
            write_len(s.len(), out)?;
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
        (BorshType::Tuple(ts), CanonicalValue::Tuple(vs)) => {
            if vs.len() != ts.len() {
                return Err(CodecError::ArityMismatch(vs.len(), ts.len()));
            }
            for (v, t) in vs.iter().zip(ts) {
                encode_one(v, t, out)?;
            }
            Ok(())
        }
        (BorshType::Vec(et), CanonicalValue::Array(vs)) => {
            write_len(vs.len(), out)?;
            for v in vs {
                encode_one(v, et, out)?;
            }
            Ok(())
        }
        (BorshType::FixedArray(et, k), CanonicalValue::Array(vs)) => {
            if vs.len() != *k {
                return Err(CodecError::ArityMismatch(vs.len(), *k));
            }
            for v in vs {
                encode_one(v, et, out)?;
            }
            Ok(())
        }
        _ => Err(kind_err(t, v)),
    }
}

fn le_bytes(u: &BigUint, width: usize) -> Vec<u8> {
    let mut bytes = u.to_bytes_le();
    bytes.resize(width, 0);
    bytes
}

fn write_len(len: usize, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let len: u32 = len.try_into().map_err(|_| CodecError::OutOfRange("length".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.data.len() {
            return Err(CodecError::UnexpectedEnd(self.pos));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_len(&mut self) -> Result<usize, CodecError> {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(buf) as usize)
    }
}

fn decode_one(cursor: &mut Cursor<'_>, t: &BorshType) -> Result<CanonicalValue, CodecError> {
    match t {
        BorshType::Uint(bits) => {
            let bytes = cursor.take(*bits as usize / 8)?;
            Ok(CanonicalValue::UInt(BigUint::from_bytes_le(bytes)))
        }
        BorshType::Int(bits) => {
            let bytes = cursor.take(*bits as usize / 8)?;
            let unsigned = BigInt::from(BigUint::from_bytes_le(bytes));
            let negative = bytes.last().is_some_and(|b| b & 0x80 != 0);
            let value = if negative {
                unsigned - (BigInt::from(1) << *bits as usize)
            } else {
                unsigned
            };
            Ok(CanonicalValue::Int(value))
        }
        BorshType::Bool => match cursor.take(1)?[0] {
            0 => Ok(CanonicalValue::Bool(false)),
            1 => Ok(CanonicalValue::Bool(true)),
            _ => Err(CodecError::InvalidBool),
        },
        BorshType::Address => {
            let mut addr = [0u8; 20];
            addr.copy_from_slice(cursor.take(20)?);
            Ok(CanonicalValue::Address(addr))
        }
        BorshType::FixedBytes(n) => Ok(CanonicalValue::Bytes(cursor.take(*n as usize)?.to_vec())),
        BorshType::Bytes => {
            let len = cursor.take_len()?;
            Ok(CanonicalValue::Bytes(cursor.take(len)?.to_vec()))
        }
        BorshType::Str => {
            let len = cursor.take_len()?;
            let bytes = cursor.take(len)?;
            String::from_utf8(bytes.to_vec())
                .map(CanonicalValue::Str)
                .map_err(|_| CodecError::InvalidUtf8)
        }
        BorshType::Tuple(ts) => {
            let values =
                ts.iter().map(|t| decode_one(cursor, t)).collect::<Result<Vec<_>, _>>()?;
            Ok(CanonicalValue::Tuple(values))
        }
        BorshType::Vec(et) => {
            let len = cursor.take_len()?;
            let values =
                (0..len).map(|_| decode_one(cursor, et)).collect::<Result<Vec<_>, _>>()?;
            Ok(CanonicalValue::Array(values))
        }
        BorshType::FixedArray(et, k) => {
            let values =
                (0..*k).map(|_| decode_one(cursor, et)).collect::<Result<Vec<_>, _>>()?;
            Ok(CanonicalValue::Array(values))
        }
    }
}
