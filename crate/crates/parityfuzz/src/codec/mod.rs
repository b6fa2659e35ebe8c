//! Output codecs: strict ABI (EVM) and Borsh (little-endian) encoders and
//! decoders over [`CanonicalValue`], plus type-descriptor inference from ABI
//! JSON artifacts or raw source signatures.
//!
//! Decoders are deliberately strict — bad padding, stray bytes, or
//! non-canonical offsets surface as errors rather than silently decoded
//! values, so that a decode failure is itself signal.

pub mod abi;
pub mod borsh;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use abi::{decode_abi, encode_abi};
pub use borsh::{decode_borsh, encode_borsh};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown Solidity type `{0}`")]
    UnknownType(String),
    #[error("unsupported width for `{0}`")]
    UnsupportedWidth(String),
    #[error("value does not match type: expected {expected}, got {got}")]
    TypeMismatch { expected: String, got: String },
    #[error("value out of range for {0}")]
    OutOfRange(String),
    #[error("unexpected end of input at byte {0}")]
    UnexpectedEnd(usize),
    #[error("non-zero padding byte at offset {0}")]
    NonZeroPadding(usize),
    #[error("trailing bytes after decoded payload ({0} left)")]
    TrailingBytes(usize),
    #[error("non-canonical tail offset {found}, expected {expected}")]
    BadOffset { found: usize, expected: usize },
    #[error("invalid boolean word")]
    InvalidBool,
    #[error("invalid utf-8 in string payload")]
    InvalidUtf8,
    #[error("arity mismatch: {0} values for {1} types")]
    ArityMismatch(usize, usize),
    #[error("no entry function with a decodable signature: {0}")]
    NoSignature(String),
}

/// EVM ABI type descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbiType {
    Uint(u16),
    Int(u16),
    Bool,
    Address,
    FixedBytes(u8),
    Bytes,
    Str,
    Tuple(Vec<AbiType>),
    Array(Box<AbiType>),
    FixedArray(Box<AbiType>, usize),
}

/// Borsh type descriptor, structurally parallel to [`AbiType`]. Integer
/// widths cover the same 8..=256 range as the ABI side so that any value
/// representable in one codec round-trips through the other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BorshType {
    Uint(u16),
    Int(u16),
    Bool,
    Address,
    FixedBytes(u8),
    Bytes,
    Str,
    Tuple(Vec<BorshType>),
    Vec(Box<BorshType>),
    FixedArray(Box<BorshType>, usize),
}

impl From<&AbiType> for BorshType {
    fn from(t: &AbiType) -> Self {
        match t {
            AbiType::Uint(b) => BorshType::Uint(*b),
            AbiType::Int(b) => BorshType::Int(*b),
            AbiType::Bool => BorshType::Bool,
            AbiType::Address => BorshType::Address,
            AbiType::FixedBytes(n) => BorshType::FixedBytes(*n),
            AbiType::Bytes => BorshType::Bytes,
            AbiType::Str => BorshType::Str,
            AbiType::Tuple(ts) => BorshType::Tuple(ts.iter().map(Self::from).collect()),
            AbiType::Array(t) => BorshType::Vec(Box::new(Self::from(t.as_ref()))),
            AbiType::FixedArray(t, k) => BorshType::FixedArray(Box::new(Self::from(t.as_ref())), *k),
        }
    }
}

/// Parses a textual Solidity type (`uint256`, `int64[]`, `bytes32`,
/// `(uint, bool)[2]`, ...) into its ABI descriptor. Bare `uint`/`int`
/// default to 256 bits as in the language.
pub fn parse_type(s: &str) -> Result<AbiType, CodecError> {
    let s = s.trim();
    if let Some(base) = s.strip_suffix("[]") {
        return Ok(AbiType::Array(Box::new(parse_type(base)?)));
    }
    if s.ends_with(']') {
        let open = s.rfind('[').ok_or_else(|| CodecError::UnknownType(s.to_string()))?;
        let len: usize = s[open + 1..s.len() - 1]
            .trim()
            .parse()
            .map_err(|_| CodecError::UnknownType(s.to_string()))?;
        return Ok(AbiType::FixedArray(Box::new(parse_type(&s[..open])?), len));
    }
    if s.starts_with('(') && s.ends_with(')') {
        let fields = split_top_level(&s[1..s.len() - 1])
            .into_iter()
            .map(|f| parse_type(f))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(AbiType::Tuple(fields));
    }
    match s {
        "bool" => return Ok(AbiType::Bool),
        "address" => return Ok(AbiType::Address),
        "string" => return Ok(AbiType::Str),
        "bytes" => return Ok(AbiType::Bytes),
        "byte" => return Ok(AbiType::FixedBytes(1)),
        "uint" => return Ok(AbiType::Uint(256)),
        "int" => return Ok(AbiType::Int(256)),
        _ => {}
    }
    if let Some(bits) = s.strip_prefix("uint") {
        return int_width(s, bits).map(AbiType::Uint);
    }
    if let Some(bits) = s.strip_prefix("int") {
        return int_width(s, bits).map(AbiType::Int);
    }
    if let Some(n) = s.strip_prefix("bytes") {
        let n: u8 = n.parse().map_err(|_| CodecError::UnknownType(s.to_string()))?;
        if n == 0 || n > 32 {
            return Err(CodecError::UnsupportedWidth(s.to_string()));
        }
        return Ok(AbiType::FixedBytes(n));
    }
    Err(CodecError::UnknownType(s.to_string()))
}

fn int_width(full: &str, bits: &str) -> Result<u16, CodecError> {
    let bits: u16 = bits.parse().map_err(|_| CodecError::UnknownType(full.to_string()))?;
    if bits == 0 || bits > 256 || bits % 8 != 0 {
        return Err(CodecError::UnsupportedWidth(full.to_string()));
    }
    Ok(bits)
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() || !parts.is_empty() {
        parts.push(&s[start..]);
    }
    parts
}

/// Reads the output types of `function` from a standard contract ABI JSON
/// array (the `abi` artifact emitted by solc-family compilers).
pub fn output_types_from_abi(
    abi: &serde_json::Value,
    function: &str,
) -> Result<Vec<AbiType>, CodecError> {
    let entries = abi
        .as_array()
        .ok_or_else(|| CodecError::NoSignature("abi artifact is not an array".into()))?;
    let entry = entries
        .iter()
        .find(|e| {
            e.get("type").and_then(|t| t.as_str()) == Some("function")
                && e.get("name").and_then(|n| n.as_str()) == Some(function)
        })
        .ok_or_else(|| CodecError::NoSignature(format!("function `{function}` not in abi")))?;
    let outputs = match entry.get("outputs") {
        Some(serde_json::Value::Array(outs)) => outs.as_slice(),
        _ => &[],
    };
    outputs.iter().map(abi_type_of_json).collect()
}

fn abi_type_of_json(entry: &serde_json::Value) -> Result<AbiType, CodecError> {
    let type_str = entry
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| CodecError::UnknownType("<missing type>".into()))?;
    if let Some(suffix) = type_str.strip_prefix("tuple") {
        let components = entry
            .get("components")
            .and_then(|c| c.as_array())
            .ok_or_else(|| CodecError::UnknownType(type_str.to_string()))?;
        let base = AbiType::Tuple(
            components.iter().map(abi_type_of_json).collect::<Result<Vec<_>, _>>()?,
        );
        return wrap_array_suffix(base, suffix);
    }
    parse_type(type_str)
}

fn wrap_array_suffix(mut t: AbiType, suffix: &str) -> Result<AbiType, CodecError> {
    let mut rest = suffix;
    while !rest.is_empty() {
        let close = rest.find(']').ok_or_else(|| CodecError::UnknownType(suffix.to_string()))?;
        let inner = &rest[1..close];
        t = if inner.is_empty() {
            AbiType::Array(Box::new(t))
        } else {
            let len: usize =
                inner.parse().map_err(|_| CodecError::UnknownType(suffix.to_string()))?;
            AbiType::FixedArray(Box::new(t), len)
        };
        rest = &rest[close + 1..];
    }
    Ok(t)
}

/// Determines the expected output types for a program's entry function:
/// from the compiler's ABI artifact when one is available, otherwise by
/// scanning the source signature.
pub fn infer_output_types(
    source: &str,
    abi_json: Option<&serde_json::Value>,
) -> Result<Vec<AbiType>, CodecError> {
    let sig = crate::solsrc::infer_entry(source)
        .ok_or_else(|| CodecError::NoSignature("no public zero-argument function".into()))?;
    if let Some(abi) = abi_json {
        return output_types_from_abi(abi, &sig.entry.function);
    }
    sig.returns.iter().map(|t| parse_type(t)).collect()
}
