//! Encoding-independent value model used to compare executor outputs.
//!
//! Raw return data from each executor is decoded (ABI or Borsh) into a
//! [`CanonicalValue`] so that outputs produced by different virtual machines
//! can be compared structurally.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A decoded executor output value.
///
/// Equality is structural and deep. `UInt` and `Int` are distinct comparison
/// kinds even at equal magnitude: decoders pick the kind from the declared
/// return type, so a cross-kind mismatch is a type-level divergence rather
/// than noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalValue {
    UInt(BigUint),
    Int(BigInt),
    Bool(bool),
    Bytes(Vec<u8>),
    Str(String),
    /// Always exactly 20 bytes.
    Address([u8; 20]),
    Tuple(Vec<CanonicalValue>),
    Array(Vec<CanonicalValue>),
}

impl CanonicalValue {
    pub fn uint(v: u128) -> Self {
        CanonicalValue::UInt(BigUint::from(v))
    }

    pub fn int(v: i128) -> Self {
        CanonicalValue::Int(BigInt::from(v))
    }

    /// Builds an `Address`, rejecting anything that is not exactly 20 bytes.
    pub fn address(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 20] = bytes.try_into().ok()?;
        Some(CanonicalValue::Address(arr))
    }

    /// Compact type-shape label used as the EOI dedup discriminator.
    ///
    /// Arrays collapse to the shape of their first element so that two
    /// manifestations of the same divergence with different lengths group
    /// together.
    pub fn shape(&self) -> String {
        match self {
            CanonicalValue::UInt(_) => "uint".to_string(),
            CanonicalValue::Int(_) => "int".to_string(),
            CanonicalValue::Bool(_) => "bool".to_string(),
            CanonicalValue::Bytes(_) => "bytes".to_string(),
            CanonicalValue::Str(_) => "str".to_string(),
            CanonicalValue::Address(_) => "address".to_string(),
            CanonicalValue::Tuple(items) => {
                let inner: Vec<String> = items.iter().map(|v| v.shape()).collect();
                format!("tuple({})", inner.join(","))
            }
            CanonicalValue::Array(items) => match items.first() {
                Some(first) => format!("array({})", first.shape()),
                None => "array()".to_string(),
            },
        }
    }
}

/// Deep structural equality between two decoded values.
///
/// Numeric variants compare by mathematical value within the same
/// signedness class; `UInt(5)` and `Int(5)` are unequal.
pub fn canonical_equal(a: &CanonicalValue, b: &CanonicalValue) -> bool {
    a == b
}

impl fmt::Display for CanonicalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalValue::UInt(v) => write!(f, "{v}"),
            CanonicalValue::Int(v) => write!(f, "{v}"),
            CanonicalValue::Bool(v) => write!(f, "{v}"),
            CanonicalValue::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
            CanonicalValue::Str(s) => write!(f, "{s:?}"),
            CanonicalValue::Address(a) => write!(f, "0x{}", hex::encode(a)),
            CanonicalValue::Tuple(items) => {
                write!(f, "(")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
            CanonicalValue::Array(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

// JSON form is a single-key tagged object. Big integers are decimal strings
// (they do not fit in JSON numbers); byte strings are 0x-prefixed hex.
impl Serialize for CanonicalValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(1))?;
        match self {
            CanonicalValue::UInt(v) => map.serialize_entry("uint", &v.to_string())?,
            CanonicalValue::Int(v) => map.serialize_entry("int", &v.to_string())?,
            CanonicalValue::Bool(v) => map.serialize_entry("bool", v)?,
            CanonicalValue::Bytes(b) => {
                map.serialize_entry("bytes", &format!("0x{}", hex::encode(b)))?
            }
            CanonicalValue::Str(s) => map.serialize_entry("str", s)?,
            CanonicalValue::Address(a) => {
                map.serialize_entry("address", &format!("0x{}", hex::encode(a)))?
            }
            CanonicalValue::Tuple(items) => map.serialize_entry("tuple", items)?,
            CanonicalValue::Array(items) => map.serialize_entry("array", items)?,
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for CanonicalValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(deserializer)?;
        let obj = raw
            .as_object()
            .ok_or_else(|| D::Error::custom("expected a single-key object"))?;
        if obj.len() != 1 {
            return Err(D::Error::custom("expected exactly one tag key"));
        }
        let (tag, body) = obj.iter().next().expect("len checked");
        let parse_hex = |v: &serde_json::Value| -> Result<Vec<u8>, D::Error> {
            let s = v.as_str().ok_or_else(|| D::Error::custom("expected hex string"))?;
            let s = s.strip_prefix("0x").unwrap_or(s);
            hex::decode(s).map_err(D::Error::custom)
        };
        let parse_items = |v: &serde_json::Value| -> Result<Vec<CanonicalValue>, D::Error> {
            let arr = v.as_array().ok_or_else(|| D::Error::custom("expected array"))?;
            arr.iter()
                .map(|item| {
                    serde_json::from_value::<CanonicalValue>(item.clone()).map_err(D::Error::custom)
                })
                .collect()
        };
        match tag.as_str() {
            "uint" => {
                let s = body.as_str().ok_or_else(|| D::Error::custom("expected decimal string"))?;
                let v: BigUint = s.parse().map_err(D::Error::custom)?;
                Ok(CanonicalValue::UInt(v))
            }
            "int" => {
                let s = body.as_str().ok_or_else(|| D::Error::custom("expected decimal string"))?;
                let v: BigInt = s.parse().map_err(D::Error::custom)?;
                Ok(CanonicalValue::Int(v))
            }
            "bool" => Ok(CanonicalValue::Bool(
                body.as_bool().ok_or_else(|| D::Error::custom("expected bool"))?,
            )),
            "bytes" => Ok(CanonicalValue::Bytes(parse_hex(body)?)),
            "str" => Ok(CanonicalValue::Str(
                body.as_str().ok_or_else(|| D::Error::custom("expected string"))?.to_string(),
            )),
            "address" => {
                let bytes = parse_hex(body)?;
                CanonicalValue::address(&bytes)
                    .ok_or_else(|| D::Error::custom("address must be 20 bytes"))
            }
            "tuple" => Ok(CanonicalValue::Tuple(parse_items(body)?)),
            "array" => Ok(CanonicalValue::Array(parse_items(body)?)),
            other => Err(D::Error::custom(format!("unknown value tag `{other}`"))),
        }
    }
}
