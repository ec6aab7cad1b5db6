//! Element types storable in table cells.
//!
//! Every element has a fixed little-endian byte encoding. There is no string
//! type: cells hold booleans, integers, floats or complex numbers only.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Bool,
    Int32,
    Int64,
    Float32,
    Float64,
    /// Pair of `f32` (real, imaginary).
    Complex64,
    /// Pair of `f64` (real, imaginary).
    Complex128,
}

impl ElementType {
    pub const ALL: [ElementType; 7] = [
        ElementType::Bool,
        ElementType::Int32,
        ElementType::Int64,
        ElementType::Float32,
        ElementType::Float64,
        ElementType::Complex64,
        ElementType::Complex128,
    ];

    pub const fn width(self) -> usize {
        match self {
            ElementType::Bool => 1,
            ElementType::Int32 | ElementType::Float32 => 4,
            ElementType::Int64 | ElementType::Float64 | ElementType::Complex64 => 8,
            ElementType::Complex128 => 16,
        }
    }

    /// Token used in `table.desc`.
    pub const fn token(self) -> &'static str {
        match self {
            ElementType::Bool => "bool",
            ElementType::Int32 => "i32",
            ElementType::Int64 => "i64",
            ElementType::Float32 => "f32",
            ElementType::Float64 => "f64",
            ElementType::Complex64 => "c64",
            ElementType::Complex128 => "c128",
        }
    }

    /// One-byte tag used in binary index records.
    pub const fn code(self) -> u8 {
        match self {
            ElementType::Bool => 0,
            ElementType::Int32 => 1,
            ElementType::Int64 => 2,
            ElementType::Float32 => 3,
            ElementType::Float64 => 4,
            ElementType::Complex64 => 5,
            ElementType::Complex128 => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<ElementType> {
        ElementType::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ElementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementType::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::UnsupportedOperation(format!("element type '{s}'")))
    }
}

/// A Rust scalar type that maps onto one [`ElementType`].
pub trait Element: Copy + Sized {
    const TYPE: ElementType;

    fn write_le(&self, out: &mut Vec<u8>);

    /// Decodes one element from exactly `Self::TYPE.width()` bytes.
    fn read_le(bytes: &[u8]) -> Option<Self>;
}

impl Element for bool {
    const TYPE: ElementType = ElementType::Bool;

    fn write_le(&self, out: &mut Vec<u8>) {
        out.push(u8::from(*self));
    }

    fn read_le(bytes: &[u8]) -> Option<Self> {
        match bytes {
            [0] => Some(false),
            [1] => Some(true),
            _ => None,
        }
    }
}

macro_rules! impl_primitive {
    ($ty:ty, $tag:expr) => {
        impl Element for $ty {
            const TYPE: ElementType = $tag;

            fn write_le(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Option<Self> {
                Some(<$ty>::from_le_bytes(bytes.try_into().ok()?))
            }
        }
    };
}

impl_primitive!(i32, ElementType::Int32);
impl_primitive!(i64, ElementType::Int64);
impl_primitive!(f32, ElementType::Float32);
impl_primitive!(f64, ElementType::Float64);

macro_rules! impl_complex {
    ($ty:ty, $tag:expr, $half:expr) => {
        impl Element for Complex<$ty> {
            const TYPE: ElementType = $tag;

            fn write_le(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.re.to_le_bytes());
                out.extend_from_slice(&self.im.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Option<Self> {
                if bytes.len() != 2 * $half {
                    return None;
                }
                let re = <$ty>::from_le_bytes(bytes[..$half].try_into().ok()?);
                let im = <$ty>::from_le_bytes(bytes[$half..].try_into().ok()?);
                Some(Complex::new(re, im))
            }
        }
    };
}

impl_complex!(f32, ElementType::Complex64, 4);
impl_complex!(f64, ElementType::Complex128, 8);
