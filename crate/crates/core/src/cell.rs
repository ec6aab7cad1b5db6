//! Cell values: a scalar or an N-dimensional array of one element type.

use crate::element::{Element, ElementType};
use crate::error::{Error, Result};

/// A single table cell.
///
/// The payload is kept in its on-disk little-endian encoding, row-major, so
/// equality is bit-exact (two NaNs with the same bits compare equal).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellValue {
    etype: ElementType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

pub(crate) fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl CellValue {
    /// Builds a cell from encoded bytes; `shape` empty means scalar.
    pub fn from_bytes(etype: ElementType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected = element_count(&shape) * etype.width();
        if data.len() != expected {
            return Err(Error::InvalidDesc(format!(
                "cell payload of {} bytes does not match shape {:?} of {}",
                data.len(),
                shape,
                etype
            )));
        }
        if etype == ElementType::Bool && data.iter().any(|b| *b > 1) {
            return Err(Error::InvalidDesc("boolean byte other than 0 or 1".into()));
        }
        Ok(CellValue { etype, shape, data })
    }

    pub fn scalar<T: Element>(value: T) -> Self {
        Self::array(Vec::new(), &[value]).expect("scalar has one element")
    }

    pub fn array<T: Element>(shape: Vec<usize>, values: &[T]) -> Result<Self> {
        if values.len() != element_count(&shape) {
            return Err(Error::ShapeMismatch {
                column: String::new(),
                expected: format!("{shape:?}"),
                found: vec![values.len()],
            });
        }
        let mut data = Vec::with_capacity(values.len() * T::TYPE.width());
        for v in values {
            v.write_le(&mut data);
        }
        Ok(CellValue {
            etype: T::TYPE,
            shape,
            data,
        })
    }

    pub fn etype(&self) -> ElementType {
        self.etype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn len(&self) -> usize {
        element_count(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Decodes the elements, or `None` if `T` is not this cell's type.
    pub fn to_vec<T: Element>(&self) -> Option<Vec<T>> {
        if T::TYPE != self.etype {
            return None;
        }
        self.data
            .chunks_exact(self.etype.width())
            .map(T::read_le)
            .collect()
    }

    pub fn get_scalar<T: Element>(&self) -> Option<T> {
        if !self.is_scalar() {
            return None;
        }
        self.to_vec::<T>()?.into_iter().next()
    }

    /// Restricts one axis to `begin..end`, keeping all other axes whole.
    pub fn slice_axis(&self, axis: usize, begin: usize, end: usize) -> Result<CellValue> {
        let ndim = self.shape.len();
        if axis >= ndim || begin >= end || end > self.shape[axis] {
            return Err(Error::InvalidOptions(format!(
                "cannot slice axis {axis} to {begin}..{end} of shape {:?}",
                self.shape
            )));
        }
        let width = self.etype.width();
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product::<usize>() * width;
        let stride = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * (end - begin) * inner);
        for o in 0..outer {
            let base = o * stride;
            data.extend_from_slice(&self.data[base + begin * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - begin;
        Ok(CellValue {
            etype: self.etype,
            shape,
            data,
        })
    }
}
