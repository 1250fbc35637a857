use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, uniquely named collection of parameter tensors.
///
/// Order is part of the contract: serialization and gradient bundles follow it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamBundle {
    entries: Vec<(String, Tensor)>,
}

impl ParamBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(self.entries.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Appends all entries of `other`, failing on name clashes.
    pub fn extend(&mut self, other: ParamBundle) -> Result<()> {
        for (n, t) in other.entries {
            self.push(n, t)?;
        }
        Ok(())
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_compatible(&self, other: &ParamBundle) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "bundle sizes differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Shape(format!(
                    "`{na}` {:?} vs `{nb}` {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Exact little-endian `f64` encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let count = cur.u32()? as usize;
        let mut bundle = ParamBundle::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec())
                .map_err(|e| Error::Decode(e.to_string()))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(cur.u64()?).map_err(|e| Error::Decode(e.to_string()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Decode("dimension overflow".into()))?;
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Decode("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            bundle.push(name, Tensor::new(shape, data)?)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(bundle)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut b = ParamBundle::new();
        b.push("w", Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(b.push("w", Tensor::zeros(&[1])), Err(Error::DuplicateName("w".into())));
    }

    #[test]
    fn truncated_bytes_rejected() {
        let mut b = ParamBundle::new();
        b.push("w", Tensor::full(&[3], 1.5)).unwrap();
        let bytes = b.to_bytes();
        assert!(ParamBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_exact(
            tensors in prop::collection::vec(
                (1usize..4, 1usize..5, prop::collection::vec(any::<f64>(), 20)), 0..5)
        ) {
            let mut b = ParamBundle::new();
            for (i, (r, c, vals)) in tensors.into_iter().enumerate() {
                let data: Vec<f64> = vals.into_iter().cycle().take(r * c).collect();
                b.push(format!("t{i}"), Tensor::matrix(r, c, data).unwrap()).unwrap();
            }
            let back = ParamBundle::from_bytes(&b.to_bytes()).unwrap();
            prop_assert_eq!(back.len(), b.len());
            for ((na, ta), (nb, tb)) in b.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
