use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Named parameter segments with a stable flattened ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    segments: Vec<(String, Tensor)>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self {
            segments: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate segment name {name:?}")));
        }
        self.segments.push((name, tensor));
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        self.push(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.segments
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but panics on a missing segment; for internal layouts
    /// whose names are fixed.
    pub fn seg(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter segment {name:?}"))
    }

    pub fn seg_mut(&mut self, name: &str) -> &mut Tensor {
        self.get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter segment {name:?}"))
    }

    /// Mutable access to two distinct segments at once.
    pub fn seg_pair_mut(&mut self, a: &str, b: &str) -> (&mut Tensor, &mut Tensor) {
        let ia = self.position(a);
        let ib = self.position(b);
        assert_ne!(ia, ib, "seg_pair_mut needs two distinct segments");
        if ia < ib {
            let (lo, hi) = self.segments.split_at_mut(ib);
            (&mut lo[ia].1, &mut hi[0].1)
        } else {
            let (lo, hi) = self.segments.split_at_mut(ia);
            (&mut hi[0].1, &mut lo[ib].1)
        }
    }

    fn position(&self, name: &str) -> usize {
        self.segments
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter segment {name:?}"))
    }

    pub fn segments(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.segments.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same segment structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn same_structure(&self, other: &ParamVector) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    fn check_structure(&self, other: &ParamVector) -> Result<()> {
        if !self.same_structure(other) {
            return Err(Error::invalid(
                "parameter vectors have different segment structure",
            ));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) against this vector's structure.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::Shape {
                op: "ParamVector::unflatten",
                expected: vec![self.len()],
                actual: vec![flat.len()],
            });
        }
        let mut out = self.clone();
        let mut pos = 0;
        for (_, t) in &mut out.segments {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(out)
    }

    /// Reads the coordinate at a flat index.
    pub fn coord(&self, mut index: usize) -> f64 {
        for (_, t) in &self.segments {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_coord(&mut self, mut index: usize, value: f64) {
        for (_, t) in &mut self.segments {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    /// `self += alpha * other`, segment by segment.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_structure(other)?;
        for ((_, a), (_, b)) in self.segments.iter_mut().zip(&other.segments) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        self.axpy(1.0, other)
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in &mut self.segments {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn round_to_f32(&mut self) {
        for (_, t) in &mut self.segments {
            t.round_to_f32();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().all(|(_, t)| t.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::new()
    }
}
