use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where one named tensor lives inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A named dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::LayoutMismatch(format!(
                "tensor `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

/// All model parameters as one contiguous `f64` buffer plus the layout that
/// maps segments back to tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    /// Concatenates tensors in the given order.
    pub fn flatten(tensors: &[Tensor]) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::EmptyLayout);
        }
        let mut layout = Vec::with_capacity(tensors.len());
        let mut values = Vec::new();
        for t in tensors {
            if layout.iter().any(|s: &Segment| s.name == t.name) {
                return Err(Error::LayoutMismatch(format!(
                    "duplicate segment `{}`",
                    t.name
                )));
            }
            let expected: usize = t.shape.iter().product();
            if t.data.len() != expected {
                return Err(Error::LayoutMismatch(format!(
                    "tensor `{}` has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            layout.push(Segment {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: values.len(),
            });
            values.extend_from_slice(&t.data);
        }
        Ok(Self { values, layout })
    }

    /// Zero-filled vector for the given `(name, shape)` list.
    pub fn zeros(shapes: &[(&str, &[usize])]) -> Result<Self> {
        let tensors: Vec<Tensor> = shapes
            .iter()
            .map(|(name, shape)| Tensor {
                name: (*name).to_string(),
                shape: shape.to_vec(),
                data: vec![0.0; shape.iter().product()],
            })
            .collect();
        Self::flatten(&tensors)
    }

    /// Rebuilds from a stored layout, validating contiguity.
    pub fn from_parts(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        if layout.is_empty() {
            return Err(Error::EmptyLayout);
        }
        let mut next = 0;
        for seg in &layout {
            if seg.offset != next {
                return Err(Error::LayoutMismatch(format!(
                    "segment `{}` starts at {} but expected {next}",
                    seg.name, seg.offset
                )));
            }
            next += seg.len();
        }
        if next != values.len() {
            return Err(Error::LayoutMismatch(format!(
                "layout covers {next} values but {} were given",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        self.layout
            .iter()
            .map(|seg| Tensor {
                name: seg.name.clone(),
                shape: seg.shape.clone(),
                data: self.values[seg.range()].to_vec(),
            })
            .collect()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }
}
