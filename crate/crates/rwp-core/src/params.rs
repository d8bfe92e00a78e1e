//! Flat parameter storage and the filter partition overlay.
//!
//! All trainable scalars of a model live in one `ParamVector`. A
//! `FilterPartition` marks which index ranges form filters (the weights
//! feeding one conv feature map or one dense neuron); everything else
//! (biases) is tracked as non-filter and never perturbed.

use std::ops::Range;

/// Flat array of all trainable parameters, 64-bit throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, in index order.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) {
        assert_eq!(self.len(), other.len(), "param length mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// True iff every entry has identical bit patterns.
    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.len() == other.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

/// Shape of a single filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterShape {
    /// Dense neuron with `fan_in` incoming weights.
    Dense { fan_in: usize },
    /// Conv feature map: `c_in * kh * kw` weights.
    Conv { c_in: usize, kh: usize, kw: usize },
}

impl FilterShape {
    /// Number of weights in the filter, equal to its fan-in.
    pub fn weight_count(&self) -> usize {
        match *self {
            FilterShape::Dense { fan_in } => fan_in,
            FilterShape::Conv { c_in, kh, kw } => c_in * kh * kw,
        }
    }
}

/// One filter's index interval into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filter {
    pub range: Range<usize>,
    pub shape: FilterShape,
}

/// Disjoint filter intervals plus the non-filter (bias) intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterPartition {
    filters: Vec<Filter>,
    non_filter: Vec<Range<usize>>,
}

impl FilterPartition {
    pub fn new(filters: Vec<Filter>, non_filter: Vec<Range<usize>>) -> Self {
        for f in &filters {
            debug_assert_eq!(
                f.range.len(),
                f.shape.weight_count(),
                "filter interval length must equal its shape product"
            );
        }
        FilterPartition {
            filters,
            non_filter,
        }
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn non_filter(&self) -> &[Range<usize>] {
        &self.non_filter
    }

    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    /// Total scalar count covered by both interval sets.
    pub fn covered_len(&self) -> usize {
        self.filters.iter().map(|f| f.range.len()).sum::<usize>()
            + self.non_filter.iter().map(|r| r.len()).sum::<usize>()
    }

    /// Euclidean norm of each filter, in partition order.
    pub fn filter_norms(&self, params: &ParamVector) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                params.as_slice()[f.range.clone()]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Euclidean norm per filter interval, in partition order.
pub fn filter_norms(params: &ParamVector, partition: &FilterPartition) -> Vec<f64> {
    partition.filter_norms(params)
}
