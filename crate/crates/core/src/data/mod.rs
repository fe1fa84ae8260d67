//! Datasets, IDX ingestion, the synthetic digit generator and Dirichlet
//! non-IID partitioning.

mod idx;
mod partition;
mod synth;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use idx::{encode_idx, load_idx, parse_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{dirichlet_partition, dirichlet_partition_indices, PartitionPlan};
pub use synth::synth_digits;

/// Labelled grayscale images with intensities in `[0, 1]`, stored one image
/// per matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    images: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn from_parts(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let images = Matrix::new(labels.len(), height * width, pixels)?;
        Dataset::from_matrix(height, width, images, labels, num_classes, name)
    }

    pub(crate) fn from_matrix(
        height: usize,
        width: usize,
        images: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if images.rows() != labels.len() || images.cols() != height * width {
            return Err(Error::DimensionMismatch {
                context: "dataset images",
                expected: labels.len() * height * width,
                actual: images.rows() * images.cols(),
            });
        }
        if let Some(&v) = images.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel intensity {v} outside [0, 1]")));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            height,
            width,
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn empty_like(&self) -> Dataset {
        Dataset {
            images: Matrix::zeros(0, self.dim()),
            labels: Vec::new(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            height: self.height,
            width: self.width,
            images: Matrix::zeros(0, 0),
            labels: Vec::new(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Widens the label space, e.g. to declare 10 classes for an IDX file
    /// whose labels happen to top out lower.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(&y) = self.labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch {
                context: "dataset concat",
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let mut pixels = self.images.as_slice().to_vec();
        pixels.extend_from_slice(other.images.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::from_parts(
            self.height,
            self.width,
            pixels,
            labels,
            self.num_classes.max(other.num_classes),
            self.name.clone(),
        )
    }

    /// Indices of samples labelled `class`, ascending.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect()
    }
}
