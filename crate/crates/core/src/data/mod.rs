//! Labeled multichannel time-series datasets.

mod format;
mod split;
mod synth;

pub use format::{
    decode_dataset, encode_dataset, export_csv, load_dataset, read_header, save_dataset, DatasetHeader, TSDS_MAGIC,
    TSDS_VERSION,
};
pub use split::{label_subsample, label_subsample_indices, split_dataset, split_indices, SplitSpec, Splits};
pub use synth::{synth_generate, ClassFamily, DomainShift, SampleParams, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N` samples of shape `(channels, length)` stored sample-major, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: usize,
    pub length: usize,
    pub classes: usize,
    pub channel_names: Vec<String>,
    pub labels: Vec<usize>,
    pub subjects: Option<Vec<i32>>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        labels: Vec<usize>,
        subjects: Option<Vec<i32>>,
        channels: usize,
        length: usize,
        classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if channels == 0 || length == 0 {
            return Err(Error::Shape("datasets need at least one channel and one timestep".into()));
        }
        if values.len() != n * channels * length {
            return Err(Error::Shape(format!(
                "{} values cannot hold {n} samples of {channels}x{length}",
                values.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Param(format!("label {bad} outside 0..{classes}")));
        }
        if subjects.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::Shape("subject ids must match the sample count".into()));
        }
        let channel_names = (0..channels).map(|c| format!("ch{c}")).collect();
        Ok(Self {
            name: name.into(),
            channels,
            length,
            classes,
            channel_names,
            labels,
            subjects,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_size(&self) -> usize {
        self.channels * self.length
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_size();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.sample_size());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        Dataset {
            name: self.name.clone(),
            channels: self.channels,
            length: self.length,
            classes: self.classes,
            channel_names: self.channel_names.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: self.subjects.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
            values,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> TimeSeriesBatch {
        let mut values = Vec::with_capacity(indices.len() * self.sample_size());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        TimeSeriesBatch {
            values,
            batch: indices.len(),
            channels: self.channels,
            length: self.length,
            labels: Some(indices.iter().map(|&i| self.labels[i]).collect()),
            subjects: self.subjects.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same samples with labels replaced, e.g. for permutation controls.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.name.clone(),
            self.values.clone(),
            labels,
            self.subjects.clone(),
            self.channels,
            self.length,
            self.classes,
        )
        .map(|mut d| {
            d.channel_names = self.channel_names.clone();
            d
        })
    }
}

/// A `(batch, channels, length)` block of signals with optional annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesBatch {
    pub values: Vec<f64>,
    pub batch: usize,
    pub channels: usize,
    pub length: usize,
    pub labels: Option<Vec<usize>>,
    pub subjects: Option<Vec<i32>>,
}

impl TimeSeriesBatch {
    pub fn from_values(values: Vec<f64>, batch: usize, channels: usize, length: usize) -> Result<Self> {
        if values.len() != batch * channels * length {
            return Err(Error::Shape(format!(
                "{} values for a {batch}x{channels}x{length} batch",
                values.len()
            )));
        }
        Ok(Self { values, batch, channels, length, labels: None, subjects: None })
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.channels * self.length;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.values.clone(), &[self.batch, self.channels, self.length])
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}
