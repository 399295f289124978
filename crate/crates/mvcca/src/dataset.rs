//! Row-aligned multiview data containers.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// K row-aligned views of the same samples, with optional integer labels.
#[derive(Debug, Clone)]
pub struct MultiviewDataset {
    views: Vec<Matrix>,
    labels: Option<Vec<usize>>,
}

impl MultiviewDataset {
    pub fn new(views: Vec<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("dataset needs at least one view"));
        }
        let m = views[0].rows();
        if views.iter().any(|v| v.rows() != m) {
            return Err(Error::invalid("views must share the row count"));
        }
        if let Some(labels) = &labels {
            if labels.len() != m {
                return Err(Error::invalid(format!(
                    "label count {} does not match {} rows",
                    labels.len(),
                    m
                )));
            }
        }
        Ok(MultiviewDataset { views, labels })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].rows()
    }

    pub fn view(&self, k: usize) -> &Matrix {
        &self.views[k]
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct classes when labels are present, assuming labels
    /// are `0..n_classes`.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |&m| m + 1))
    }

    /// Per-view mean squared row norm; the relative-MSE normalizer for
    /// reconstruction losses.
    pub fn mean_squared_row_norms(&self) -> Vec<f64> {
        self.views
            .iter()
            .map(|v| v.data().iter().map(|x| x * x).sum::<f64>() / v.rows() as f64)
            .collect()
    }
}
