//! The embedding table: representations with identifiers and optional
//! labels/concentrations. This is the unit every analytics and probing
//! operation consumes, and the payload of the embedding CSV format.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    /// N x D representations.
    pub reps: Array2<f64>,
    /// Per-row label; `None` where the source had an empty label cell.
    pub labels: Vec<Option<String>>,
    /// Per-row dose; `None` where the source had an empty cell.
    pub concentrations: Vec<Option<f64>>,
}

impl EmbeddingSet {
    pub fn new(
        ids: Vec<String>,
        reps: Array2<f64>,
        labels: Vec<Option<String>>,
        concentrations: Vec<Option<f64>>,
    ) -> Result<EmbeddingSet> {
        let n = ids.len();
        if reps.nrows() != n || labels.len() != n || concentrations.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent lengths: {} ids, {} rows, {} labels, {} concentrations",
                n,
                reps.nrows(),
                labels.len(),
                concentrations.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::format(format!("duplicate id `{id}`")));
            }
        }
        if reps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("representations contain NaN or infinity".into()));
        }
        if let Some(c) = concentrations.iter().flatten().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::NonFiniteInput(format!("concentration {c} is not a non-negative real")));
        }
        Ok(EmbeddingSet {
            ids,
            reps,
            labels,
            concentrations,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }

    /// Error unless every row carries a label.
    pub fn require_labels(&self) -> Result<Vec<&str>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.as_deref().ok_or_else(|| {
                    Error::EmptyClass(format!("row {i} (id `{}`) has no label", self.ids[i]))
                })
            })
            .collect()
    }

    /// Distinct labels in order of first appearance.
    pub fn class_list(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for label in self.labels.iter().flatten() {
            if seen.insert(label.clone()) {
                out.push(label.clone());
            }
        }
        out
    }

    /// Row subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<EmbeddingSet> {
        let mut reps = Array2::zeros((indices.len(), self.dim()));
        let mut ids = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut concentrations = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row index {i} out of range ({} rows)",
                    self.len()
                )));
            }
            reps.row_mut(row).assign(&self.reps.row(i));
            ids.push(self.ids[i].clone());
            labels.push(self.labels[i].clone());
            concentrations.push(self.concentrations[i]);
        }
        EmbeddingSet::new(ids, reps, labels, concentrations)
    }
}
