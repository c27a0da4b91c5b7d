use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

/// Ground-truth labels kept aside for evaluation oracles.
///
/// Training code only sees [`PartiallyLabelledDataset::labels`]; the full
/// label vector is reachable only through [`HiddenLabels::reveal`].
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLabels {
    labels: Vec<usize>,
}

impl HiddenLabels {
    pub fn reveal(&self) -> &[usize] {
        &self.labels
    }
}

/// Features with labels observed on a subset of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PartiallyLabelledDataset {
    features: Tensor,
    labels: Vec<Option<usize>>,
    n_classes: usize,
    oracle: Option<HiddenLabels>,
}

impl PartiallyLabelledDataset {
    pub fn new(features: Tensor, labels: Vec<Option<usize>>, n_classes: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::config(format!(
                "features must be an n × d matrix, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.all_finite() {
            return Err(Error::numeric("features contain non-finite values"));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&y| y >= n_classes) {
            return Err(Error::config(format!("label {bad} is out of range for {n_classes} classes")));
        }
        Ok(PartiallyLabelledDataset {
            features,
            labels,
            n_classes,
            oracle: None,
        })
    }

    /// Every row observed; the labels double as the hidden oracle.
    pub fn fully_labelled(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let observed = labels.iter().copied().map(Some).collect();
        let mut ds = Self::new(features, observed, n_classes)?;
        ds.oracle = Some(HiddenLabels { labels });
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_labelled(&self) -> usize {
        self.labels.iter().filter(|y| y.is_some()).count()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.n() - self.n_labelled()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Observed labels; `None` where the label is missing.
    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// The observation indicator r.
    pub fn mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    pub fn is_fully_labelled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    pub fn labelled_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn unlabelled_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i].is_none()).collect()
    }

    /// Features and labels of the observed rows, in row order.
    pub fn labelled_part(&self) -> (Tensor, Vec<usize>) {
        let idx = self.labelled_indices();
        let y = idx.iter().map(|&i| self.labels[i].unwrap_or_default()).collect();
        (self.features.select_rows(&idx), y)
    }

    pub fn unlabelled_features(&self) -> Tensor {
        self.features.select_rows(&self.unlabelled_indices())
    }

    pub fn oracle(&self) -> Option<&HiddenLabels> {
        self.oracle.as_ref()
    }

    /// Rows in the given order, oracle included.
    pub fn subset(&self, indices: &[usize]) -> Self {
        PartiallyLabelledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            oracle: self.oracle.as_ref().map(|o| HiddenLabels {
                labels: indices.iter().map(|&i| o.labels[i]).collect(),
            }),
        }
    }

    /// Same rows with a new observation pattern; the oracle is kept.
    pub(crate) fn with_labels(&self, labels: Vec<Option<usize>>) -> Self {
        PartiallyLabelledDataset {
            features: self.features.clone(),
            labels,
            n_classes: self.n_classes,
            oracle: self.oracle.clone(),
        }
    }

    /// Fully labelled copy built from the oracle.
    pub fn revealed(&self) -> Option<Self> {
        let o = self.oracle.as_ref()?;
        Some(PartiallyLabelledDataset {
            features: self.features.clone(),
            labels: o.labels.iter().copied().map(Some).collect(),
            n_classes: self.n_classes,
            oracle: Some(o.clone()),
        })
    }
}
