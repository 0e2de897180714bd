//! Shared domain types and their invariant checks.
//!
//! Everything here is immutable once constructed. Numeric storage is `f32`;
//! computations that aggregate many values widen to `f64` at the call site.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::metrics::{Histogram, ReliabilityBins};

fn check_finite(values: &[f32], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(OpnpError::NonFiniteValue {
            location: format!("{what}[{idx}]"),
        }),
        None => Ok(()),
    }
}

/// N×L matrix of penultimate activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
    name: String,
}

impl FeatureSet {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 {
            return Err(OpnpError::EmptyInput("feature set has no rows"));
        }
        if cols == 0 {
            return Err(OpnpError::EmptyInput("feature set has no columns"));
        }
        if data.len() != rows * cols {
            return Err(OpnpError::LengthMismatch {
                what: "feature data",
                left: data.len(),
                right: rows * cols,
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(OpnpError::NonFiniteValue {
                location: format!("features row {} col {}", idx / cols, idx % cols),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != rows {
                return Err(OpnpError::LengthMismatch {
                    what: "labels",
                    left: labels.len(),
                    right: rows,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            labels,
            name: name.into(),
        })
    }

    /// Builds a set from row vectors; all rows must share one width.
    pub fn from_rows(rows: &[Vec<f32>], labels: Option<Vec<u32>>, name: &str) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(OpnpError::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data, labels, name)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.cols..(idx + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Subset of rows in the given order. Labels follow their rows.
    pub fn select_rows(&self, indices: &[usize], name: &str) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &idx in indices {
            data.extend_from_slice(self.row(idx));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(indices.len(), self.cols, data, labels, name)
    }

    /// Same rows with every activation passed through `f`.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(
            self.rows,
            self.cols,
            data,
            self.labels.clone(),
            self.name.clone(),
        )
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some((row, &label)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| l as usize >= classes)
            {
                return Err(OpnpError::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
        }
        Ok(())
    }
}

/// Final affine layer `f = Wᵀh + b` with its pruning masks.
///
/// `weights` is L×K row-major, so entry (i, j) connects feature `i` to class
/// `j`. Masked entries are read as exactly zero everywhere; the stored
/// weights themselves are never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    features: usize,
    classes: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
    weight_mask: Vec<bool>,
    neuron_mask: Vec<bool>,
    class_names: Option<Vec<String>>,
    activation_clip: Option<f32>,
}

impl ClassifierHead {
    pub fn new(features: usize, classes: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if features == 0 || classes == 0 {
            return Err(OpnpError::EmptyInput("head must have L >= 1 and K >= 1"));
        }
        if weights.len() != features * classes {
            return Err(OpnpError::LengthMismatch {
                what: "W",
                left: weights.len(),
                right: features * classes,
            });
        }
        if bias.len() != classes {
            return Err(OpnpError::LengthMismatch {
                what: "b",
                left: bias.len(),
                right: classes,
            });
        }
        check_finite(&weights, "W")?;
        check_finite(&bias, "b")?;
        Ok(Self {
            features,
            classes,
            weights,
            bias,
            weight_mask: vec![true; features * classes],
            neuron_mask: vec![true; features],
            class_names: None,
            activation_clip: None,
        })
    }

    pub fn with_masks(mut self, weight_mask: Vec<bool>, neuron_mask: Vec<bool>) -> Result<Self> {
        if weight_mask.len() != self.features * self.classes {
            return Err(OpnpError::LengthMismatch {
                what: "weight_mask",
                left: weight_mask.len(),
                right: self.features * self.classes,
            });
        }
        if neuron_mask.len() != self.features {
            return Err(OpnpError::LengthMismatch {
                what: "neuron_mask",
                left: neuron_mask.len(),
                right: self.features,
            });
        }
        self.weight_mask = weight_mask;
        self.neuron_mask = neuron_mask;
        Ok(self)
    }

    pub fn with_class_names(mut self, names: Option<Vec<String>>) -> Result<Self> {
        if let Some(n) = &names {
            if n.len() != self.classes {
                return Err(OpnpError::LengthMismatch {
                    what: "class_names",
                    left: n.len(),
                    right: self.classes,
                });
            }
        }
        self.class_names = names;
        Ok(self)
    }

    /// Caps every activation at `clip` before the affine map (ReAct).
    pub fn with_activation_clip(mut self, clip: Option<f32>) -> Result<Self> {
        if let Some(c) = clip {
            if c.is_nan() {
                return Err(OpnpError::NonFiniteValue {
                    location: "activation_clip".into(),
                });
            }
        }
        self.activation_clip = clip;
        Ok(self)
    }

    /// Same weights and bias with all-true masks and no clipping.
    pub fn unpruned(&self) -> Self {
        Self {
            weight_mask: vec![true; self.weights.len()],
            neuron_mask: vec![true; self.features],
            activation_clip: None,
            ..self.clone()
        }
    }

    /// Row count L of W (feature width).
    pub fn features(&self) -> usize {
        self.features
    }

    /// Column count K of W (number of classes).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight_mask(&self) -> &[bool] {
        &self.weight_mask
    }

    pub fn neuron_mask(&self) -> &[bool] {
        &self.neuron_mask
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn activation_clip(&self) -> Option<f32> {
        self.activation_clip
    }

    pub fn weight(&self, i: usize, j: usize) -> f32 {
        self.weights[i * self.classes + j]
    }

    /// True when both the connection and its input neuron are kept.
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.neuron_mask[i] && self.weight_mask[i * self.classes + j]
    }

    /// W̄: the weight as seen by scoring, zero when masked.
    pub fn effective_weight(&self, i: usize, j: usize) -> f32 {
        if self.is_active(i, j) {
            self.weight(i, j)
        } else {
            0.0
        }
    }

    pub fn pruned_weight_count(&self) -> usize {
        self.weight_mask.iter().filter(|&&m| !m).count()
    }

    pub fn pruned_neuron_count(&self) -> usize {
        self.neuron_mask.iter().filter(|&&m| !m).count()
    }
}

/// Checks that `features` can be fed through `head`.
pub fn validate(head: &ClassifierHead, features: &FeatureSet) -> Result<()> {
    if features.cols() != head.features() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features(),
            found: features.cols(),
        });
    }
    // FeatureSet and ClassifierHead reject non-finite data on construction,
    // so only the label range needs the head.
    features.check_labels(head.classes())
}

/// Averaged gradient magnitudes M, same L×K layout as the head.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    sample_count: usize,
    source_tag: String,
}

impl SensitivityMap {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        sample_count: usize,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(OpnpError::EmptyInput(
                "sensitivity map must be at least 1x1",
            ));
        }
        if values.len() != rows * cols {
            return Err(OpnpError::LengthMismatch {
                what: "sensitivity values",
                left: values.len(),
                right: rows * cols,
            });
        }
        check_finite(&values, "M")?;
        if let Some(idx) = values.iter().position(|&v| v < 0.0) {
            return Err(OpnpError::invalid(
                "sensitivity",
                format!("M[{idx}] = {} is negative", values[idx]),
            ));
        }
        Ok(Self {
            rows,
            cols,
            values,
            sample_count,
            source_tag: source_tag.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn check_shape(&self, head: &ClassifierHead) -> Result<()> {
        if self.rows != head.features() {
            return Err(OpnpError::DimensionMismatch {
                expected: head.features(),
                found: self.rows,
            });
        }
        if self.cols != head.classes() {
            return Err(OpnpError::DimensionMismatch {
                expected: head.classes(),
                found: self.cols,
            });
        }
        Ok(())
    }
}

/// Row statistic used to collapse M into one sensitivity per neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronStatistic {
    Mean,
    Max,
    Min,
    Median,
    L2,
    Variance,
}

impl NeuronStatistic {
    pub const ALL: [NeuronStatistic; 6] = [
        NeuronStatistic::Mean,
        NeuronStatistic::Max,
        NeuronStatistic::Min,
        NeuronStatistic::Median,
        NeuronStatistic::L2,
        NeuronStatistic::Variance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NeuronStatistic::Mean => "mean",
            NeuronStatistic::Max => "max",
            NeuronStatistic::Min => "min",
            NeuronStatistic::Median => "median",
            NeuronStatistic::L2 => "l2",
            NeuronStatistic::Variance => "variance",
        }
    }
}

impl fmt::Display for NeuronStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeuronStatistic {
    type Err = OpnpError;

    fn from_str(s: &str) -> Result<Self> {
        NeuronStatistic::ALL
            .into_iter()
            .find(|stat| stat.as_str() == s)
            .ok_or_else(|| OpnpError::UnknownStatistic(s.to_string()))
    }
}

/// One sensitivity per feature neuron (length L).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSensitivity {
    values: Vec<f32>,
    statistic: NeuronStatistic,
}

impl NeuronSensitivity {
    pub fn new(values: Vec<f32>, statistic: NeuronStatistic) -> Result<Self> {
        if values.is_empty() {
            return Err(OpnpError::EmptyInput("neuron sensitivity is empty"));
        }
        check_finite(&values, "O")?;
        if let Some(idx) = values.iter().position(|&v| v < 0.0) {
            return Err(OpnpError::invalid(
                "neuron sensitivity",
                format!("O[{idx}] = {} is negative", values[idx]),
            ));
        }
        Ok(Self { values, statistic })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn statistic(&self) -> NeuronStatistic {
        self.statistic
    }
}

/// The four pruning percentages plus the knobs that go with them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub rho_min_w: f64,
    pub rho_max_w: f64,
    pub rho_min_o: f64,
    pub rho_max_o: f64,
    pub neuron_statistic: NeuronStatistic,
    pub seed: u64,
}

impl PruneConfig {
    pub fn new(rho_min_w: f64, rho_max_w: f64, rho_min_o: f64, rho_max_o: f64) -> Result<Self> {
        let config = Self {
            rho_min_w,
            rho_max_w,
            rho_min_o,
            rho_max_o,
            neuron_statistic: NeuronStatistic::Mean,
            seed: 0,
        };
        config.check()?;
        Ok(config)
    }

    pub fn identity() -> Self {
        Self {
            rho_min_w: 0.0,
            rho_max_w: 0.0,
            rho_min_o: 0.0,
            rho_max_o: 0.0,
            neuron_statistic: NeuronStatistic::Mean,
            seed: 0,
        }
    }

    pub fn with_statistic(mut self, statistic: NeuronStatistic) -> Self {
        self.neuron_statistic = statistic;
        self
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [
            ("rho_min_w", self.rho_min_w),
            ("rho_max_w", self.rho_max_w),
            ("rho_min_o", self.rho_min_o),
            ("rho_max_o", self.rho_max_o),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(OpnpError::invalid(
                    "percentage",
                    format!("{name} = {v} is outside [0, 100]"),
                ));
            }
        }
        if self.rho_min_w + self.rho_max_w >= 100.0 {
            return Err(OpnpError::BandEmpty {
                low: self.rho_min_w,
                high: self.rho_max_w,
                total: 100,
            });
        }
        if self.rho_min_o + self.rho_max_o >= 100.0 {
            return Err(OpnpError::BandEmpty {
                low: self.rho_min_o,
                high: self.rho_max_o,
                total: 100,
            });
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rho_min_w == 0.0
            && self.rho_max_w == 0.0
            && self.rho_min_o == 0.0
            && self.rho_max_o == 0.0
    }

    pub fn rho_tuple(&self) -> [f64; 4] {
        [
            self.rho_min_w,
            self.rho_max_w,
            self.rho_min_o,
            self.rho_max_o,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Msp,
    Energy,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = OpnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreKind::Msp),
            "energy" => Ok(ScoreKind::Energy),
            other => Err(OpnpError::invalid("score kind", other.to_string())),
        }
    }
}

/// Per-sample OOD scores; higher means more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    kind: ScoreKind,
    temperature: f64,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, kind: ScoreKind, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(OpnpError::NonPositiveTemperature(temperature));
        }
        if let Some(idx) = scores.iter().position(|s| !s.is_finite()) {
            return Err(OpnpError::NonFiniteValue {
                location: format!("score[{idx}]"),
            });
        }
        if kind == ScoreKind::Msp {
            if let Some(idx) = scores.iter().position(|&s| !(s > 0.0 && s <= 1.0)) {
                return Err(OpnpError::invalid(
                    "msp score",
                    format!("score[{idx}] = {} is outside (0, 1]", scores[idx]),
                ));
            }
        }
        Ok(Self {
            scores,
            kind,
            temperature,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Separability and calibration summary for one ID/OOD pair.
///
/// `ece` and `reliability_bins` are present only when the ID population
/// carried labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub lambda: f64,
    pub ece: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
    pub histogram: Histogram,
    pub reliability_bins: Option<ReliabilityBins>,
}

impl EvalReport {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("fpr95", self.fpr95), ("auroc", self.auroc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(OpnpError::invalid(
                    "report",
                    format!("{name} = {v} outside [0, 1]"),
                ));
            }
        }
        if let Some(e) = self.ece {
            if !(0.0..=1.0).contains(&e) {
                return Err(OpnpError::invalid(
                    "report",
                    format!("ece = {e} outside [0, 1]"),
                ));
            }
        }
        let id_total: usize = self.histogram.id_counts.iter().sum();
        let ood_total: usize = self.histogram.ood_counts.iter().sum();
        if id_total != self.n_id || ood_total != self.n_ood {
            return Err(OpnpError::invalid(
                "report",
                format!(
                    "histogram counts ({id_total}, {ood_total}) do not match populations ({}, {})",
                    self.n_id, self.n_ood
                ),
            ));
        }
        if let Some(bins) = &self.reliability_bins {
            let total: usize = bins.bins.iter().map(|b| b.count).sum();
            if total != self.n_id {
                return Err(OpnpError::invalid(
                    "report",
                    format!("reliability counts sum to {total}, expected {}", self.n_id),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(l: usize, k: usize) -> ClassifierHead {
        ClassifierHead::new(l, k, vec![0.5; l * k], vec![0.0; k]).unwrap()
    }

    fn features(n: usize, l: usize) -> FeatureSet {
        FeatureSet::new(n, l, vec![1.0; n * l], None, "test").unwrap()
    }

    #[test]
    fn validate_accepts_matching_width() {
        validate(&head(2048, 4), &features(2, 2048)).unwrap();
    }

    #[test]
    fn validate_reports_both_dims_on_mismatch() {
        let err = validate(&head(2048, 4), &features(2, 768)).unwrap_err();
        assert!(matches!(
            err,
            OpnpError::DimensionMismatch {
                expected: 2048,
                found: 768
            }
        ));
    }

    #[test]
    fn nan_feature_is_rejected() {
        let mut data = vec![0.0; 6];
        data[4] = f32::NAN;
        let err = FeatureSet::new(2, 3, data, None, "x").unwrap_err();
        match err {
            OpnpError::NonFiniteValue { location } => assert!(location.contains("row 1 col 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_checked_against_head() {
        let fs = FeatureSet::new(2, 1, vec![0.0, 1.0], Some(vec![0, 3]), "x").unwrap();
        assert!(matches!(
            validate(&head(1, 3), &fs),
            Err(OpnpError::LabelOutOfRange {
                row: 1,
                label: 3,
                ..
            })
        ));
        validate(&head(1, 4), &fs).unwrap();
    }

    #[test]
    fn fresh_head_has_all_true_masks() {
        let h = head(3, 2);
        assert!(h.weight_mask().iter().all(|&m| m));
        assert!(h.neuron_mask().iter().all(|&m| m));
        assert_eq!(h.pruned_weight_count(), 0);
    }

    #[test]
    fn non_finite_weight_rejected() {
        let err = ClassifierHead::new(1, 2, vec![1.0, f32::INFINITY], vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, OpnpError::NonFiniteValue { .. }));
    }

    #[test]
    fn masks_compose_in_either_order() {
        let h = head(3, 2);
        let wm = vec![true, false, true, true, false, true];
        let nm = vec![true, true, false];
        let a = h.clone().with_masks(wm.clone(), vec![true; 3]).unwrap();
        let a = a
            .clone()
            .with_masks(a.weight_mask().to_vec(), nm.clone())
            .unwrap();
        let b = h.clone().with_masks(vec![true; 6], nm.clone()).unwrap();
        let b = b.clone().with_masks(wm, b.neuron_mask().to_vec()).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(a.effective_weight(i, j), b.effective_weight(i, j));
            }
        }
        assert_eq!(a.effective_weight(0, 1), 0.0);
        assert_eq!(a.effective_weight(2, 0), 0.0);
    }

    #[test]
    fn negative_sensitivity_rejected() {
        assert!(SensitivityMap::new(1, 2, vec![0.1, -0.1], 1, "t").is_err());
        assert!(NeuronSensitivity::new(vec![f32::NAN], NeuronStatistic::Mean).is_err());
    }

    #[test]
    fn prune_config_band_must_be_nonempty() {
        assert!(matches!(
            PruneConfig::new(60.0, 40.0, 0.0, 0.0),
            Err(OpnpError::BandEmpty { .. })
        ));
        assert!(matches!(
            PruneConfig::new(0.0, 0.0, 50.0, 50.0),
            Err(OpnpError::BandEmpty { .. })
        ));
        assert!(PruneConfig::new(60.0, 5.0, 50.0, 49.0).is_ok());
        assert!(PruneConfig::new(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn statistic_parses_all_names() {
        for stat in NeuronStatistic::ALL {
            assert_eq!(stat.as_str().parse::<NeuronStatistic>().unwrap(), stat);
        }
        assert!(matches!(
            "mode".parse::<NeuronStatistic>(),
            Err(OpnpError::UnknownStatistic(_))
        ));
    }

    #[test]
    fn msp_scores_must_be_probabilities() {
        assert!(ScoreVector::new(vec![0.5, 1.0], ScoreKind::Msp, 1.0).is_ok());
        assert!(ScoreVector::new(vec![0.0], ScoreKind::Msp, 1.0).is_err());
        assert!(ScoreVector::new(vec![3.0], ScoreKind::Energy, 1.0).is_ok());
        assert!(ScoreVector::new(vec![3.0], ScoreKind::Energy, 0.0).is_err());
    }
}
