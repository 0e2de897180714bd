//! Percentile pruning of weights and neurons, the baseline pruners, and
//! activation clipping.
//!
//! Percentages are turned into counts with `ceil(ρ/100 · n)`; the entries
//! removed are the first (low side) and last (high side) of a stable sort on
//! `(value, flat index)`. Thresholds are reported for reference only.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::types::{ClassifierHead, FeatureSet, NeuronSensitivity, PruneConfig, SensitivityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

/// `ceil(rho/100 · n)`, tolerant of products that should be integers but
/// picked up rounding noise (e.g. 0.3 · 1000).
pub fn prune_count(rho: f64, n: usize) -> usize {
    let exact = rho * n as f64 / 100.0;
    let rounded = exact.round();
    let count = if (exact - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (count.max(0.0) as usize).min(n)
}

/// Indices of `values` in ascending order, ties broken by index.
pub fn rank_order(values: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

fn check_percent(name: &'static str, rho: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&rho) {
        return Err(OpnpError::invalid(
            name,
            format!("{rho} is outside [0, 100]"),
        ));
    }
    Ok(())
}

/// Nearest-rank percentile. Low side: the value at ascending rank
/// `ceil(ρ/100·n)`. High side: the value at that rank counted from the top.
/// `ρ = 0` yields `-∞` (low) or `+∞` (high), meaning nothing is pruned.
pub fn percentile_threshold(values: &[f32], rho: f64, side: Side) -> Result<f64> {
    if values.is_empty() {
        return Err(OpnpError::EmptyInput("percentile of an empty vector"));
    }
    check_percent("percentile", rho)?;
    let k = prune_count(rho, values.len());
    if k == 0 {
        return Ok(match side {
            Side::Low => f64::NEG_INFINITY,
            Side::High => f64::INFINITY,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    Ok(match side {
        Side::Low => sorted[k - 1] as f64,
        Side::High => sorted[sorted.len() - k] as f64,
    })
}

/// Keep-mask for one vector of sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMask {
    pub keep: Vec<bool>,
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub pruned_low: usize,
    pub pruned_high: usize,
}

impl BandMask {
    pub fn pruned(&self) -> usize {
        self.pruned_low + self.pruned_high
    }
}

/// Masks the `ceil(ρ_low%)` smallest and `ceil(ρ_high%)` largest entries.
pub fn band_mask(values: &[f32], rho_low: f64, rho_high: f64) -> Result<BandMask> {
    if values.is_empty() {
        return Err(OpnpError::EmptyInput("nothing to prune"));
    }
    check_percent("low percentage", rho_low)?;
    check_percent("high percentage", rho_high)?;
    let n = values.len();
    let k_low = prune_count(rho_low, n);
    let k_high = prune_count(rho_high, n);
    if rho_low + rho_high >= 100.0 || k_low + k_high >= n {
        return Err(OpnpError::BandEmpty {
            low: rho_low,
            high: rho_high,
            total: n,
        });
    }
    let order = rank_order(values);
    let mut keep = vec![true; n];
    for &idx in order[..k_low].iter().chain(&order[n - k_high..]) {
        keep[idx] = false;
    }
    let low_threshold = if k_low == 0 {
        f64::NEG_INFINITY
    } else {
        values[order[k_low - 1]] as f64
    };
    let high_threshold = if k_high == 0 {
        f64::INFINITY
    } else {
        values[order[n - k_high]] as f64
    };
    Ok(BandMask {
        keep,
        low_threshold,
        high_threshold,
        pruned_low: k_low,
        pruned_high: k_high,
    })
}

/// Thresholds induced by the four percentages; infinite when a side prunes
/// nothing or the pruner is not value-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(with = "crate::io::nonfinite")]
    pub weight_min: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub weight_max: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub neuron_min: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub neuron_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            weight_min: f64::NEG_INFINITY,
            weight_max: f64::INFINITY,
            neuron_min: f64::NEG_INFINITY,
            neuron_max: f64::INFINITY,
        }
    }
}

/// Masks produced by one pruning pass over an L×K head.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub features: usize,
    pub classes: usize,
    pub weight_mask: Vec<bool>,
    pub neuron_mask: Vec<bool>,
    pub thresholds: Thresholds,
    pub pruned_weights: usize,
    pub pruned_neurons: usize,
}

impl PruneOutcome {
    pub fn keep_all(features: usize, classes: usize) -> Self {
        Self {
            features,
            classes,
            weight_mask: vec![true; features * classes],
            neuron_mask: vec![true; features],
            thresholds: Thresholds::default(),
            pruned_weights: 0,
            pruned_neurons: 0,
        }
    }

    /// Elementwise AND of both masks. Symmetric in its arguments.
    pub fn merge(&self, other: &PruneOutcome) -> Result<PruneOutcome> {
        if self.features != other.features || self.classes != other.classes {
            return Err(OpnpError::DimensionMismatch {
                expected: self.features * self.classes,
                found: other.features * other.classes,
            });
        }
        let weight_mask: Vec<bool> = self
            .weight_mask
            .iter()
            .zip(&other.weight_mask)
            .map(|(a, b)| *a && *b)
            .collect();
        let neuron_mask: Vec<bool> = self
            .neuron_mask
            .iter()
            .zip(&other.neuron_mask)
            .map(|(a, b)| *a && *b)
            .collect();
        let pick = |a: f64, b: f64, default: f64| if a == default { b } else { a };
        let t = Thresholds {
            weight_min: pick(
                self.thresholds.weight_min,
                other.thresholds.weight_min,
                f64::NEG_INFINITY,
            ),
            weight_max: pick(
                self.thresholds.weight_max,
                other.thresholds.weight_max,
                f64::INFINITY,
            ),
            neuron_min: pick(
                self.thresholds.neuron_min,
                other.thresholds.neuron_min,
                f64::NEG_INFINITY,
            ),
            neuron_max: pick(
                self.thresholds.neuron_max,
                other.thresholds.neuron_max,
                f64::INFINITY,
            ),
        };
        Ok(PruneOutcome {
            features: self.features,
            classes: self.classes,
            pruned_weights: weight_mask.iter().filter(|&&m| !m).count(),
            pruned_neurons: neuron_mask.iter().filter(|&&m| !m).count(),
            weight_mask,
            neuron_mask,
            thresholds: t,
        })
    }

    /// Returns `head` carrying these masks. Weights are untouched.
    pub fn apply(&self, head: &ClassifierHead) -> Result<ClassifierHead> {
        if head.features() != self.features || head.classes() != self.classes {
            return Err(OpnpError::DimensionMismatch {
                expected: head.features() * head.classes(),
                found: self.features * self.classes,
            });
        }
        head.clone()
            .with_masks(self.weight_mask.clone(), self.neuron_mask.clone())
    }
}

/// Removes the lowest `ρ_min^w` and highest `ρ_max^w` percent of weights by sensitivity.
pub fn prune_weights(
    head: &ClassifierHead,
    map: &SensitivityMap,
    rho_min_w: f64,
    rho_max_w: f64,
) -> Result<PruneOutcome> {
    map.check_shape(head)?;
    let band = band_mask(map.values(), rho_min_w, rho_max_w)?;
    let mut outcome = PruneOutcome::keep_all(head.features(), head.classes());
    outcome.pruned_weights = band.pruned();
    outcome.thresholds.weight_min = band.low_threshold;
    outcome.thresholds.weight_max = band.high_threshold;
    outcome.weight_mask = band.keep;
    Ok(outcome)
}

/// Removes the lowest `ρ_min^o` and highest `ρ_max^o` percent of neurons.
/// `classes` sizes the (all-true) weight mask of the outcome.
pub fn prune_neurons(
    neurons: &NeuronSensitivity,
    classes: usize,
    rho_min_o: f64,
    rho_max_o: f64,
) -> Result<PruneOutcome> {
    let band = band_mask(neurons.values(), rho_min_o, rho_max_o)?;
    let mut outcome = PruneOutcome::keep_all(neurons.values().len(), classes);
    outcome.pruned_neurons = band.pruned();
    outcome.thresholds.neuron_min = band.low_threshold;
    outcome.thresholds.neuron_max = band.high_threshold;
    outcome.neuron_mask = band.keep;
    Ok(outcome)
}

/// Weight pruning followed by neuron pruning for one configuration.
pub fn prune(
    head: &ClassifierHead,
    map: &SensitivityMap,
    neurons: &NeuronSensitivity,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    config.check()?;
    if neurons.values().len() != head.features() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features(),
            found: neurons.values().len(),
        });
    }
    if neurons.statistic() != config.neuron_statistic {
        return Err(OpnpError::StatisticMismatch {
            expected: config.neuron_statistic.to_string(),
            found: neurons.statistic().to_string(),
        });
    }
    let weights = prune_weights(head, map, config.rho_min_w, config.rho_max_w)?;
    let neurons = prune_neurons(neurons, head.classes(), config.rho_min_o, config.rho_max_o)?;
    weights.merge(&neurons)
}

/// Comparison pruners that ignore sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Random parameter pruning.
    Rpp,
    /// Low-magnitude weight pruning.
    Tpp,
    /// Random neuron pruning.
    Rnp,
    /// Low mean-activation neuron pruning.
    Tnp,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Rpp => "RPP",
            BaselineKind::Tpp => "TPP",
            BaselineKind::Rnp => "RNP",
            BaselineKind::Tnp => "TNP",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = OpnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RPP" => Ok(BaselineKind::Rpp),
            "TPP" => Ok(BaselineKind::Tpp),
            "RNP" => Ok(BaselineKind::Rnp),
            "TNP" => Ok(BaselineKind::Tnp),
            _ => Err(OpnpError::invalid("baseline", s.to_string())),
        }
    }
}

fn random_mask(n: usize, k: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; n];
    for idx in index::sample(&mut rng, n, k) {
        keep[idx] = false;
    }
    keep
}

fn lowest_mask(values: &[f32], k: usize) -> (Vec<bool>, f64) {
    let order = rank_order(values);
    let mut keep = vec![true; values.len()];
    for &idx in &order[..k] {
        keep[idx] = false;
    }
    let threshold = if k == 0 {
        f64::NEG_INFINITY
    } else {
        values[order[k - 1]] as f64
    };
    (keep, threshold)
}

/// Mean of |h_i| over the rows of `features`, per neuron.
pub fn mean_abs_activation(features: &FeatureSet) -> Vec<f32> {
    let mut acc = vec![0.0f64; features.cols()];
    for row in features.iter_rows() {
        for (a, &h) in acc.iter_mut().zip(row) {
            *a += (h as f64).abs();
        }
    }
    let n = features.rows() as f64;
    acc.iter().map(|&s| (s / n) as f32).collect()
}

/// Baseline pruners. `features` (training activations) is needed only by TNP.
pub fn baseline_prune(
    head: &ClassifierHead,
    features: Option<&FeatureSet>,
    kind: BaselineKind,
    rho: f64,
    seed: u64,
) -> Result<PruneOutcome> {
    let (l, k) = (head.features(), head.classes());
    if !(0.0..100.0).contains(&rho) {
        return Err(OpnpError::BandEmpty {
            low: rho,
            high: 0.0,
            total: match kind {
                BaselineKind::Rpp | BaselineKind::Tpp => l * k,
                BaselineKind::Rnp | BaselineKind::Tnp => l,
            },
        });
    }
    let mut outcome = PruneOutcome::keep_all(l, k);
    match kind {
        BaselineKind::Rpp | BaselineKind::Tpp => {
            let count = prune_count(rho, l * k);
            if count >= l * k {
                return Err(OpnpError::BandEmpty {
                    low: rho,
                    high: 0.0,
                    total: l * k,
                });
            }
            if kind == BaselineKind::Rpp {
                outcome.weight_mask = random_mask(l * k, count, seed);
            } else {
                let magnitudes: Vec<f32> = head.weights().iter().map(|w| w.abs()).collect();
                let (keep, threshold) = lowest_mask(&magnitudes, count);
                outcome.weight_mask = keep;
                outcome.thresholds.weight_min = threshold;
            }
            outcome.pruned_weights = count;
        }
        BaselineKind::Rnp | BaselineKind::Tnp => {
            let count = prune_count(rho, l);
            if count >= l {
                return Err(OpnpError::BandEmpty {
                    low: rho,
                    high: 0.0,
                    total: l,
                });
            }
            if kind == BaselineKind::Rnp {
                outcome.neuron_mask = random_mask(l, count, seed);
            } else {
                let features =
                    features.ok_or(OpnpError::EmptyInput("TNP needs training features"))?;
                if features.cols() != l {
                    return Err(OpnpError::DimensionMismatch {
                        expected: l,
                        found: features.cols(),
                    });
                }
                let (keep, threshold) = lowest_mask(&mean_abs_activation(features), count);
                outcome.neuron_mask = keep;
                outcome.thresholds.neuron_min = threshold;
            }
            outcome.pruned_neurons = count;
        }
    }
    Ok(outcome)
}

/// Replaces every activation by `min(h, clip)`. `+∞` leaves features as is.
pub fn react_clip(features: &FeatureSet, clip: f32) -> Result<FeatureSet> {
    if clip.is_nan() {
        return Err(OpnpError::NonFiniteValue {
            location: "clip threshold".into(),
        });
    }
    features.map_values(|h| h.min(clip))
}

/// Nearest-rank `percentile` over every activation entry of `features`.
pub fn react_threshold(features: &FeatureSet, percentile: f64) -> Result<f32> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(OpnpError::invalid(
            "clip percentile",
            format!("{percentile} is outside (0, 100]"),
        ));
    }
    Ok(percentile_threshold(features.data(), percentile, Side::Low)? as f32)
}
