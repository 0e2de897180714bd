//! Logits, softmax, and the two OOD scores (MSP and energy).

use rayon::prelude::*;

use crate::error::{OpnpError, Result};
use crate::types::{validate, ClassifierHead, FeatureSet, ScoreKind, ScoreVector};

/// Raw head output f(x), one entry per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OpnpError::EmptyInput("logit vector is empty"));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(OpnpError::NonFiniteValue {
                location: format!("logit[{idx}]"),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = j;
            }
        }
        best
    }
}

/// Binary decision of the threshold detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Id,
    Ood,
}

/// f_j = Σ_i W̄_ij · h̄_i + b_j with masks and any activation clip applied.
pub fn compute_logits(head: &ClassifierHead, feature: &[f32]) -> Result<LogitVector> {
    if feature.len() != head.features() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features(),
            found: feature.len(),
        });
    }
    let k = head.classes();
    let weights = head.weights();
    let weight_mask = head.weight_mask();
    let neuron_mask = head.neuron_mask();
    let clip = head.activation_clip();

    let mut acc = vec![0.0f64; k];
    for (i, &raw) in feature.iter().enumerate() {
        if !neuron_mask[i] {
            continue;
        }
        let h = match clip {
            Some(c) => raw.min(c),
            None => raw,
        } as f64;
        let row = i * k;
        for j in 0..k {
            if weight_mask[row + j] {
                acc[j] += weights[row + j] as f64 * h;
            }
        }
    }
    for (a, &b) in acc.iter_mut().zip(head.bias()) {
        *a += b as f64;
    }
    LogitVector::new(acc)
}

/// log Σ exp(v), shifted by the max so large entries cannot overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Temperature-scaled softmax over the logits.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(OpnpError::NonPositiveTemperature(temperature));
    }
    let scaled: Vec<f64> = logits.values().iter().map(|&f| f / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Maximum softmax probability.
pub fn msp_score(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(OpnpError::EmptyInput("probability vector is empty"));
    }
    if let Some(idx) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(OpnpError::invalid(
            "probability vector",
            format!("entry {idx} = {} outside [0, 1]", probs[idx]),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(OpnpError::invalid(
            "probability vector",
            format!("sums to {total}"),
        ));
    }
    Ok(probs.iter().copied().fold(0.0, f64::max))
}

/// Negative free energy, log Σ exp(f_i). Larger means more in-distribution.
pub fn energy_score(logits: &LogitVector) -> f64 {
    log_sum_exp(logits.values())
}

/// Threshold detector: ID iff `score >= lambda`.
pub fn classify(score: f64, lambda: f64) -> Detection {
    if score >= lambda {
        Detection::Id
    } else {
        Detection::Ood
    }
}

fn score_one(head: &ClassifierHead, row: &[f32], kind: ScoreKind, temperature: f64) -> Result<f64> {
    let logits = compute_logits(head, row)?;
    match kind {
        ScoreKind::Energy => Ok(energy_score(&logits)),
        ScoreKind::Msp => msp_score(&softmax(&logits, temperature)?),
    }
}

/// Scores every row of `features`; output order follows row order.
///
/// Temperature only affects MSP.
pub fn score_batch(
    head: &ClassifierHead,
    features: &FeatureSet,
    kind: ScoreKind,
    temperature: f64,
) -> Result<ScoreVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(OpnpError::NonPositiveTemperature(temperature));
    }
    validate_width(head, features)?;
    let scores = (0..features.rows())
        .into_par_iter()
        .map(|r| score_one(head, features.row(r), kind, temperature))
        .collect::<Result<Vec<f64>>>()?;
    ScoreVector::new(scores, kind, temperature)
}

/// Predicted class and its softmax confidence for every row.
pub fn predict_batch(
    head: &ClassifierHead,
    features: &FeatureSet,
    temperature: f64,
) -> Result<Vec<(usize, f64)>> {
    validate_width(head, features)?;
    (0..features.rows())
        .into_par_iter()
        .map(|r| {
            let logits = compute_logits(head, features.row(r))?;
            let probs = softmax(&logits, temperature)?;
            let class = logits.argmax();
            Ok((class, probs[class]))
        })
        .collect()
}

/// Fraction of labelled rows whose argmax matches the label.
pub fn accuracy(head: &ClassifierHead, features: &FeatureSet) -> Result<f64> {
    validate(head, features)?;
    let labels = features
        .labels()
        .ok_or(OpnpError::EmptyInput("accuracy needs labelled features"))?;
    let preds = predict_batch(head, features, 1.0)?;
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|((class, _), &label)| *class == label as usize)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn validate_width(head: &ClassifierHead, features: &FeatureSet) -> Result<()> {
    if features.cols() != head.features() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features(),
            found: features.cols(),
        });
    }
    Ok(())
}
