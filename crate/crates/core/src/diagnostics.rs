//! Diagnostics that explain why pruning helps: the logit reduction caused by
//! removing low-sensitivity weights, the ID/OOD sensitivity gap on those
//! weights, and a first-order flatness proxy.

use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::sensitivity::estimate_sensitivity;
use crate::types::{ClassifierHead, FeatureSet, SensitivityMap};

/// Δf_j = Σ_{i : (i,j) pruned} M_ij · |W_ij| · h_i(x).
///
/// `weight_mask` uses the head's convention (false = pruned).
pub fn logit_reduction(
    head: &ClassifierHead,
    map: &SensitivityMap,
    weight_mask: &[bool],
    feature: &[f32],
) -> Result<Vec<f64>> {
    map.check_shape(head)?;
    let (l, k) = (head.features(), head.classes());
    if weight_mask.len() != l * k {
        return Err(OpnpError::DimensionMismatch {
            expected: l * k,
            found: weight_mask.len(),
        });
    }
    if feature.len() != l {
        return Err(OpnpError::DimensionMismatch {
            expected: l,
            found: feature.len(),
        });
    }
    let mut delta = vec![0.0f64; k];
    for (i, &h) in feature.iter().enumerate() {
        for (j, d) in delta.iter_mut().enumerate() {
            if !weight_mask[i * k + j] {
                *d += map.get(i, j) as f64 * (head.weight(i, j) as f64).abs() * h as f64;
            }
        }
    }
    Ok(delta)
}

/// Mean of [`logit_reduction`] over every row of `features`.
pub fn mean_logit_reduction(
    head: &ClassifierHead,
    map: &SensitivityMap,
    weight_mask: &[bool],
    features: &FeatureSet,
) -> Result<Vec<f64>> {
    let mut total = vec![0.0f64; head.classes()];
    for row in features.iter_rows() {
        for (t, d) in total
            .iter_mut()
            .zip(logit_reduction(head, map, weight_mask, row)?)
        {
            *t += d;
        }
    }
    let n = features.rows() as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGap {
    pub mean_id: f64,
    pub mean_ood: f64,
    /// `mean_ood - mean_id`; expected to be positive.
    pub gap: f64,
    pub pruned_count: usize,
}

/// Recomputes sensitivities on both populations and compares their means
/// over the pruned positions of `weight_mask`.
pub fn sensitivity_gap(
    head: &ClassifierHead,
    weight_mask: &[bool],
    id_features: &FeatureSet,
    ood_features: &FeatureSet,
) -> Result<SensitivityGap> {
    if weight_mask.len() != head.features() * head.classes() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features() * head.classes(),
            found: weight_mask.len(),
        });
    }
    let pruned: Vec<usize> = weight_mask
        .iter()
        .enumerate()
        .filter(|(_, &keep)| !keep)
        .map(|(idx, _)| idx)
        .collect();
    if pruned.is_empty() {
        return Err(OpnpError::EmptyMask);
    }
    let id_map = estimate_sensitivity(head, id_features, 1.0, 0)?;
    let ood_map = estimate_sensitivity(head, ood_features, 1.0, 0)?;
    let mean_over = |m: &SensitivityMap| {
        pruned
            .iter()
            .map(|&idx| m.values()[idx] as f64)
            .sum::<f64>()
            / pruned.len() as f64
    };
    let mean_id = mean_over(&id_map);
    let mean_ood = mean_over(&ood_map);
    Ok(SensitivityGap {
        mean_id,
        mean_ood,
        gap: mean_ood - mean_id,
        pruned_count: pruned.len(),
    })
}

/// `radius · max M_ij`, a point estimate standing in for the supremum of
/// the gradient norm over a ball around the trained weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub radius: f64,
    pub proxy: f64,
    pub max_sensitivity: f64,
    /// (i, j) of the maximum; `None` when every position is masked.
    pub location: Option<(usize, usize)>,
}

pub fn flatness_proxy(map: &SensitivityMap, radius: f64) -> Result<FlatnessReport> {
    flatness_proxy_masked(map, None, radius)
}

/// Flatness proxy restricted to the kept positions of `weight_mask`.
pub fn flatness_proxy_masked(
    map: &SensitivityMap,
    weight_mask: Option<&[bool]>,
    radius: f64,
) -> Result<FlatnessReport> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(OpnpError::invalid(
            "radius",
            format!("{radius} must be positive"),
        ));
    }
    if let Some(mask) = weight_mask {
        if mask.len() != map.values().len() {
            return Err(OpnpError::DimensionMismatch {
                expected: map.values().len(),
                found: mask.len(),
            });
        }
    }
    let mut best: Option<(usize, f32)> = None;
    for (idx, &v) in map.values().iter().enumerate() {
        if weight_mask.is_some_and(|m| !m[idx]) {
            continue;
        }
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((idx, v));
        }
    }
    let max_sensitivity = best.map_or(0.0, |(_, v)| v as f64);
    Ok(FlatnessReport {
        radius,
        proxy: radius * max_sensitivity,
        max_sensitivity,
        location: best.map(|(idx, _)| (idx / map.cols(), idx % map.cols())),
    })
}
