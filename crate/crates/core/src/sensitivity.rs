//! Parameter sensitivity of the head: averaged magnitudes of the energy
//! gradient with respect to each weight, and per-neuron row statistics.
//!
//! With `E(x) = -log Σ_j exp(f_j(x))` and `f = Wᵀh + b`, the gradient is
//! analytic: `∂E/∂W_ij = -p_j(x) · h_i(x)` where `p = softmax(f)`. No
//! autodiff is needed; the finite-difference oracle in `toymodel` checks it.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{OpnpError, Result};
use crate::scoring::{compute_logits, softmax};
use crate::types::{
    ClassifierHead, FeatureSet, NeuronSensitivity, NeuronStatistic, SensitivityMap,
};

/// Rows per reduction chunk. Partial sums are combined in chunk order, so
/// the result does not depend on how many workers ran.
const CHUNK_ROWS: usize = 256;

/// Energy gradient at one sample, L×K row-major, plus the bias gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GradientSample {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

fn clipped(head: &ClassifierHead, h: f32) -> f64 {
    match head.activation_clip() {
        Some(c) => h.min(c) as f64,
        None => h as f64,
    }
}

/// Closed-form `∂E/∂W_ij = -p_j · h_i`; masked connections get 0.
pub fn per_sample_gradient(head: &ClassifierHead, feature: &[f32]) -> Result<GradientSample> {
    let logits = compute_logits(head, feature)?;
    let probs = softmax(&logits, 1.0)?;
    let (l, k) = (head.features(), head.classes());
    let mut values = vec![0.0; l * k];
    for (i, &raw) in feature.iter().enumerate() {
        let h = clipped(head, raw);
        for j in 0..k {
            if head.is_active(i, j) {
                values[i * k + j] = -probs[j] * h;
            }
        }
    }
    let bias = probs.iter().map(|p| -p).collect();
    Ok(GradientSample {
        rows: l,
        cols: k,
        values,
        bias,
    })
}

/// Number of rows drawn for a given ratio: `ceil(ratio · n)`.
pub fn sample_size(ratio: f64, rows: usize) -> usize {
    let exact = ratio * rows as f64;
    let rounded = exact.round();
    // Products like 0.07 * 100 land a hair above the integer they denote.
    let m = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (m as usize).min(rows)
}

/// Row indices used for a ratio/seed pair, ascending.
pub fn sample_rows(rows: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(OpnpError::invalid(
            "sample ratio",
            format!("{ratio} is outside (0, 1]"),
        ));
    }
    let m = sample_size(ratio, rows);
    if m == 0 {
        return Err(OpnpError::EmptySelection { ratio, rows });
    }
    if m == rows {
        return Ok((0..rows).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, rows, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn accumulate_chunk(
    head: &ClassifierHead,
    features: &FeatureSet,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let (l, k) = (head.features(), head.classes());
    let mut acc = vec![0.0f64; l * k];
    for &r in rows {
        let feature = features.row(r);
        let probs = softmax(&compute_logits(head, feature)?, 1.0)?;
        for (i, &raw) in feature.iter().enumerate() {
            if !head.neuron_mask()[i] {
                continue;
            }
            let h = clipped(head, raw).abs();
            if h == 0.0 {
                continue;
            }
            let row = i * k;
            for j in 0..k {
                if head.weight_mask()[row + j] {
                    acc[row + j] += probs[j] * h;
                }
            }
        }
    }
    Ok(acc)
}

/// M_ij = (1/m) Σ_k |g_ij(x_k)| over a seeded subset of `ceil(ratio · N)` rows.
pub fn estimate_sensitivity(
    head: &ClassifierHead,
    features: &FeatureSet,
    sample_ratio: f64,
    seed: u64,
) -> Result<SensitivityMap> {
    if features.cols() != head.features() {
        return Err(OpnpError::DimensionMismatch {
            expected: head.features(),
            found: features.cols(),
        });
    }
    let rows = sample_rows(features.rows(), sample_ratio, seed)?;
    let m = rows.len();

    let partials = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| accumulate_chunk(head, features, chunk))
        .collect::<Result<Vec<_>>>()?;

    let mut total = vec![0.0f64; head.features() * head.classes()];
    for partial in &partials {
        for (t, p) in total.iter_mut().zip(partial) {
            *t += p;
        }
    }
    let values = total.iter().map(|&s| (s / m as f64) as f32).collect();
    SensitivityMap::new(
        head.features(),
        head.classes(),
        values,
        m,
        format!("{} ratio={} seed={}", features.name(), sample_ratio, seed),
    )
}

fn row_statistic(row: &[f32], statistic: NeuronStatistic) -> f64 {
    let k = row.len() as f64;
    let values = row.iter().map(|&v| v as f64);
    match statistic {
        NeuronStatistic::Mean => values.sum::<f64>() / k,
        NeuronStatistic::Max => values.fold(f64::NEG_INFINITY, f64::max),
        NeuronStatistic::Min => values.fold(f64::INFINITY, f64::min),
        NeuronStatistic::Median => {
            let mut sorted: Vec<f64> = values.collect();
            sorted.sort_by(f64::total_cmp);
            sorted[(sorted.len() - 1) / 2]
        }
        NeuronStatistic::L2 => values.map(|v| v * v).sum::<f64>().sqrt(),
        NeuronStatistic::Variance => {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / k;
            values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / k
        }
    }
}

/// O_i = statistic over row i of M. `Mean` is the default neuron sensitivity.
pub fn neuron_sensitivity(
    map: &SensitivityMap,
    statistic: NeuronStatistic,
) -> Result<NeuronSensitivity> {
    let values = (0..map.rows())
        .map(|i| row_statistic(map.row(i), statistic) as f32)
        .collect();
    NeuronSensitivity::new(values, statistic)
}

/// Every supported row statistic, in `NeuronStatistic::ALL` order.
pub fn all_neuron_sensitivities(map: &SensitivityMap) -> Result<Vec<NeuronSensitivity>> {
    NeuronStatistic::ALL
        .iter()
        .map(|&stat| neuron_sensitivity(map, stat))
        .collect()
}
