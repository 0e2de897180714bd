//! Separability and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::types::EvalReport;

pub const DEFAULT_TPR: f64 = 0.95;
pub const DEFAULT_ECE_BINS: usize = 15;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

fn check_scores(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(OpnpError::EmptyInput(what));
    }
    if let Some(idx) = scores.iter().position(|s| !s.is_finite()) {
        return Err(OpnpError::NonFiniteValue {
            location: format!("{what}[{idx}]"),
        });
    }
    Ok(())
}

/// Smallest `k` with `k / n >= rate`, evaluated in floating point so it
/// agrees with a direct fraction test.
fn min_count_for_rate(rate: f64, n: usize) -> usize {
    let nf = n as f64;
    let mut k = ((rate * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= rate {
        k -= 1;
    }
    while k < n && (k as f64 / nf) < rate {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprAtTpr {
    pub fpr: f64,
    pub lambda: f64,
}

/// False-positive rate at the largest threshold that still accepts a `tpr`
/// fraction of ID scores. `lambda` is always one of the observed ID scores.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<FprAtTpr> {
    check_scores(id_scores, "id scores")?;
    check_scores(ood_scores, "ood scores")?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(OpnpError::invalid(
            "tpr",
            format!("{tpr} is outside (0, 1]"),
        ));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = min_count_for_rate(tpr, sorted.len());
    let lambda = sorted[k - 1];
    let false_pos = ood_scores.iter().filter(|&&s| s >= lambda).count();
    Ok(FprAtTpr {
        fpr: false_pos as f64 / ood_scores.len() as f64,
        lambda,
    })
}

/// Area under the ROC curve, i.e. the Mann–Whitney statistic with ties
/// counted as one half. Runs in O(n log n) via binary search.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, "id scores")?;
    check_scores(ood_scores, "ood scores")?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);

    // Twice the U statistic, kept in integers so it is exact.
    let mut twice_u: u128 = 0;
    for &s in id_scores {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let denom = 2 * id_scores.len() as u128 * ood.len() as u128;
    let complement = denom - twice_u;
    // Divide the smaller half and subtract from one for the larger half, so
    // that auroc(a, b) + auroc(b, a) rounds to exactly 1.
    Ok(if twice_u <= complement {
        twice_u as f64 / denom as f64
    } else {
        1.0 - complement as f64 / denom as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub confidence_mean: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Equal-width confidence bins over (0, 1]; bin `b` covers `(b/n, (b+1)/n]`.
/// Empty bins report zero confidence and accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub n_bins: usize,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

fn confidence_bin(confidence: f64, n_bins: usize) -> usize {
    ((confidence * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1
}

/// Expected calibration error and the reliability diagram behind it.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<(f64, ReliabilityBins)> {
    if confidences.len() != correct.len() {
        return Err(OpnpError::LengthMismatch {
            what: "confidences vs correctness",
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if confidences.is_empty() {
        return Err(OpnpError::EmptyInput("no predictions to calibrate"));
    }
    if n_bins == 0 {
        return Err(OpnpError::invalid("n_bins", "must be at least 1"));
    }
    if let Some(idx) = confidences.iter().position(|c| !(*c > 0.0 && *c <= 1.0)) {
        return Err(OpnpError::invalid(
            "confidence",
            format!("entry {idx} = {} is outside (0, 1]", confidences[idx]),
        ));
    }

    let mut conf_sum = vec![0.0f64; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = confidence_bin(c, n_bins);
        conf_sum[b] += c;
        counts[b] += 1;
        hits[b] += ok as usize;
    }

    let total = confidences.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            if counts[b] == 0 {
                return ReliabilityBin {
                    confidence_mean: 0.0,
                    accuracy: 0.0,
                    count: 0,
                };
            }
            let n = counts[b] as f64;
            let confidence_mean = conf_sum[b] / n;
            let accuracy = hits[b] as f64 / n;
            ece += (n / total) * (accuracy - confidence_mean).abs();
            ReliabilityBin {
                confidence_mean,
                accuracy,
                count: counts[b],
            }
        })
        .collect();
    let ece = ece.clamp(0.0, 1.0);
    Ok((ece, ReliabilityBins { n_bins, bins, ece }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[low, high)`; out-of-range values go to the
/// boundary bins so the counts always sum to `scores.len()`.
pub fn score_histogram(scores: &[f64], n_bins: usize, range: (f64, f64)) -> Result<BinnedCounts> {
    let (low, high) = range;
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(OpnpError::InvalidRange { low, high });
    }
    if n_bins == 0 {
        return Err(OpnpError::invalid("n_bins", "must be at least 1"));
    }
    let width = (high - low) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|b| low + b as f64 * width).collect();
    edges.push(high);
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        let pos = ((s - low) / width).floor();
        let b = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(n_bins - 1)
        };
        counts[b] += 1;
    }
    Ok(BinnedCounts { edges, counts })
}

/// ID and OOD score histograms on shared edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

/// Histogram of both populations over their joint score range.
pub fn joint_histogram(id_scores: &[f64], ood_scores: &[f64], n_bins: usize) -> Result<Histogram> {
    let (mut low, mut high) = id_scores
        .iter()
        .chain(ood_scores)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    if !(low < high) {
        low -= 0.5;
        high += 0.5;
    }
    let id = score_histogram(id_scores, n_bins, (low, high))?;
    let ood = score_histogram(ood_scores, n_bins, (low, high))?;
    Ok(Histogram {
        edges: id.edges,
        id_counts: id.counts,
        ood_counts: ood.counts,
    })
}

/// Binning choices for [`evaluate_scores`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub histogram_bins: usize,
    pub ece_bins: usize,
    pub tpr: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            ece_bins: DEFAULT_ECE_BINS,
            tpr: DEFAULT_TPR,
        }
    }
}

/// Assembles a full report. `calibration` holds the ID population's
/// confidences and correctness when labels are available.
pub fn evaluate_scores(
    id_scores: &[f64],
    ood_scores: &[f64],
    calibration: Option<(&[f64], &[bool])>,
    options: ReportOptions,
) -> Result<EvalReport> {
    let fpr = fpr_at_tpr(id_scores, ood_scores, options.tpr)?;
    let auroc = auroc(id_scores, ood_scores)?;
    let histogram = joint_histogram(id_scores, ood_scores, options.histogram_bins)?;
    let (ece, reliability_bins) = match calibration {
        Some((conf, correct)) => {
            if conf.len() != id_scores.len() {
                return Err(OpnpError::LengthMismatch {
                    what: "calibration vs id scores",
                    left: conf.len(),
                    right: id_scores.len(),
                });
            }
            let (e, bins) = ece(conf, correct, options.ece_bins)?;
            (Some(e), Some(bins))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        fpr95: fpr.fpr,
        auroc,
        lambda: fpr.lambda,
        ece,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
        histogram,
        reliability_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores() {
        let id = [10.0, 11.0, 12.0];
        let ood = [0.0, 1.0, 2.0];
        let r = fpr_at_tpr(&id, &ood, 0.95).unwrap();
        assert_eq!(r.fpr, 0.0);
        assert_eq!(r.lambda, 10.0);
        assert_eq!(auroc(&id, &ood).unwrap(), 1.0);
        assert_eq!(auroc(&ood, &id).unwrap(), 0.0);
    }

    #[test]
    fn identical_populations() {
        let s: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let r = fpr_at_tpr(&s, &s, 0.95).unwrap();
        assert!(r.fpr >= 0.95 - 1e-12 && r.fpr < 0.952);
        assert_eq!(auroc(&s, &s).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn fpr_twenty_scores_threshold() {
        let id: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ood: Vec<f64> = (0..20).map(|i| i as f64 + 0.5).collect();
        // 19 of 20 ID scores must be accepted, so lambda = 1.
        let r = fpr_at_tpr(&id, &ood, 0.95).unwrap();
        assert_eq!(r.lambda, 1.0);
        assert_eq!(r.fpr, 19.0 / 20.0);
    }

    #[test]
    fn fpr_input_errors() {
        assert!(matches!(
            fpr_at_tpr(&[], &[1.0], 0.95),
            Err(OpnpError::EmptyInput(_))
        ));
        assert!(matches!(auroc(&[1.0], &[]), Err(OpnpError::EmptyInput(_))));
        assert!(fpr_at_tpr(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn ece_extremes() {
        let (e, bins) = ece(&[1.0; 5], &[true; 5], 15).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(bins.bins[14].count, 5);
        let (e, _) = ece(&[1.0; 5], &[false; 5], 15).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn ece_two_bin_hand_case() {
        // Bin 0 (0, 0.5]: conf {0.2, 0.4, 0.3}, correct {1, 0, 0} -> acc 1/3, mean 0.3.
        // Bin 1 (0.5, 1]: conf {0.9, 0.8, 0.7}, correct {1, 1, 0} -> acc 2/3, mean 0.8.
        // ECE = 0.5 * |1/3 - 0.3| + 0.5 * |2/3 - 0.8| = 0.5 * (1/30) + 0.5 * (2/15) = 1/12.
        let conf = [0.2, 0.4, 0.3, 0.9, 0.8, 0.7];
        let correct = [true, false, false, true, true, false];
        let (e, bins) = ece(&conf, &correct, 2).unwrap();
        assert!((e - 1.0 / 12.0).abs() < 1e-12);
        assert_eq!(bins.bins[0].count, 3);
        assert!((bins.bins[1].confidence_mean - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ece_rejects_mismatch_and_range() {
        assert!(matches!(
            ece(&[0.5], &[true, false], 10),
            Err(OpnpError::LengthMismatch { .. })
        ));
        assert!(ece(&[0.0], &[true], 10).is_err());
        assert!(ece(&[1.2], &[true], 10).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = score_histogram(&[0.0, 1.0, 2.0, 3.0], 2, (0.0, 4.0)).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![0.0, 2.0, 4.0]);
        let h = score_histogram(&[1.5; 7], 5, (0.0, 4.0)).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c == 7).count(), 1);
        let h = score_histogram(&[-10.0, 10.0], 3, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1]);
        assert!(matches!(
            score_histogram(&[1.0], 2, (1.0, 1.0)),
            Err(OpnpError::InvalidRange { .. })
        ));
    }

    #[test]
    fn joint_histogram_handles_constant_scores() {
        let h = joint_histogram(&[2.0, 2.0], &[2.0], 4).unwrap();
        assert_eq!(h.id_counts.iter().sum::<usize>(), 2);
        assert_eq!(h.ood_counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn report_is_consistent() {
        let id = [3.0, 4.0, 5.0, 6.0];
        let ood = [1.0, 2.0, 3.5];
        let conf = [0.9, 0.8, 0.7, 0.95];
        let correct = [true, true, false, true];
        let r =
            evaluate_scores(&id, &ood, Some((&conf, &correct)), ReportOptions::default()).unwrap();
        r.check().unwrap();
        assert_eq!(r.auroc, auroc(&id, &ood).unwrap());
        assert!(r.ece.is_some());
    }
}
