//! Grid search over the four pruning percentages on a validation split.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::metrics::{evaluate_scores, ReportOptions};
use crate::pruning::prune;
use crate::scoring::{predict_batch, score_batch};
use crate::types::{
    validate, ClassifierHead, EvalReport, FeatureSet, NeuronSensitivity, NeuronStatistic,
    PruneConfig, ScoreKind, SensitivityMap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Auroc,
    Fpr95,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Auroc => "auroc",
            Objective::Fpr95 => "fpr95",
        })
    }
}

impl FromStr for Objective {
    type Err = OpnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auroc" => Ok(Objective::Auroc),
            "fpr95" => Ok(Objective::Fpr95),
            other => Err(OpnpError::invalid("objective", other.to_string())),
        }
    }
}

/// Candidate percentages for each knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub rho_min_w: Vec<f64>,
    pub rho_max_w: Vec<f64>,
    pub rho_min_o: Vec<f64>,
    pub rho_max_o: Vec<f64>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_statistic")]
    pub neuron_statistic: NeuronStatistic,
}

fn default_statistic() -> NeuronStatistic {
    NeuronStatistic::Mean
}

impl Default for SweepGrid {
    /// The grid used for the ImageNet experiments.
    fn default() -> Self {
        Self {
            rho_min_w: vec![0.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            rho_max_w: vec![0.0, 0.1, 0.3, 0.5, 1.0, 3.0, 5.0],
            rho_min_o: vec![0.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            rho_max_o: vec![0.0, 0.5, 1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            objective: Objective::Auroc,
            neuron_statistic: NeuronStatistic::Mean,
        }
    }
}

impl SweepGrid {
    /// A grid holding exactly one configuration.
    pub fn single(config: &PruneConfig) -> Self {
        Self {
            rho_min_w: vec![config.rho_min_w],
            rho_max_w: vec![config.rho_max_w],
            rho_min_o: vec![config.rho_min_o],
            rho_max_o: vec![config.rho_max_o],
            objective: Objective::Auroc,
            neuron_statistic: config.neuron_statistic,
        }
    }

    pub fn check(&self) -> Result<()> {
        for (name, list) in [
            ("rho_min_w", &self.rho_min_w),
            ("rho_max_w", &self.rho_max_w),
            ("rho_min_o", &self.rho_min_o),
            ("rho_max_o", &self.rho_max_o),
        ] {
            if list.is_empty() {
                return Err(OpnpError::invalid("grid", format!("`{name}` is empty")));
            }
            if let Some(v) = list.iter().find(|v| !(0.0..100.0).contains(*v)) {
                return Err(OpnpError::invalid(
                    "grid",
                    format!("`{name}` value {v} is outside [0, 100)"),
                ));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.rho_min_w.len() * self.rho_max_w.len() * self.rho_min_o.len() * self.rho_max_o.len()
    }

    /// Every tuple of the cross product, in list order.
    pub fn configs(&self) -> Vec<PruneConfig> {
        let mut out = Vec::with_capacity(self.size());
        for &rho_min_w in &self.rho_min_w {
            for &rho_max_w in &self.rho_max_w {
                for &rho_min_o in &self.rho_min_o {
                    for &rho_max_o in &self.rho_max_o {
                        out.push(PruneConfig {
                            rho_min_w,
                            rho_max_w,
                            rho_min_o,
                            rho_max_o,
                            neuron_statistic: self.neuron_statistic,
                            seed: 0,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Energy-score evaluation of a head (with whatever masks it carries).
///
/// ECE and reliability bins are filled in when `val_id` has labels.
pub fn evaluate_head(
    head: &ClassifierHead,
    val_id: &FeatureSet,
    val_ood: &FeatureSet,
) -> Result<EvalReport> {
    validate(head, val_id)?;
    validate(head, val_ood)?;
    let id = score_batch(head, val_id, ScoreKind::Energy, 1.0)?;
    let ood = score_batch(head, val_ood, ScoreKind::Energy, 1.0)?;
    let calibration = match val_id.labels() {
        Some(labels) => {
            let preds = predict_batch(head, val_id, 1.0)?;
            let conf: Vec<f64> = preds.iter().map(|p| p.1).collect();
            let correct: Vec<bool> = preds
                .iter()
                .zip(labels)
                .map(|(p, &l)| p.0 == l as usize)
                .collect();
            Some((conf, correct))
        }
        None => None,
    };
    evaluate_scores(
        id.scores(),
        ood.scores(),
        calibration
            .as_ref()
            .map(|(c, k)| (c.as_slice(), k.as_slice())),
        ReportOptions::default(),
    )
}

/// Prunes `head` per `config` using precomputed sensitivities, then evaluates.
pub fn evaluate_config(
    head: &ClassifierHead,
    map: &SensitivityMap,
    neurons: &NeuronSensitivity,
    config: &PruneConfig,
    val_id: &FeatureSet,
    val_ood: &FeatureSet,
) -> Result<EvalReport> {
    let outcome = prune(head, map, neurons, config)?;
    evaluate_head(&outcome.apply(head)?, val_id, val_ood)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: PruneConfig,
    pub auroc: f64,
    pub fpr95: f64,
    pub ece: Option<f64>,
    pub pruned_weights: usize,
    pub pruned_neurons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub config: PruneConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best: PruneConfig,
    pub best_report: EvalReport,
    /// Best first.
    pub table: Vec<SweepRow>,
    pub skipped: Vec<SkippedConfig>,
}

fn cmp_tuple(a: &PruneConfig, b: &PruneConfig) -> Ordering {
    a.rho_tuple()
        .iter()
        .zip(b.rho_tuple().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Ranking used by the sweep: best row sorts first.
pub fn rank_rows(a: &SweepRow, b: &SweepRow, objective: Objective) -> Ordering {
    let primary = match objective {
        Objective::Auroc => b
            .auroc
            .total_cmp(&a.auroc)
            .then(a.fpr95.total_cmp(&b.fpr95)),
        Objective::Fpr95 => a
            .fpr95
            .total_cmp(&b.fpr95)
            .then(b.auroc.total_cmp(&a.auroc)),
    };
    primary.then_with(|| cmp_tuple(&a.config, &b.config))
}

/// Exhaustive search over `grid`. Sensitivities must come from training data.
pub fn grid_search(
    head: &ClassifierHead,
    map: &SensitivityMap,
    neurons: &NeuronSensitivity,
    grid: &SweepGrid,
    val_id: &FeatureSet,
    val_ood: &FeatureSet,
) -> Result<SweepResult> {
    grid.check()?;
    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for config in grid.configs() {
        match prune(head, map, neurons, &config) {
            Ok(outcome) => runnable.push((config, outcome)),
            Err(err @ OpnpError::BandEmpty { .. }) => skipped.push(SkippedConfig {
                config,
                reason: err.to_string(),
            }),
            Err(err) => return Err(err),
        }
    }
    if runnable.is_empty() {
        return Err(OpnpError::NoValidConfig);
    }

    let mut rows = runnable
        .par_iter()
        .map(|(config, outcome)| {
            let report = evaluate_head(&outcome.apply(head)?, val_id, val_ood)?;
            Ok(SweepRow {
                config: *config,
                auroc: report.auroc,
                fpr95: report.fpr95,
                ece: report.ece,
                pruned_weights: outcome.pruned_weights,
                pruned_neurons: outcome.pruned_neurons,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| rank_rows(a, b, grid.objective));

    let best = rows[0].config;
    let best_report = evaluate_config(head, map, neurons, &best, val_id, val_ood)?;
    Ok(SweepResult {
        best,
        best_report,
        table: rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::{estimate_sensitivity, neuron_sensitivity};

    /// Two informative neurons plus neuron 2, which is silent on ID data
    /// but fires strongly on OOD data and pushes class-0 logits up.
    fn noisy_neuron_fixture() -> (ClassifierHead, FeatureSet, FeatureSet, FeatureSet) {
        let head = ClassifierHead::new(3, 2, vec![2.0, -2.0, -2.0, 2.0, 3.0, 0.0], vec![0.0, 0.0])
            .unwrap();
        let mut train = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let a = 1.0 + (i % 5) as f32 * 0.1;
            if i % 2 == 0 {
                train.extend([a, 0.0, 0.0]);
                labels.push(0);
            } else {
                train.extend([0.0, a, 0.0]);
                labels.push(1);
            }
        }
        let train = FeatureSet::new(40, 3, train, Some(labels.clone()), "train").unwrap();
        let val_id = train.clone();
        let mut ood = Vec::new();
        for i in 0..40 {
            let a = 0.3 + (i % 7) as f32 * 0.05;
            ood.extend([a, a, 2.0]);
        }
        let val_ood = FeatureSet::new(40, 3, ood, None, "ood").unwrap();
        (head, train, val_id, val_ood)
    }

    #[test]
    fn identity_config_matches_baseline_bitwise() {
        let (head, train, id, ood) = noisy_neuron_fixture();
        let m = estimate_sensitivity(&head, &train, 1.0, 0).unwrap();
        let o = neuron_sensitivity(&m, NeuronStatistic::Mean).unwrap();
        let pruned = evaluate_config(&head, &m, &o, &PruneConfig::identity(), &id, &ood).unwrap();
        let baseline = evaluate_head(&head, &id, &ood).unwrap();
        assert_eq!(pruned, baseline);
        assert_eq!(pruned.auroc.to_bits(), baseline.auroc.to_bits());
        let again = evaluate_config(&head, &m, &o, &PruneConfig::identity(), &id, &ood).unwrap();
        assert_eq!(pruned, again);
    }

    #[test]
    fn band_empty_config_rejected() {
        let (head, train, id, ood) = noisy_neuron_fixture();
        let m = estimate_sensitivity(&head, &train, 1.0, 0).unwrap();
        let o = neuron_sensitivity(&m, NeuronStatistic::Mean).unwrap();
        let bad = PruneConfig {
            rho_min_w: 60.0,
            rho_max_w: 40.0,
            ..PruneConfig::identity()
        };
        assert!(matches!(
            evaluate_config(&head, &m, &o, &bad, &id, &ood),
            Err(OpnpError::BandEmpty { .. })
        ));
    }

    #[test]
    fn single_zero_grid_returns_baseline() {
        let (head, train, id, ood) = noisy_neuron_fixture();
        let m = estimate_sensitivity(&head, &train, 1.0, 0).unwrap();
        let o = neuron_sensitivity(&m, NeuronStatistic::Mean).unwrap();
        let grid = SweepGrid::single(&PruneConfig::identity());
        let res = grid_search(&head, &m, &o, &grid, &id, &ood).unwrap();
        assert!(res.best.is_identity());
        assert_eq!(res.best_report, evaluate_head(&head, &id, &ood).unwrap());
        assert_eq!(res.table.len(), 1);
    }

    #[test]
    fn masking_the_noisy_neuron_wins() {
        let (head, train, id, ood) = noisy_neuron_fixture();
        let m = estimate_sensitivity(&head, &train, 1.0, 0).unwrap();
        let o = neuron_sensitivity(&m, NeuronStatistic::Mean).unwrap();
        // Neuron 2 is never active on training data, so it has the lowest
        // sensitivity; 1/3 of neurons rounds to exactly that one.
        assert_eq!(o.values()[2], 0.0);
        let grid = SweepGrid {
            rho_min_w: vec![0.0],
            rho_max_w: vec![0.0],
            rho_min_o: vec![0.0, 30.0],
            rho_max_o: vec![0.0],
            objective: Objective::Auroc,
            neuron_statistic: NeuronStatistic::Mean,
        };
        let res = grid_search(&head, &m, &o, &grid, &id, &ood).unwrap();
        let baseline = evaluate_head(&head, &id, &ood).unwrap();
        let masked = head
            .clone()
            .with_masks(vec![true; 6], vec![true, true, false])
            .unwrap();
        let direct = evaluate_head(&masked, &id, &ood).unwrap();
        assert!(direct.auroc > baseline.auroc);
        assert_eq!(res.best.rho_min_o, 30.0);
        assert_eq!(res.best_report.auroc, direct.auroc);
    }

    #[test]
    fn table_counts_and_skips() {
        let (head, train, id, ood) = noisy_neuron_fixture();
        let m = estimate_sensitivity(&head, &train, 1.0, 0).unwrap();
        let o = neuron_sensitivity(&m, NeuronStatistic::Mean).unwrap();
        let grid = SweepGrid {
            rho_min_w: vec![0.0, 50.0],
            rho_max_w: vec![0.0, 20.0],
            rho_min_o: vec![0.0, 60.0],
            rho_max_o: vec![0.0, 50.0],
            objective: Objective::Fpr95,
            neuron_statistic: NeuronStatistic::Mean,
        };
        let res = grid_search(&head, &m, &o, &grid, &id, &ood).unwrap();
        assert_eq!(res.table.len() + res.skipped.len(), grid.size());
        assert!(!res.skipped.is_empty());
        for w in res.table.windows(2) {
            assert_ne!(rank_rows(&w[0], &w[1], Objective::Fpr95), Ordering::Greater);
        }
    }

    #[test]
    fn default_grid_is_the_published_one() {
        let g = SweepGrid::default();
        assert_eq!(g.size(), 8 * 7 * 7 * 9);
        g.check().unwrap();
        let mut bad = g.clone();
        bad.rho_max_o.clear();
        assert!(bad.check().is_err());
    }
}
