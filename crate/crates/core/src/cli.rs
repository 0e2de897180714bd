//! `opnp` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal failure. Progress goes to stderr; results only to files.

use std::ffi::OsString;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diagnostics::{
    flatness_proxy_masked, mean_logit_reduction, sensitivity_gap, FlatnessReport, SensitivityGap,
};
use crate::error::OpnpError;
use crate::io;
use crate::metrics::{evaluate_scores, joint_histogram, Histogram, ReportOptions};
use crate::pruning::{baseline_prune, prune, prune_count, react_threshold, BaselineKind};
use crate::scoring::{accuracy, predict_batch, score_batch};
use crate::sensitivity::{all_neuron_sensitivities, estimate_sensitivity, neuron_sensitivity};
use crate::sweep::{evaluate_head, grid_search, Objective};
use crate::toymodel::{build_benchmark, OodKind, ToyConfig};
use crate::types::{validate, ClassifierHead, EvalReport, NeuronStatistic, PruneConfig, ScoreKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "opnp",
    version,
    about = "Sensitivity-guided head pruning for OOD detection"
)]
pub struct Cli {
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate weight and neuron sensitivities from training features.
    Estimate(EstimateArgs),
    /// Write a head with pruning masks.
    Prune(PruneArgs),
    /// Score a feature file with a head.
    Score(ScoreArgs),
    /// Evaluate ID vs OOD score files.
    Eval(EvalArgs),
    /// Grid-search pruning percentages on a validation split.
    Sweep(SweepArgs),
    /// Logit-reduction, sensitivity-gap and flatness diagnostics.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic benchmark (features and head).
    Toy(ToyArgs),
    /// estimate, prune, score and eval in one go.
    RunOpnp(RunArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of training rows to use, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub sample_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    #[value(name = "RPP", alias = "rpp")]
    Rpp,
    #[value(name = "TPP", alias = "tpp")]
    Tpp,
    #[value(name = "RNP", alias = "rnp")]
    Rnp,
    #[value(name = "TNP", alias = "tnp")]
    Tnp,
}

impl From<BaselineArg> for BaselineKind {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Rpp => BaselineKind::Rpp,
            BaselineArg::Tpp => BaselineKind::Tpp,
            BaselineArg::Rnp => BaselineKind::Rnp,
            BaselineArg::Tnp => BaselineKind::Tnp,
        }
    }
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sensitivity document from `estimate`.
    #[arg(long)]
    pub sens: Option<PathBuf>,
    /// Percent of lowest-sensitivity weights to remove.
    #[arg(long)]
    pub rho_min_w: Option<f64>,
    /// Percent of highest-sensitivity weights to remove.
    #[arg(long)]
    pub rho_max_w: Option<f64>,
    /// Percent of lowest-sensitivity neurons to remove.
    #[arg(long)]
    pub rho_min_o: Option<f64>,
    /// Percent of highest-sensitivity neurons to remove.
    #[arg(long)]
    pub rho_max_o: Option<f64>,
    #[arg(long, default_value = "mean")]
    pub neuron_stat: String,
    /// Use a comparison pruner instead of sensitivities.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Percent pruned by the baseline pruner.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training features (needed by TNP and --react-percentile).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Clip activations at this percentile of training activations.
    #[arg(long)]
    pub react_percentile: Option<f64>,
    /// Also write the masks as a standalone document.
    #[arg(long)]
    pub outcome: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Energy,
    Msp,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Energy => ScoreKind::Energy,
            ScoreArg::Msp => ScoreKind::Msp,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long, value_enum, default_value = "energy")]
    pub score: ScoreArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// ID score file.
    #[arg(long)]
    pub id: PathBuf,
    /// OOD score file.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = 15)]
    pub ece_bins: usize,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
    /// Labelled ID features, for calibration (needs --head).
    #[arg(long, requires = "head")]
    pub id_features: Option<PathBuf>,
    #[arg(long, requires = "id_features")]
    pub head: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Auroc,
    Fpr95,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub val_id: PathBuf,
    #[arg(long)]
    pub val_ood: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    /// Overrides the grid document's objective.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Results table (CSV); defaults to the --out path with a .csv extension.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub sample_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Unpruned head.
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub sens: PathBuf,
    /// Pruned head (or mask document) whose weight mask is analysed.
    #[arg(long)]
    pub mask_from_prune: PathBuf,
    #[arg(long)]
    pub id: PathBuf,
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Perturbation radius of the flatness proxy.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OodArg {
    Shifted,
    Box,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "shifted")]
    pub ood: OodArg,
    /// Center offset for shifted OOD, or box half-width for box OOD.
    #[arg(long)]
    pub ood_scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    /// ID test features.
    #[arg(long)]
    pub id: PathBuf,
    /// OOD test features.
    #[arg(long)]
    pub ood: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub rho_min_w: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho_max_w: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho_min_o: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho_max_o: f64,
    #[arg(long, default_value = "mean")]
    pub neuron_stat: String,
    #[arg(long, default_value_t = 1.0)]
    pub sample_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub react_percentile: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(OpnpError),
}

impl From<OpnpError> for Failure {
    fn from(err: OpnpError) -> Self {
        match err {
            OpnpError::BandEmpty { .. } => Failure::Usage(err.to_string()),
            other => Failure::Data(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn check_percent(flag: &str, v: f64) -> CmdResult {
    if !(0.0..=100.0).contains(&v) {
        return Err(usage(format!(
            "{flag} must be a percentage in [0, 100], got {v}"
        )));
    }
    Ok(())
}

fn check_ratio(v: f64) -> CmdResult {
    if !(v > 0.0 && v <= 1.0) {
        return Err(usage(format!("--sample-ratio must be in (0, 1], got {v}")));
    }
    Ok(())
}

fn parse_stat(s: &str) -> std::result::Result<NeuronStatistic, Failure> {
    s.parse().map_err(|e: OpnpError| usage(e.to_string()))
}

fn prune_config(
    min_w: f64,
    max_w: f64,
    min_o: f64,
    max_o: f64,
    stat: &str,
) -> std::result::Result<PruneConfig, Failure> {
    check_percent("--rho-min-w", min_w)?;
    check_percent("--rho-max-w", max_w)?;
    check_percent("--rho-min-o", min_o)?;
    check_percent("--rho-max-o", max_o)?;
    let config = PruneConfig {
        rho_min_w: min_w,
        rho_max_w: max_w,
        rho_min_o: min_o,
        rho_max_o: max_o,
        neuron_statistic: parse_stat(stat)?,
        seed: 0,
    };
    config.check()?;
    Ok(config)
}

fn with_react(
    head: ClassifierHead,
    percentile: Option<f64>,
    features: Option<&Path>,
) -> std::result::Result<ClassifierHead, Failure> {
    let Some(p) = percentile else {
        return Ok(head);
    };
    if !(p > 0.0 && p <= 100.0) {
        return Err(usage(format!(
            "--react-percentile must be in (0, 100], got {p}"
        )));
    }
    let path = features.ok_or_else(|| usage("--react-percentile needs training --features"))?;
    let train = io::read_features(path)?;
    validate(&head, &train)?;
    let clip = react_threshold(&train, p)?;
    eprintln!("activation clip at {p}th percentile: {clip}");
    Ok(head.with_activation_clip(Some(clip))?)
}

fn cmd_estimate(args: &EstimateArgs) -> CmdResult {
    check_ratio(args.sample_ratio)?;
    let head = io::read_head(&args.head)?;
    let features = io::read_features(&args.features)?;
    validate(&head, &features)?;
    let map = estimate_sensitivity(&head.unpruned(), &features, args.sample_ratio, args.seed)?;
    let neurons = all_neuron_sensitivities(&map)?;
    io::write_sensitivity(&args.out, &map, &neurons)?;
    eprintln!(
        "estimated {}x{} sensitivities from {} of {} rows",
        map.rows(),
        map.cols(),
        map.sample_count(),
        features.rows()
    );
    Ok(())
}

fn cmd_prune(args: &PruneArgs) -> CmdResult {
    let head = io::read_head(&args.head)?;
    let sensitivity_flags = args.sens.is_some()
        || args.rho_min_w.is_some()
        || args.rho_max_w.is_some()
        || args.rho_min_o.is_some()
        || args.rho_max_o.is_some();

    let outcome = if let Some(kind) = args.baseline {
        if sensitivity_flags {
            return Err(usage(
                "--baseline cannot be combined with --sens or --rho-min-*/--rho-max-*",
            ));
        }
        let rho = args.rho.ok_or_else(|| usage("--baseline needs --rho"))?;
        if !(0.0..100.0).contains(&rho) {
            return Err(usage(format!("--rho must be in [0, 100), got {rho}")));
        }
        let kind = BaselineKind::from(kind);
        let train = match (&args.features, kind) {
            (Some(p), _) => Some(io::read_features(p)?),
            (None, BaselineKind::Tnp) => return Err(usage("TNP needs training --features")),
            (None, _) => None,
        };
        baseline_prune(&head, train.as_ref(), kind, rho, args.seed)?
    } else {
        if args.rho.is_some() {
            return Err(usage("--rho is only used with --baseline"));
        }
        let config = prune_config(
            args.rho_min_w.unwrap_or(0.0),
            args.rho_max_w.unwrap_or(0.0),
            args.rho_min_o.unwrap_or(0.0),
            args.rho_max_o.unwrap_or(0.0),
            &args.neuron_stat,
        )?;
        let sens = args
            .sens
            .as_ref()
            .ok_or_else(|| usage("--sens is required unless --baseline is given"))?;
        let (map, _) = io::read_sensitivity(sens)?;
        map.check_shape(&head)?;
        let neurons = neuron_sensitivity(&map, config.neuron_statistic)?;
        let outcome = prune(&head, &map, &neurons, &config)?;
        let n_w = head.features() * head.classes();
        let expected_w = prune_count(config.rho_min_w, n_w) + prune_count(config.rho_max_w, n_w);
        let expected_o = prune_count(config.rho_min_o, head.features())
            + prune_count(config.rho_max_o, head.features());
        if outcome.pruned_weights != expected_w || outcome.pruned_neurons != expected_o {
            panic!("pruned counts disagree with the percentage rule");
        }
        outcome
    };

    let pruned = outcome.apply(&head)?;
    let pruned = with_react(pruned, args.react_percentile, args.features.as_deref())?;
    io::write_head(&args.out, &pruned)?;
    if let Some(path) = &args.outcome {
        io::write_prune_outcome(path, &outcome)?;
    }
    let t = &outcome.thresholds;
    eprintln!(
        "pruned {} of {} weights and {} of {} neurons",
        outcome.pruned_weights,
        head.features() * head.classes(),
        outcome.pruned_neurons,
        head.features()
    );
    eprintln!(
        "thresholds: weight [{}, {}] neuron [{}, {}]",
        t.weight_min, t.weight_max, t.neuron_min, t.neuron_max
    );
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> CmdResult {
    if !(args.temperature > 0.0 && args.temperature.is_finite()) {
        return Err(usage(format!(
            "--temperature must be positive, got {}",
            args.temperature
        )));
    }
    let head = io::read_head(&args.head)?;
    let features = io::read_features(&args.features)?;
    validate(&head, &features)?;
    let scores = score_batch(&head, &features, args.score.into(), args.temperature)?;
    io::write_scores(&args.out, &scores)?;
    eprintln!("scored {} rows ({})", scores.len(), scores.kind());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    if args.bins == 0 || args.ece_bins == 0 {
        return Err(usage("--bins and --ece-bins must be at least 1"));
    }
    if !(args.tpr > 0.0 && args.tpr <= 1.0) {
        return Err(usage(format!("--tpr must be in (0, 1], got {}", args.tpr)));
    }
    let id = io::read_scores(&args.id)?;
    let ood = io::read_scores(&args.ood)?;
    let calibration = match (&args.id_features, &args.head) {
        (Some(fp), Some(hp)) => {
            let head = io::read_head(hp)?;
            let features = io::read_features(fp)?;
            validate(&head, &features)?;
            let labels = features
                .labels()
                .ok_or(OpnpError::EmptyInput("--id-features has no labels"))?
                .to_vec();
            let preds = predict_batch(&head, &features, 1.0)?;
            let conf: Vec<f64> = preds.iter().map(|p| p.1).collect();
            let correct: Vec<bool> = preds
                .iter()
                .zip(&labels)
                .map(|(p, &l)| p.0 == l as usize)
                .collect();
            Some((conf, correct))
        }
        _ => None,
    };
    let report = evaluate_scores(
        id.scores(),
        ood.scores(),
        calibration
            .as_ref()
            .map(|(c, k)| (c.as_slice(), k.as_slice())),
        ReportOptions {
            histogram_bins: args.bins,
            ece_bins: args.ece_bins,
            tpr: args.tpr,
        },
    )?;
    io::write_report(&args.out, &report)?;
    eprintln!(
        "FPR@{:.0}TPR {:.4}  AUROC {:.4}",
        args.tpr * 100.0,
        report.fpr95,
        report.auroc
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    objective: Objective,
    best: PruneConfig,
    best_report: &'a EvalReport,
    baseline_report: &'a EvalReport,
    evaluated: usize,
    skipped: &'a [crate::sweep::SkippedConfig],
    table: PathBuf,
}

fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    check_ratio(args.sample_ratio)?;
    let mut grid = io::read_grid(&args.grid)?;
    if let Some(obj) = args.objective {
        grid.objective = match obj {
            ObjectiveArg::Auroc => Objective::Auroc,
            ObjectiveArg::Fpr95 => Objective::Fpr95,
        };
    }
    let head = io::read_head(&args.head)?.unpruned();
    let train = io::read_features(&args.train)?;
    let val_id = io::read_features(&args.val_id)?;
    let val_ood = io::read_features(&args.val_ood)?;
    for fs in [&train, &val_id, &val_ood] {
        validate(&head, fs)?;
    }
    let map = estimate_sensitivity(&head, &train, args.sample_ratio, args.seed)?;
    let neurons = neuron_sensitivity(&map, grid.neuron_statistic)?;
    eprintln!("evaluating {} configurations", grid.size());
    let result = grid_search(&head, &map, &neurons, &grid, &val_id, &val_ood)?;
    for s in &result.skipped {
        eprintln!("skipped {:?}: {}", s.config.rho_tuple(), s.reason);
    }
    let table = args
        .table
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    io::write_sweep_table(&table, &result.table)?;
    let baseline = evaluate_head(&head, &val_id, &val_ood)?;
    io::write_document(
        &args.out,
        &SweepDocument {
            objective: grid.objective,
            best: result.best,
            best_report: &result.best_report,
            baseline_report: &baseline,
            evaluated: result.table.len(),
            skipped: &result.skipped,
            table,
        },
    )?;
    eprintln!(
        "best {:?}: AUROC {:.4} FPR95 {:.4} (baseline AUROC {:.4} FPR95 {:.4})",
        result.best.rho_tuple(),
        result.best_report.auroc,
        result.best_report.fpr95,
        baseline.auroc,
        baseline.fpr95
    );
    Ok(())
}

#[derive(Serialize)]
struct LogitReductionDoc {
    mean_id: Vec<f64>,
    mean_ood: Vec<f64>,
}

#[derive(Serialize)]
struct DiagnosticsDocument {
    pruned_weights: usize,
    logit_reduction: LogitReductionDoc,
    sensitivity_gap: Option<SensitivityGap>,
    flatness_before: FlatnessReport,
    flatness_after: FlatnessReport,
    histogram_unpruned: Histogram,
    histogram_pruned: Histogram,
}

fn read_mask(path: &Path) -> std::result::Result<(Vec<bool>, Vec<bool>), Failure> {
    match io::read_head(path) {
        Ok(h) => Ok((h.weight_mask().to_vec(), h.neuron_mask().to_vec())),
        Err(OpnpError::SchemaError { .. }) => {
            let outcome = io::read_prune_outcome(path)?;
            Ok((outcome.weight_mask, outcome.neuron_mask))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_diagnose(args: &DiagnoseArgs) -> CmdResult {
    if !(args.radius > 0.0 && args.radius.is_finite()) {
        return Err(usage(format!(
            "--radius must be positive, got {}",
            args.radius
        )));
    }
    if args.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let head = io::read_head(&args.head)?.unpruned();
    let (map, _) = io::read_sensitivity(&args.sens)?;
    map.check_shape(&head)?;
    let (weight_mask, neuron_mask) = read_mask(&args.mask_from_prune)?;
    let pruned_head = head.clone().with_masks(weight_mask.clone(), neuron_mask)?;
    let id = io::read_features(&args.id)?;
    let ood = io::read_features(&args.ood)?;
    validate(&head, &id)?;
    validate(&head, &ood)?;

    let gap = match sensitivity_gap(&head, &weight_mask, &id, &ood) {
        Ok(g) => Some(g),
        Err(OpnpError::EmptyMask) => None,
        Err(e) => return Err(e.into()),
    };
    let energy = |h: &ClassifierHead| -> std::result::Result<Histogram, Failure> {
        let a = score_batch(h, &id, ScoreKind::Energy, 1.0)?;
        let b = score_batch(h, &ood, ScoreKind::Energy, 1.0)?;
        Ok(joint_histogram(a.scores(), b.scores(), args.bins)?)
    };
    let doc = DiagnosticsDocument {
        pruned_weights: weight_mask.iter().filter(|&&m| !m).count(),
        logit_reduction: LogitReductionDoc {
            mean_id: mean_logit_reduction(&head, &map, &weight_mask, &id)?,
            mean_ood: mean_logit_reduction(&head, &map, &weight_mask, &ood)?,
        },
        sensitivity_gap: gap,
        flatness_before: flatness_proxy_masked(&map, None, args.radius)?,
        flatness_after: flatness_proxy_masked(&map, Some(&weight_mask), args.radius)?,
        histogram_unpruned: energy(&head)?,
        histogram_pruned: energy(&pruned_head)?,
    };
    io::write_document(&args.out, &doc)?;
    match gap {
        Some(g) => eprintln!(
            "sensitivity on pruned weights: ID {:.3e} OOD {:.3e} gap {:+.3e}",
            g.mean_id, g.mean_ood, g.gap
        ),
        None => eprintln!("mask prunes no weights; sensitivity gap not defined"),
    }
    Ok(())
}

#[derive(Serialize)]
struct ToyManifest {
    config: ToyConfig,
    id_test_accuracy: f64,
    files: Vec<String>,
}

fn cmd_toy(args: &ToyArgs) -> CmdResult {
    let defaults = ToyConfig::default();
    let ood = match args.ood {
        OodArg::Shifted => OodKind::ShiftedCenters {
            shift: args.ood_scale.unwrap_or(match defaults.ood {
                OodKind::ShiftedCenters { shift } => shift,
                OodKind::UniformBox { .. } => 1.0,
            }),
        },
        OodArg::Box => OodKind::UniformBox {
            half_width: args.ood_scale.unwrap_or(1.0),
        },
    };
    let config = ToyConfig {
        classes: args.classes,
        dim: args.dim,
        hidden: args.hidden,
        n_train: args.n_train,
        n_test: args.n_test,
        sigma: args.sigma.unwrap_or(defaults.sigma),
        ood,
        epochs: args.epochs.unwrap_or(defaults.epochs),
        learning_rate: args.lr.unwrap_or(defaults.learning_rate),
        batch_size: defaults.batch_size,
        seed: args.seed,
    };
    if config.n_train == 0 || config.n_test == 0 || config.hidden == 0 {
        return Err(usage("--n-train, --n-test and --hidden must be positive"));
    }
    let bench = build_benchmark(&config)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| OpnpError::Io {
        path: args.out_dir.clone(),
        source: e,
    })?;
    let mut files = Vec::new();
    for (name, fs) in [
        ("train.opnf", &bench.train),
        ("val-id.opnf", &bench.val_id),
        ("val-ood.opnf", &bench.val_ood),
        ("test-id.opnf", &bench.test_id),
        ("test-ood.opnf", &bench.test_ood),
    ] {
        io::write_features(io::in_dir(&args.out_dir, name), fs)?;
        files.push(name.to_string());
    }
    io::write_head(io::in_dir(&args.out_dir, "head.json"), &bench.head)?;
    files.push("head.json".into());
    let acc = accuracy(&bench.head, &bench.test_id)?;
    io::write_document(
        io::in_dir(&args.out_dir, "toy.json"),
        &ToyManifest {
            config,
            id_test_accuracy: acc,
            files,
        },
    )?;
    eprintln!(
        "toy benchmark written to {} (ID test accuracy {:.3})",
        args.out_dir.display(),
        acc
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> CmdResult {
    check_ratio(args.sample_ratio)?;
    let config = prune_config(
        args.rho_min_w,
        args.rho_max_w,
        args.rho_min_o,
        args.rho_max_o,
        &args.neuron_stat,
    )?;
    let head = io::read_head(&args.head)?.unpruned();
    let train = io::read_features(&args.train)?;
    let id = io::read_features(&args.id)?;
    let ood = io::read_features(&args.ood)?;
    for fs in [&train, &id, &ood] {
        validate(&head, fs)?;
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| OpnpError::Io {
        path: args.out_dir.clone(),
        source: e,
    })?;
    let map = estimate_sensitivity(&head, &train, args.sample_ratio, args.seed)?;
    let all = all_neuron_sensitivities(&map)?;
    io::write_sensitivity(io::in_dir(&args.out_dir, "sensitivity.json"), &map, &all)?;
    let neurons = neuron_sensitivity(&map, config.neuron_statistic)?;
    let outcome = prune(&head, &map, &neurons, &config)?;
    let pruned = outcome.apply(&head)?;
    let pruned = with_react(pruned, args.react_percentile, Some(&args.train))?;
    io::write_head(io::in_dir(&args.out_dir, "pruned-head.json"), &pruned)?;
    let id_scores = score_batch(&pruned, &id, ScoreKind::Energy, 1.0)?;
    let ood_scores = score_batch(&pruned, &ood, ScoreKind::Energy, 1.0)?;
    io::write_scores(io::in_dir(&args.out_dir, "id-scores.csv"), &id_scores)?;
    io::write_scores(io::in_dir(&args.out_dir, "ood-scores.csv"), &ood_scores)?;
    let report = evaluate_head(&pruned, &id, &ood)?;
    io::write_report(io::in_dir(&args.out_dir, "report.json"), &report)?;
    eprintln!(
        "pruned {} weights, {} neurons; FPR95 {:.4} AUROC {:.4}",
        outcome.pruned_weights, outcome.pruned_neurons, report.fpr95, report.auroc
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Toy(a) => cmd_toy(a),
        Command::RunOpnp(a) => cmd_run(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
        }
    };
    match panic::catch_unwind(AssertUnwindSafe(|| dispatch(&cli))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Ok(Err(Failure::Data(err))) => {
            eprintln!("error: {err}");
            EXIT_DATA
        }
        Err(_) => {
            eprintln!("error: internal invariant failure");
            EXIT_INTERNAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["opnp", "score", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["opnp"]), EXIT_USAGE);
    }

    #[test]
    fn band_empty_maps_to_usage() {
        assert!(matches!(
            prune_config(60.0, 40.0, 0.0, 0.0, "mean"),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(
            prune_config(1.0, 1.0, 0.0, 0.0, "mode"),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(
            prune_config(101.0, 0.0, 0.0, 0.0, "mean"),
            Err(Failure::Usage(_))
        ));
    }
}
