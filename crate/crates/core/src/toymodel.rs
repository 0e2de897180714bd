//! Desk-scale stand-in for a pretrained backbone: Gaussian class clusters,
//! a one-hidden-layer ReLU network trained with softmax cross-entropy, and
//! the finite-difference energy gradient used as an oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::types::{ClassifierHead, FeatureSet};

/// How OOD inputs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodKind {
    /// Near-OOD: clusters around each ID center moved by a random offset of
    /// length `shift` and projected back onto the unit sphere.
    ShiftedCenters { shift: f64 },
    /// Far-OOD: uniform over `[-half_width, half_width]^D`.
    UniformBox { half_width: f64 },
}

impl Default for OodKind {
    fn default() -> Self {
        OodKind::ShiftedCenters { shift: 1.0 }
    }
}

/// Raw (pre-network) inputs, row-major N×D.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSet {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Option<Vec<u32>>,
}

impl RawSet {
    pub fn rows(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.inputs[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Class centers and noise model of a synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub classes: usize,
    pub dim: usize,
    pub sigma: f64,
    pub centers: Vec<Vec<f64>>,
    pub ood: OodKind,
    pub ood_centers: Vec<Vec<f64>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl ToyTask {
    /// Draws unit-norm centers that are pairwise further apart than `4σ`.
    pub fn generate(
        classes: usize,
        dim: usize,
        sigma: f64,
        ood: OodKind,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 || dim < 2 {
            return Err(OpnpError::InvalidSpec(format!(
                "need K >= 2 and D >= 2, got K={classes} D={dim}"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(OpnpError::InvalidSpec(format!(
                "sigma {sigma} must be >= 0"
            )));
        }
        match ood {
            OodKind::ShiftedCenters { shift } if !(shift > 0.0 && shift.is_finite()) => {
                return Err(OpnpError::InvalidSpec(format!(
                    "shift {shift} must be positive"
                )))
            }
            OodKind::UniformBox { half_width } if !(half_width > 0.0 && half_width.is_finite()) => {
                return Err(OpnpError::InvalidSpec(format!(
                    "half width {half_width} must be positive"
                )))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while centers.len() < classes {
            attempts += 1;
            if attempts > 10_000 {
                return Err(OpnpError::InvalidSpec(format!(
                    "cannot place {classes} unit centers in {dim} dims more than 4σ = {} apart",
                    4.0 * sigma
                )));
            }
            let c = random_unit(&mut rng, dim);
            if centers.iter().all(|o| distance(o, &c) > 4.0 * sigma) {
                centers.push(c);
            }
        }
        let ood_centers = match ood {
            OodKind::ShiftedCenters { shift } => centers
                .iter()
                .map(|c| {
                    let dir = random_unit(&mut rng, dim);
                    let moved: Vec<f64> = c.iter().zip(&dir).map(|(x, d)| x + shift * d).collect();
                    // Back onto the unit sphere so OOD inputs have ID-like norms.
                    let norm = moved.iter().map(|v| v * v).sum::<f64>().sqrt();
                    moved.into_iter().map(|v| v / norm).collect()
                })
                .collect(),
            OodKind::UniformBox { .. } => Vec::new(),
        };
        Ok(Self {
            classes,
            dim,
            sigma,
            centers,
            ood,
            ood_centers,
        })
    }

    /// `n_per_class` labelled points per class, interleaved by class.
    pub fn sample_id(&self, n_per_class: usize, rng: &mut ChaCha8Rng) -> RawSet {
        let mut inputs = Vec::with_capacity(n_per_class * self.classes * self.dim);
        let mut labels = Vec::with_capacity(n_per_class * self.classes);
        for _ in 0..n_per_class {
            for (label, c) in self.centers.iter().enumerate() {
                for &x in c {
                    let z: f64 = StandardNormal.sample(rng);
                    inputs.push(x + self.sigma * z);
                }
                labels.push(label as u32);
            }
        }
        RawSet {
            dim: self.dim,
            inputs,
            labels: Some(labels),
        }
    }

    pub fn sample_ood(&self, n: usize, rng: &mut ChaCha8Rng) -> RawSet {
        let mut inputs = Vec::with_capacity(n * self.dim);
        for idx in 0..n {
            match self.ood {
                OodKind::ShiftedCenters { .. } => {
                    let c = &self.ood_centers[idx % self.ood_centers.len()];
                    for &x in c {
                        let z: f64 = StandardNormal.sample(rng);
                        inputs.push(x + self.sigma * z);
                    }
                }
                OodKind::UniformBox { half_width } => {
                    for _ in 0..self.dim {
                        inputs.push(rng.gen_range(-half_width..=half_width));
                    }
                }
            }
        }
        RawSet {
            dim: self.dim,
            inputs,
            labels: None,
        }
    }

    /// Label of the closest center for every row.
    pub fn nearest_center(&self, set: &RawSet) -> Vec<u32> {
        (0..set.rows())
            .map(|r| {
                let x = set.row(r);
                let mut best = (0, f64::INFINITY);
                for (k, c) in self.centers.iter().enumerate() {
                    let d = distance(x, c);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best.0 as u32
            })
            .collect()
    }
}

/// All splits of one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySplits {
    pub train: RawSet,
    pub val_id: RawSet,
    pub val_ood: RawSet,
    pub test_id: RawSet,
    pub test_ood: RawSet,
}

/// Draws train (`n_per_class` per class) plus validation and test ID/OOD
/// splits of `n_eval` rows each (rounded up to a multiple of K for ID).
pub fn generate_splits(task: &ToyTask, n_per_class: usize, n_eval: usize, seed: u64) -> ToySplits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    let eval_per_class = n_eval.div_ceil(task.classes);
    ToySplits {
        train: task.sample_id(n_per_class, &mut rng),
        val_id: task.sample_id(eval_per_class, &mut rng),
        val_ood: task.sample_ood(n_eval, &mut rng),
        test_id: task.sample_id(eval_per_class, &mut rng),
        test_ood: task.sample_ood(n_eval, &mut rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Input → ReLU hidden layer → affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetwork {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// D×H row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// H×K row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Mean training loss before training and after each epoch.
    pub loss_history: Vec<f64>,
}

impl ToyNetwork {
    fn init(dim: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let he1 = (2.0 / dim as f64).sqrt();
        let he2 = (2.0 / hidden as f64).sqrt();
        let mut normal = |scale: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    scale * z
                })
                .collect()
        };
        let w1 = normal(he1, dim * hidden);
        let w2 = normal(he2, hidden * classes);
        Self {
            dim,
            hidden,
            classes,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
            loss_history: Vec::new(),
        }
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b1);
        for (d, &xv) in x.iter().enumerate() {
            let row = &self.w1[d * self.hidden..(d + 1) * self.hidden];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xv;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b2);
        for (i, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let row = &self.w2[i * self.classes..(i + 1) * self.classes];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * hv;
            }
        }
    }

    fn loss(&self, x: &[f64], label: usize, h: &mut [f64], f: &mut [f64]) -> f64 {
        self.hidden_activations(x, h);
        self.logits(h, f);
        let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - f[label]
    }

    pub fn mean_loss(&self, set: &RawSet) -> f64 {
        let labels = set.labels.as_ref().expect("labelled set");
        let mut h = vec![0.0; self.hidden];
        let mut f = vec![0.0; self.classes];
        let total: f64 = (0..set.rows())
            .map(|r| self.loss(set.row(r), labels[r] as usize, &mut h, &mut f))
            .sum();
        total / set.rows() as f64
    }

    /// The trained output layer as a toolkit head (f32, all-true masks).
    pub fn head(&self) -> ClassifierHead {
        ClassifierHead::new(
            self.hidden,
            self.classes,
            self.w2.iter().map(|&w| w as f32).collect(),
            self.b2.iter().map(|&b| b as f32).collect(),
        )
        .expect("trained weights are finite")
    }

    /// Penultimate (post-ReLU) activations for every row.
    pub fn extract_features(&self, set: &RawSet, name: &str) -> Result<FeatureSet> {
        if set.dim != self.dim {
            return Err(OpnpError::DimensionMismatch {
                expected: self.dim,
                found: set.dim,
            });
        }
        let mut h = vec![0.0; self.hidden];
        let mut data = Vec::with_capacity(set.rows() * self.hidden);
        for r in 0..set.rows() {
            self.hidden_activations(set.row(r), &mut h);
            data.extend(h.iter().map(|&v| v as f32));
        }
        FeatureSet::new(set.rows(), self.hidden, data, set.labels.clone(), name)
    }
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic given the seed.
pub fn train_toy(train: &RawSet, classes: usize, config: &TrainConfig) -> Result<ToyNetwork> {
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| OpnpError::InvalidSpec("training set needs labels".into()))?;
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(OpnpError::InvalidSpec(
            "hidden width and batch size must be positive".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(OpnpError::InvalidSpec(format!(
            "label {bad} >= K = {classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = ToyNetwork::init(train.dim, config.hidden, classes, &mut rng);
    net.loss_history.push(net.mean_loss(train));

    let (d, hd, k) = (train.dim, config.hidden, classes);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut h = vec![0.0; hd];
    let mut f = vec![0.0; k];
    let mut dh = vec![0.0; hd];
    let mut gw1 = vec![0.0; d * hd];
    let mut gb1 = vec![0.0; hd];
    let mut gw2 = vec![0.0; hd * k];
    let mut gb2 = vec![0.0; k];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            gw1.fill(0.0);
            gb1.fill(0.0);
            gw2.fill(0.0);
            gb2.fill(0.0);
            for &r in batch {
                let x = train.row(r);
                net.hidden_activations(x, &mut h);
                net.logits(&h, &mut f);
                let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = f.iter().map(|v| (v - max).exp()).sum();
                // f becomes dL/df = softmax - onehot.
                for v in f.iter_mut() {
                    *v = (*v - max).exp() / z;
                }
                f[labels[r] as usize] -= 1.0;
                for (g, &df) in gb2.iter_mut().zip(&f) {
                    *g += df;
                }
                for i in 0..hd {
                    let mut acc = 0.0;
                    for j in 0..k {
                        gw2[i * k + j] += h[i] * f[j];
                        acc += net.w2[i * k + j] * f[j];
                    }
                    dh[i] = if h[i] > 0.0 { acc } else { 0.0 };
                }
                for (g, &v) in gb1.iter_mut().zip(&dh) {
                    *g += v;
                }
                for (di, &xv) in x.iter().enumerate() {
                    let row = &mut gw1[di * hd..(di + 1) * hd];
                    for (g, &v) in row.iter_mut().zip(&dh) {
                        *g += xv * v;
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for (w, g) in net.w1.iter_mut().zip(&gw1) {
                *w -= step * g;
            }
            for (w, g) in net.b1.iter_mut().zip(&gb1) {
                *w -= step * g;
            }
            for (w, g) in net.w2.iter_mut().zip(&gw2) {
                *w -= step * g;
            }
            for (w, g) in net.b2.iter_mut().zip(&gb2) {
                *w -= step * g;
            }
        }
        let loss = net.mean_loss(train);
        if !loss.is_finite() {
            return Err(OpnpError::DivergedTraining { epoch });
        }
        net.loss_history.push(loss);
    }
    Ok(net)
}

/// Energy `E = -log Σ_j exp(f_j)` evaluated directly in f64 with explicit
/// per-entry weights. Kept separate from the scoring module on purpose.
fn energy_with(weights: &[f64], bias: &[f32], feature: &[f64], classes: usize) -> f64 {
    let mut logits = Vec::with_capacity(classes);
    for j in 0..classes {
        let mut f = bias[j] as f64;
        for (i, &h) in feature.iter().enumerate() {
            f += weights[i * classes + j] * h;
        }
        logits.push(f);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -(max + logits.iter().map(|f| (f - max).exp()).sum::<f64>().ln())
}

/// Central differences `(E(W_ij + δ) - E(W_ij - δ)) / 2δ` for every weight.
/// Masked weights stay at zero, so their derivative is zero.
pub fn finite_diff_gradient(
    head: &ClassifierHead,
    feature: &[f32],
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(OpnpError::invalid(
            "delta",
            format!("{delta} must be positive"),
        ));
    }
    let (l, k) = (head.features(), head.classes());
    if feature.len() != l {
        return Err(OpnpError::DimensionMismatch {
            expected: l,
            found: feature.len(),
        });
    }
    let h: Vec<f64> = feature
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = head.activation_clip().map_or(v, |c| v.min(c));
            if head.neuron_mask()[i] {
                v as f64
            } else {
                0.0
            }
        })
        .collect();
    let mut weights: Vec<f64> = (0..l * k)
        .map(|idx| {
            if head.weight_mask()[idx] {
                head.weights()[idx] as f64
            } else {
                0.0
            }
        })
        .collect();
    let mut grad = vec![0.0; l * k];
    for idx in 0..l * k {
        if !head.is_active(idx / k, idx % k) {
            continue;
        }
        let original = weights[idx];
        weights[idx] = original + delta;
        let up = energy_with(&weights, head.bias(), &h, k);
        weights[idx] = original - delta;
        let down = energy_with(&weights, head.bias(), &h, k);
        weights[idx] = original;
        grad[idx] = (up - down) / (2.0 * delta);
    }
    Ok(grad)
}

/// End-to-end toy settings (the defaults of the `toy` command).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub classes: usize,
    pub dim: usize,
    pub hidden: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub ood: OodKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 32,
            hidden: 64,
            n_train: 4000,
            n_test: 1000,
            sigma: 0.25,
            ood: OodKind::default(),
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Features and head of one trained toy experiment.
#[derive(Debug, Clone)]
pub struct ToyBenchmark {
    pub task: ToyTask,
    pub network: ToyNetwork,
    pub head: ClassifierHead,
    pub train: FeatureSet,
    pub val_id: FeatureSet,
    pub val_ood: FeatureSet,
    pub test_id: FeatureSet,
    pub test_ood: FeatureSet,
}

/// Generates the task, trains the network, and extracts every split.
pub fn build_benchmark(config: &ToyConfig) -> Result<ToyBenchmark> {
    let task = ToyTask::generate(
        config.classes,
        config.dim,
        config.sigma,
        config.ood,
        config.seed,
    )?;
    let n_per_class = config.n_train.div_ceil(config.classes);
    let splits = generate_splits(&task, n_per_class, config.n_test, config.seed);
    let network = train_toy(
        &splits.train,
        config.classes,
        &TrainConfig {
            hidden: config.hidden,
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            seed: config.seed.wrapping_add(1),
        },
    )?;
    Ok(ToyBenchmark {
        head: network.head(),
        train: network.extract_features(&splits.train, "train-id")?,
        val_id: network.extract_features(&splits.val_id, "val-id")?,
        val_ood: network.extract_features(&splits.val_ood, "val-ood")?,
        test_id: network.extract_features(&splits.test_id, "test-id")?,
        test_ood: network.extract_features(&splits.test_ood, "test-ood")?,
        task,
        network,
    })
}
