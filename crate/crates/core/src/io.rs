//! File formats.
//!
//! Features use a small binary layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"OPNF"`                         |
//! | 4      | 4    | version, u32 = 1                        |
//! | 8      | 4    | dtype, u32 = 1 (IEEE-754 binary32)      |
//! | 12     | 8    | rows, u64                               |
//! | 20     | 8    | cols, u64                               |
//! | 28     | 4    | label flag, u32 (0 = none, 1 = labels)  |
//! | 32     | ...  | rows·cols f32, row-major                |
//! |        | ...  | rows u32 labels when the flag is 1      |
//!
//! Everything else is JSON. Reals are written with enough digits to parse
//! back to the same bits. Scores are two-column CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{OpnpError, Result};
use crate::pruning::{PruneOutcome, Thresholds};
use crate::sweep::{SweepGrid, SweepRow};
use crate::types::{
    ClassifierHead, EvalReport, FeatureSet, NeuronSensitivity, NeuronStatistic, ScoreKind,
    ScoreVector, SensitivityMap,
};

pub const FEATURE_MAGIC: [u8; 4] = *b"OPNF";
pub const FEATURE_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const FEATURE_HEADER_LEN: u64 = 32;

fn io_err(path: &Path, source: std::io::Error) -> OpnpError {
    OpnpError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> OpnpError {
    OpnpError::SchemaError {
        path: path.to_path_buf(),
        field: field.into(),
        reason: reason.into(),
    }
}

/// Expected OPNF file size, or `None` on overflow.
pub fn feature_file_size(rows: u64, cols: u64, labels: bool) -> Option<u64> {
    let data = rows.checked_mul(cols)?.checked_mul(4)?;
    let labels = if labels { rows.checked_mul(4)? } else { 0 };
    FEATURE_HEADER_LEN.checked_add(data)?.checked_add(labels)
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(FEATURE_HEADER_LEN as usize);
    header.extend_from_slice(&FEATURE_MAGIC);
    header.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    header.extend_from_slice(&DTYPE_F32.to_le_bytes());
    header.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    header.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    header.extend_from_slice(&(features.labels().is_some() as u32).to_le_bytes());
    let write = |out: &mut BufWriter<fs::File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|e| io_err(path, e))
    };
    write(&mut out, &header)?;
    for v in features.data() {
        write(&mut out, &v.to_le_bytes())?;
    }
    if let Some(labels) = features.labels() {
        for l in labels {
            write(&mut out, &l.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize, field: &'static str) -> Result<&[u8]> {
        let end = self
            .offset
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(slice)
            }
            None => Err(OpnpError::TruncatedFile {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                field,
            }),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Parses an OPNF byte buffer. `path` is only used in error messages.
pub fn parse_features(path: &Path, bytes: &[u8]) -> Result<FeatureSet> {
    let mut cur = Cursor {
        path,
        bytes,
        offset: 0,
    };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(OpnpError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = cur.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(OpnpError::UnsupportedVersion {
            path: path.to_path_buf(),
            field: "version",
            found: version,
        });
    }
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(OpnpError::UnsupportedVersion {
            path: path.to_path_buf(),
            field: "dtype",
            found: dtype,
        });
    }
    let rows = cur.u64("rows")?;
    let cols = cur.u64("cols")?;
    let flag = cur.u32("label_flag")?;
    if flag > 1 {
        return Err(OpnpError::UnsupportedVersion {
            path: path.to_path_buf(),
            field: "label_flag",
            found: flag,
        });
    }
    let actual = bytes.len() as u64;
    let expected =
        feature_file_size(rows, cols, flag == 1).ok_or_else(|| OpnpError::SizeMismatch {
            path: path.to_path_buf(),
            expected: u64::MAX,
            actual,
        })?;
    if actual < expected {
        let field = if actual < FEATURE_HEADER_LEN + rows * cols * 4 {
            "data"
        } else {
            "labels"
        };
        return Err(OpnpError::TruncatedFile {
            path: path.to_path_buf(),
            offset: actual,
            field,
        });
    }
    if actual > expected {
        return Err(OpnpError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if rows == 0 || cols == 0 {
        return Err(schema(
            path,
            if rows == 0 { "rows" } else { "cols" },
            "must be at least 1",
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data: Vec<f32> = cur
        .take(rows * cols * 4, "data")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if flag == 1 {
        Some(
            cur.take(rows * 4, "labels")?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSet::new(rows, cols, data, labels, name)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_features(path, &bytes)
}

/// Serde adapter writing `±∞` as the strings `"inf"` / `"-inf"`.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// Maps a serde failure to a `SchemaError`, pulling the field name out of
/// messages such as "missing field `W`".
fn json_error(path: &Path, err: serde_json::Error) -> OpnpError {
    let msg = err.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| format!("line {} column {}", err.line(), err.column()));
    schema(path, field, msg)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| schema(path, "<document>", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

fn narrow(path: &Path, field: &str, values: &[f64]) -> Result<Vec<f32>> {
    values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let n = v as f32;
            if n.is_finite() {
                Ok(n)
            } else {
                Err(schema(
                    path,
                    format!("{field}[{idx}]"),
                    format!("{v} does not fit in f32"),
                ))
            }
        })
        .collect()
}

fn mask_to_bits(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| m as u8).collect()
}

fn bits_to_mask(path: &Path, field: &str, bits: &[u8]) -> Result<Vec<bool>> {
    bits.iter()
        .enumerate()
        .map(|(idx, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(schema(
                path,
                format!("{field}[{idx}]"),
                format!("{other} is not 0 or 1"),
            )),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct HeadDoc {
    #[serde(rename = "L")]
    features: usize,
    #[serde(rename = "K")]
    classes: usize,
    #[serde(rename = "W")]
    weights: Vec<f64>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neuron_mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation_clip: Option<f64>,
}

/// Head document: `L`, `K`, row-major `W`, `b`, optional 0/1 masks,
/// optional class names and activation clip.
pub fn write_head(path: impl AsRef<Path>, head: &ClassifierHead) -> Result<()> {
    let pruned = head.pruned_weight_count() > 0 || head.pruned_neuron_count() > 0;
    let doc = HeadDoc {
        features: head.features(),
        classes: head.classes(),
        weights: widen(head.weights()),
        b: widen(head.bias()),
        weight_mask: pruned.then(|| mask_to_bits(head.weight_mask())),
        neuron_mask: pruned.then(|| mask_to_bits(head.neuron_mask())),
        class_names: head.class_names().map(<[String]>::to_vec),
        activation_clip: head.activation_clip().map(f64::from),
    };
    write_json(path.as_ref(), &doc)
}

pub fn read_head(path: impl AsRef<Path>) -> Result<ClassifierHead> {
    let path = path.as_ref();
    let doc: HeadDoc = read_json(path)?;
    let weights = narrow(path, "W", &doc.weights)?;
    let bias = narrow(path, "b", &doc.b)?;
    let mut head = ClassifierHead::new(doc.features, doc.classes, weights, bias)?;
    if doc.weight_mask.is_some() || doc.neuron_mask.is_some() {
        let weight_mask = match &doc.weight_mask {
            Some(bits) => bits_to_mask(path, "weight_mask", bits)?,
            None => vec![true; doc.features * doc.classes],
        };
        let neuron_mask = match &doc.neuron_mask {
            Some(bits) => bits_to_mask(path, "neuron_mask", bits)?,
            None => vec![true; doc.features],
        };
        head = head.with_masks(weight_mask, neuron_mask)?;
    }
    head = head.with_class_names(doc.class_names)?;
    head.with_activation_clip(doc.activation_clip.map(|c| c as f32))
}

#[derive(Serialize, Deserialize)]
struct SensitivityDoc {
    #[serde(rename = "L")]
    rows: usize,
    #[serde(rename = "K")]
    cols: usize,
    sample_count: usize,
    source_tag: String,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    neuron_statistics: BTreeMap<NeuronStatistic, Vec<f64>>,
}

/// Writes M, optionally bundling any neuron statistics derived from it.
pub fn write_sensitivity(
    path: impl AsRef<Path>,
    map: &SensitivityMap,
    neurons: &[NeuronSensitivity],
) -> Result<()> {
    let doc = SensitivityDoc {
        rows: map.rows(),
        cols: map.cols(),
        sample_count: map.sample_count(),
        source_tag: map.source_tag().to_string(),
        values: widen(map.values()),
        neuron_statistics: neurons
            .iter()
            .map(|n| (n.statistic(), widen(n.values())))
            .collect(),
    };
    write_json(path.as_ref(), &doc)
}

/// Reads M and any bundled neuron statistics.
pub fn read_sensitivity(
    path: impl AsRef<Path>,
) -> Result<(SensitivityMap, Vec<NeuronSensitivity>)> {
    let path = path.as_ref();
    let doc: SensitivityDoc = read_json(path)?;
    let values = narrow(path, "values", &doc.values)?;
    let map = SensitivityMap::new(doc.rows, doc.cols, values, doc.sample_count, doc.source_tag)?;
    let mut neurons = Vec::new();
    for (stat, values) in &doc.neuron_statistics {
        if values.len() != doc.rows {
            return Err(OpnpError::LengthMismatch {
                what: "neuron_statistics",
                left: values.len(),
                right: doc.rows,
            });
        }
        neurons.push(NeuronSensitivity::new(
            narrow(path, stat.as_str(), values)?,
            *stat,
        )?);
    }
    Ok((map, neurons))
}

#[derive(Serialize, Deserialize)]
struct NeuronDoc {
    statistic: NeuronStatistic,
    values: Vec<f64>,
}

pub fn write_neuron_sensitivity(path: impl AsRef<Path>, neurons: &NeuronSensitivity) -> Result<()> {
    write_json(
        path.as_ref(),
        &NeuronDoc {
            statistic: neurons.statistic(),
            values: widen(neurons.values()),
        },
    )
}

pub fn read_neuron_sensitivity(path: impl AsRef<Path>) -> Result<NeuronSensitivity> {
    let path = path.as_ref();
    let doc: NeuronDoc = read_json(path)?;
    NeuronSensitivity::new(narrow(path, "values", &doc.values)?, doc.statistic)
}

#[derive(Serialize, Deserialize)]
struct PruneDoc {
    #[serde(rename = "L")]
    features: usize,
    #[serde(rename = "K")]
    classes: usize,
    weight_mask: Vec<u8>,
    neuron_mask: Vec<u8>,
    thresholds: Thresholds,
    pruned_weights: usize,
    pruned_neurons: usize,
}

pub fn write_prune_outcome(path: impl AsRef<Path>, outcome: &PruneOutcome) -> Result<()> {
    write_json(
        path.as_ref(),
        &PruneDoc {
            features: outcome.features,
            classes: outcome.classes,
            weight_mask: mask_to_bits(&outcome.weight_mask),
            neuron_mask: mask_to_bits(&outcome.neuron_mask),
            thresholds: outcome.thresholds,
            pruned_weights: outcome.pruned_weights,
            pruned_neurons: outcome.pruned_neurons,
        },
    )
}

pub fn read_prune_outcome(path: impl AsRef<Path>) -> Result<PruneOutcome> {
    let path = path.as_ref();
    let doc: PruneDoc = read_json(path)?;
    if doc.features == 0 || doc.classes == 0 {
        return Err(schema(
            path,
            "L",
            "masks must match a declared L >= 1 and K >= 1",
        ));
    }
    if doc.weight_mask.len() != doc.features * doc.classes {
        return Err(schema(
            path,
            "weight_mask",
            format!(
                "length {} does not match L*K = {}",
                doc.weight_mask.len(),
                doc.features * doc.classes
            ),
        ));
    }
    if doc.neuron_mask.len() != doc.features {
        return Err(schema(
            path,
            "neuron_mask",
            format!(
                "length {} does not match L = {}",
                doc.neuron_mask.len(),
                doc.features
            ),
        ));
    }
    let weight_mask = bits_to_mask(path, "weight_mask", &doc.weight_mask)?;
    let neuron_mask = bits_to_mask(path, "neuron_mask", &doc.neuron_mask)?;
    let pruned_weights = weight_mask.iter().filter(|&&m| !m).count();
    let pruned_neurons = neuron_mask.iter().filter(|&&m| !m).count();
    if pruned_weights != doc.pruned_weights {
        return Err(schema(path, "pruned_weights", "does not match weight_mask"));
    }
    if pruned_neurons != doc.pruned_neurons {
        return Err(schema(path, "pruned_neurons", "does not match neuron_mask"));
    }
    Ok(PruneOutcome {
        features: doc.features,
        classes: doc.classes,
        weight_mask,
        neuron_mask,
        thresholds: doc.thresholds,
        pruned_weights,
        pruned_neurons,
    })
}

pub fn write_grid(path: impl AsRef<Path>, grid: &SweepGrid) -> Result<()> {
    write_json(path.as_ref(), grid)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<SweepGrid> {
    let path = path.as_ref();
    let grid: SweepGrid = read_json(path)?;
    grid.check().map_err(|e| {
        let field = ["rho_min_w", "rho_max_w", "rho_min_o", "rho_max_o"]
            .into_iter()
            .find(|f| e.to_string().contains(f))
            .unwrap_or("<grid>");
        schema(path, field, e.to_string())
    })?;
    Ok(grid)
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    write_json(path.as_ref(), report)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let report: EvalReport = read_json(path)?;
    report
        .check()
        .map_err(|e| schema(path, "<report>", e.to_string()))?;
    Ok(report)
}

/// Any serializable document, pretty-printed.
pub fn write_document<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(path.as_ref(), value)
}

pub fn read_document<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    read_json(path.as_ref())
}

/// Scores as CSV: a `# kind=... temperature=...` line, an `index,score`
/// header, then one row per sample.
pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreVector) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!(
        "# kind={} temperature={}\nindex,score\n",
        scores.kind(),
        scores.temperature()
    );
    for (idx, s) in scores.scores().iter().enumerate() {
        text.push_str(&format!("{idx},{s:?}\n"));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut kind = ScoreKind::Energy;
    let mut temperature = 1.0;
    let mut scores = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for pair in meta.split_whitespace() {
                match pair.split_once('=') {
                    Some(("kind", v)) => {
                        kind = v
                            .parse()
                            .map_err(|_| schema(path, "kind", format!("unknown kind {v}")))?
                    }
                    Some(("temperature", v)) => {
                        temperature = v.parse().map_err(|_| {
                            schema(path, "temperature", format!("not a number: {v}"))
                        })?
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if line != "index,score" {
                return Err(schema(
                    path,
                    "header",
                    format!("expected `index,score`, found `{line}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        let (idx, value) = line
            .split_once(',')
            .ok_or_else(|| schema(path, format!("line {}", lineno + 1), "expected two columns"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| schema(path, format!("line {}", lineno + 1), "bad index"))?;
        if idx != scores.len() {
            return Err(schema(
                path,
                format!("line {}", lineno + 1),
                format!("index {idx} out of sequence, expected {}", scores.len()),
            ));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| schema(path, format!("line {}", lineno + 1), "bad score"))?;
        scores.push(value);
    }
    if scores.is_empty() {
        return Err(schema(path, "score", "no scores"));
    }
    ScoreVector::new(scores, kind, temperature)
}

/// Sweep results table as CSV, best row first.
pub fn write_sweep_table(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(
        "rank,rho_min_w,rho_max_w,rho_min_o,rho_max_o,neuron_statistic,auroc,fpr95,ece,pruned_weights,pruned_neurons\n",
    );
    for (rank, row) in rows.iter().enumerate() {
        let c = &row.config;
        text.push_str(&format!(
            "{},{},{},{},{},{},{:?},{:?},{},{},{}\n",
            rank + 1,
            c.rho_min_w,
            c.rho_max_w,
            c.rho_min_o,
            c.rho_max_o,
            c.neuron_statistic,
            row.auroc,
            row.fpr95,
            row.ece.map(|e| format!("{e:?}")).unwrap_or_default(),
            row.pruned_weights,
            row.pruned_neurons,
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `dir/name`, for commands that emit several files.
pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
