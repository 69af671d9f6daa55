//! CSV time-series ingestion, per-feature normalization, fixed-length
//! windowing and seeded window-level splitting.
//!
//! Split granularity is the window. With overlapping windows, a test window
//! can share time steps with a training window.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::RngSeed;
use crate::training::{DataSpec, Sequence, Targets};

/// What to do with an empty (or `NA`, `NaN`, `?`) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    Zero,
    /// Repeat the previous row's value of that column within the same
    /// sequence; falls back to zero on a sequence's first row.
    ForwardFill,
    Error,
}

impl FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "zero" | "zero-fill" => Ok(MissingPolicy::Zero),
            "forward-fill" | "ffill" => Ok(MissingPolicy::ForwardFill),
            "error" => Ok(MissingPolicy::Error),
            other => Err(Error::Parameter(format!("unknown missing-value policy {other:?}"))),
        }
    }
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Zero => "zero",
            MissingPolicy::ForwardFill => "forward-fill",
            MissingPolicy::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetData {
    Values(Vec<Vec<f64>>),
    /// Class labels (single target column of non-negative integers).
    Labels(Vec<usize>),
}

impl TargetData {
    pub fn len(&self) -> usize {
        match self {
            TargetData::Values(v) => v.len(),
            TargetData::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// `time x features`.
    pub features: Vec<Vec<f64>>,
    pub targets: TargetData,
    /// Contiguous row ranges belonging to one sequence; a single range when
    /// no sequence column is given.
    pub segments: Vec<Range<usize>>,
    /// Missing cells that were filled.
    pub filled_cells: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            TargetData::Labels(l) => Some(l.iter().copied().max().map_or(0, |m| m + 1)),
            TargetData::Values(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// Column whose value changes mark sequence boundaries.
    pub sequence_column: Option<String>,
    /// Parse the (single) target column as class labels.
    pub labels: bool,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "?")
}

/// Reads a comma-separated file with a header row. Row numbers in errors
/// count data rows from 1 (the header is not counted).
pub fn load_csv(
    path: &Path,
    features: &[String],
    targets: &[String],
    policy: MissingPolicy,
    options: &LoadOptions,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, features, targets, policy, options)
}

/// As [`load_csv`], from any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    features: &[String],
    targets: &[String],
    policy: MissingPolicy,
    options: &LoadOptions,
) -> Result<Dataset> {
    if features.is_empty() || targets.is_empty() {
        return Err(Error::Schema("at least one feature and one target column are required".into()));
    }
    if options.labels && targets.len() != 1 {
        return Err(Error::Schema("class labels need exactly one target column".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let locate = |name: &String| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("unknown column {name:?}")))
    };
    let f_idx = features.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let t_idx = targets.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let seq_idx = options.sequence_column.as_ref().map(locate).transpose()?;

    let all_idx: Vec<usize> = f_idx.iter().chain(&t_idx).copied().collect();
    let mut previous: Vec<Option<f64>> = vec![None; all_idx.len()];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut segments = Vec::new();
    let mut seg_start = 0;
    let mut last_id: Option<String> = None;
    let mut filled = 0;

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        if let Some(si) = seq_idx {
            let id = record.get(si).unwrap_or("").to_string();
            if last_id.as_ref().is_some_and(|l| *l != id) {
                segments.push(seg_start..r);
                seg_start = r;
                previous.iter_mut().for_each(|p| *p = None);
            }
            last_id = Some(id);
        }
        let mut values = Vec::with_capacity(all_idx.len());
        for (j, &c) in all_idx.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            let column = header.get(c).unwrap_or("").to_string();
            let v = if is_missing(cell) {
                filled += 1;
                match policy {
                    MissingPolicy::Zero => 0.0,
                    MissingPolicy::ForwardFill => previous[j].unwrap_or(0.0),
                    MissingPolicy::Error => {
                        return Err(Error::Parse { row: row_no, column, message: "missing value".into() })
                    }
                }
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    row: row_no,
                    column,
                    message: format!("cannot parse {cell:?} as a number"),
                })?
            };
            previous[j] = Some(v);
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Input("CSV file has no data rows".into()));
    }
    segments.push(seg_start..rows.len());

    let nf = features.len();
    let feats: Vec<Vec<f64>> = rows.iter().map(|r| r[..nf].to_vec()).collect();
    let targets_data = if options.labels {
        let labels = rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let v = row[nf];
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Parse {
                        row: r + 1,
                        column: targets[0].clone(),
                        message: format!("class label must be a non-negative integer, got {v}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        TargetData::Labels(labels)
    } else {
        TargetData::Values(rows.iter().map(|r| r[nf..].to_vec()).collect())
    };
    Ok(Dataset {
        feature_names: features.to_vec(),
        target_names: targets.to_vec(),
        features: feats,
        targets: targets_data,
        segments,
        filled_cells: filled,
    })
}

/// Per-column mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero spread; their std was replaced by 1.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::Input("cannot fit statistics on no rows".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut constant = vec![false; d];
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    constant[j] = true;
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std, constant })
    }

    pub fn has_constant_columns(&self) -> bool {
        self.constant.iter().any(|c| *c)
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn normalize(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.normalize_row(r)).collect()
    }

    pub fn denormalize(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.denormalize_row(r)).collect()
    }
}

/// A window of consecutive rows, `start..start + len`, inside one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn rows(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowedSplit {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    pub window: usize,
    /// Segments shorter than the window, skipped.
    pub skipped_segments: usize,
}

impl WindowedSplit {
    /// Row indices covered by at least one training window, in order.
    pub fn training_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.train.iter().flat_map(|w| w.rows()).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

/// Split counts: train and validation rounded to nearest, test takes the rest.
pub fn split_counts(total: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let train = ((total as f64 * ratios[0]).round() as usize).min(total);
    let val = ((total as f64 * ratios[1]).round() as usize).min(total - train);
    (train, val, total - train - val)
}

/// All windows of length `window` at the given stride inside each segment
/// (`T − w + 1` per segment at stride 1), shuffled by `seed` and split by
/// `ratios`.
pub fn window_and_split(
    segments: &[Range<usize>],
    window: usize,
    stride: usize,
    ratios: [f64; 3],
    seed: RngSeed,
) -> Result<WindowedSplit> {
    if window == 0 || stride == 0 {
        return Err(Error::Parameter("window and stride must be >= 1".into()));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut windows = Vec::new();
    let mut skipped = 0;
    for seg in segments {
        if seg.len() < window {
            skipped += 1;
            continue;
        }
        windows.extend((seg.start..=seg.end - window).step_by(stride).map(|start| Window { start, len: window }));
    }
    if windows.is_empty() {
        return Err(Error::Input(format!("no sequence is at least {window} rows long")));
    }
    windows.shuffle(&mut seed.stream(2));
    let (n_train, n_val, _) = split_counts(windows.len(), ratios);
    let test = windows.split_off(n_train + n_val);
    let validation = windows.split_off(n_train);
    Ok(WindowedSplit { train: windows, validation, test, window, skipped_segments: skipped })
}

/// Turns windows into training sequences over (already normalized) features.
pub fn windows_to_sequences(features: &[Vec<f64>], targets: &TargetData, windows: &[Window]) -> Result<Vec<Sequence>> {
    windows
        .iter()
        .map(|w| {
            let inputs = features[w.rows()].to_vec();
            let t = match targets {
                TargetData::Values(v) => Targets::Values(v[w.rows()].to_vec()),
                TargetData::Labels(l) => Targets::Labels(l[w.rows()].to_vec()),
            };
            Sequence::new(inputs, t)
        })
        .collect()
}

/// Split sequences ready for training, plus the statistics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub split: WindowedSplit,
    pub feature_stats: NormStats,
    /// Present when regression targets were normalized too.
    pub target_stats: Option<NormStats>,
    pub train: Vec<Sequence>,
    pub validation: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

impl Prepared {
    /// Records the pipeline so it can be rebuilt from raw CSV later.
    pub fn spec(&self, dataset: &Dataset, stride: usize, split_ratios: [f64; 3], seed: RngSeed, missing: MissingPolicy, sequence_column: Option<String>) -> DataSpec {
        let (target_mean, target_std) =
            self.target_stats.as_ref().map_or((vec![], vec![]), |t| (t.mean.clone(), t.std.clone()));
        DataSpec {
            features: dataset.feature_names.clone(),
            targets: dataset.target_names.clone(),
            feature_mean: self.feature_stats.mean.clone(),
            feature_std: self.feature_stats.std.clone(),
            target_mean,
            target_std,
            classes: dataset.num_classes(),
            window: self.split.window,
            stride,
            split_ratios,
            split_seed: seed.0,
            missing: missing.to_string(),
            sequence_column,
        }
    }
}

fn stats_from_spec(mean: &[f64], std: &[f64]) -> NormStats {
    NormStats { mean: mean.to_vec(), std: std.to_vec(), constant: std.iter().map(|_| false).collect() }
}

fn assemble(dataset: &Dataset, split: WindowedSplit, features: &NormStats, targets: Option<&NormStats>) -> Result<Prepared> {
    let x = features.normalize(&dataset.features);
    let y = match (&dataset.targets, targets) {
        (TargetData::Values(v), Some(s)) => TargetData::Values(s.normalize(v)),
        (t, _) => t.clone(),
    };
    Ok(Prepared {
        train: windows_to_sequences(&x, &y, &split.train)?,
        validation: windows_to_sequences(&x, &y, &split.validation)?,
        test: windows_to_sequences(&x, &y, &split.test)?,
        split,
        feature_stats: features.clone(),
        target_stats: targets.cloned(),
    })
}

/// Windows and splits `dataset`, then normalizes features (and, if asked,
/// regression targets) with statistics of the rows covered by training
/// windows.
pub fn prepare(
    dataset: &Dataset,
    window: usize,
    stride: usize,
    ratios: [f64; 3],
    seed: RngSeed,
    normalize_targets: bool,
) -> Result<Prepared> {
    let split = window_and_split(&dataset.segments, window, stride, ratios, seed)?;
    let rows = split.training_rows();
    if rows.is_empty() {
        return Err(Error::Input("the training split is empty".into()));
    }
    let fit = |table: &[Vec<f64>]| NormStats::fit(&rows.iter().map(|&r| table[r].as_slice()).collect::<Vec<_>>());
    let features = fit(&dataset.features)?;
    let targets = match (&dataset.targets, normalize_targets) {
        (TargetData::Values(v), true) => Some(fit(v)?),
        _ => None,
    };
    assemble(dataset, split, &features, targets.as_ref())
}

/// Rebuilds the split and normalization recorded in `spec` on `dataset`.
pub fn prepare_from_spec(dataset: &Dataset, spec: &DataSpec) -> Result<Prepared> {
    if dataset.feature_names.len() != spec.feature_mean.len() {
        return Err(Error::Schema(format!(
            "{} feature columns given, the checkpoint expects {}",
            dataset.feature_names.len(),
            spec.feature_mean.len()
        )));
    }
    let split = window_and_split(&dataset.segments, spec.window, spec.stride, spec.split_ratios, RngSeed(spec.split_seed))?;
    let features = stats_from_spec(&spec.feature_mean, &spec.feature_std);
    let targets = (!spec.target_mean.is_empty()).then(|| stats_from_spec(&spec.target_mean, &spec.target_std));
    assemble(dataset, split, &features, targets.as_ref())
}
