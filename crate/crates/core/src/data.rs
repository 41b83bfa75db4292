//! Feature datasets: CSV ingestion, trial-wise splitting, stratified
//! subsampling and the two-Gaussian simulation generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major N×D matrix of feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(FeatureMatrix { dim, data })
    }

    pub fn with_dim(dim: usize) -> Self {
        FeatureMatrix {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut m = FeatureMatrix::with_dim(dim);
        for r in rows {
            m.push(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Feature rows with class label, trial id and participant id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: FeatureMatrix,
    labels: Vec<u32>,
    trials: Vec<u32>,
    participants: Vec<u32>,
}

impl FeatureDataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<u32>,
        trials: Vec<u32>,
        participants: Vec<u32>,
    ) -> Result<Self> {
        let n = features.len();
        for (name, len) in [
            ("labels", labels.len()),
            ("trials", trials.len()),
            ("participants", participants.len()),
        ] {
            if len != n {
                return Err(Error::invalid(format!(
                    "{name} has {len} entries but there are {n} feature rows"
                )));
            }
        }
        if let Some(i) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {}", i / features.dim())));
        }
        if let Some(i) = labels.iter().position(|&l| l == 0) {
            return Err(Error::invalid(format!("row {i}: class labels start at 1")));
        }
        Ok(FeatureDataset {
            features,
            labels,
            trials,
            participants,
        })
    }

    pub fn empty(dim: usize) -> Self {
        FeatureDataset {
            features: FeatureMatrix::with_dim(dim),
            labels: Vec::new(),
            trials: Vec::new(),
            participants: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64], label: u32, trial: u32, participant: u32) -> Result<()> {
        if label == 0 {
            return Err(Error::invalid("class labels start at 1"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature row".into()));
        }
        self.features.push(row)?;
        self.labels.push(label);
        self.trials.push(trial);
        self.participants.push(participant);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn trials(&self) -> &[u32] {
        &self.trials
    }

    pub fn participants(&self) -> &[u32] {
        &self.participants
    }

    /// Distinct class labels, ascending.
    pub fn class_ids(&self) -> Vec<u32> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn trial_ids(&self) -> Vec<u32> {
        self.trials
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn participant_ids(&self) -> Vec<u32> {
        self.participants
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Feature rows belonging to one class, in dataset order.
    pub fn class_rows(&self, class_id: u32) -> FeatureMatrix {
        let mut m = FeatureMatrix::with_dim(self.dim());
        for (i, &l) in self.labels.iter().enumerate() {
            if l == class_id {
                m.data.extend_from_slice(self.row(i));
            }
        }
        m
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        let mut out = FeatureDataset::empty(self.dim());
        for &i in indices {
            out.features.data.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
            out.trials.push(self.trials[i]);
            out.participants.push(self.participants[i]);
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> FeatureDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.subset(&idx)
    }

    /// Row indices sorted by features, then label, trial and participant.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.row(a)
                .iter()
                .zip(self.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.labels[a].cmp(&self.labels[b]))
                .then(self.trials[a].cmp(&self.trials[b]))
                .then(self.participants[a].cmp(&self.participants[b]))
        });
        idx
    }
}

// ---------------------------------------------------------------------------
// CSV

/// Header for a feature CSV with `dim` feature columns.
pub fn csv_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("f{i}")).collect();
    h.extend(["label", "trial", "participant"].map(String::from));
    h
}

/// Parses the feature count from a header `f1,...,fD,label,trial,participant`.
fn parse_header(header: &csv::StringRecord, expected_dim: Option<usize>) -> Result<usize> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 {
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            message: format!("expected f1..fD,label,trial,participant, found {cols:?}"),
        });
    }
    let dim = cols.len() - 3;
    let want = csv_header(dim);
    for (got, want) in cols.iter().zip(&want) {
        if got != want {
            return Err(Error::Parse {
                row: 0,
                column: want.clone(),
                message: format!("missing column {want} (found {got})"),
            });
        }
    }
    if let Some(d) = expected_dim {
        if d != dim {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: dim,
            });
        }
    }
    Ok(dim)
}

/// Reads a feature CSV. Rows are numbered from 1 (the first data row) in errors.
pub fn read_csv<R: Read>(reader: R, expected_dim: Option<usize>) -> Result<FeatureDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        row: 0,
        column: "header".into(),
        message: e.to_string(),
    })?;
    let dim = parse_header(header, expected_dim)?;
    let names = csv_header(dim);
    let mut out = FeatureDataset::empty(dim);
    let mut row = vec![0.0; dim];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if rec.len() != dim + 3 {
            return Err(Error::Parse {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", dim + 3, rec.len()),
            });
        }
        for (j, slot) in row.iter_mut().enumerate() {
            let cell = rec[j].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: names[j].clone(),
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: names[j].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            *slot = v;
        }
        let mut ints = [0u32; 3];
        for (k, slot) in ints.iter_mut().enumerate() {
            let cell = rec[dim + k].trim();
            *slot = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: names[dim + k].clone(),
                message: format!("not a non-negative integer: {cell:?}"),
            })?;
        }
        if ints[0] == 0 {
            return Err(Error::Parse {
                row: line,
                column: "label".into(),
                message: "class labels start at 1".into(),
            });
        }
        out.push(&row, ints[0], ints[1], ints[2])?;
    }
    Ok(out)
}

pub fn load_csv(path: &Path, expected_dim: Option<usize>) -> Result<FeatureDataset> {
    read_csv(File::open(path)?, expected_dim)
}

/// Writes the dataset with shortest round-trip float formatting.
pub fn write_csv<W: Write>(d: &FeatureDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(d.dim())).map_err(csv_io)?;
    let mut fields = Vec::with_capacity(d.dim() + 3);
    for i in 0..d.len() {
        fields.clear();
        fields.extend(d.row(i).iter().map(|v| format_float(*v)));
        fields.push(d.labels[i].to_string());
        fields.push(d.trials[i].to_string());
        fields.push(d.participants[i].to_string());
        w.write_record(&fields).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &FeatureDataset, path: &Path) -> Result<()> {
    write_csv(d, File::create(path)?)
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

/// Shortest decimal that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

// ---------------------------------------------------------------------------
// Splitting and subsampling

/// Which trials train and which test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_trials: BTreeSet<u32>,
    pub test_trials: BTreeSet<u32>,
}

#[derive(Debug, Clone)]
pub struct TrialSplit {
    pub plan: SplitPlan,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

/// All size-`s` subsets of `items`, lexicographic.
pub fn combinations<T: Copy>(items: &[T], s: usize) -> Vec<Vec<T>> {
    let n = items.len();
    let mut out = Vec::new();
    if s > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = s;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - s {
                break;
            }
            if i == 0 && idx[0] == n - s {
                return out;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One entry per size-`s` combination of trial ids used for training; the
/// remaining trials form the test side.
pub fn split_by_trials(d: &FeatureDataset, s: usize) -> Result<Vec<TrialSplit>> {
    let trials = d.trial_ids();
    if s == 0 || s >= trials.len() {
        return Err(Error::invalid(format!(
            "need 1 <= s < T training trials, got s = {s} with T = {}",
            trials.len()
        )));
    }
    Ok(combinations(&trials, s)
        .into_iter()
        .map(|train_ids| {
            let train_trials: BTreeSet<u32> = train_ids.into_iter().collect();
            let test_trials: BTreeSet<u32> = trials
                .iter()
                .copied()
                .filter(|t| !train_trials.contains(t))
                .collect();
            let train = d.filter(|i| train_trials.contains(&d.trials[i]));
            let test = d.filter(|i| test_trials.contains(&d.trials[i]));
            TrialSplit {
                plan: SplitPlan {
                    train_trials,
                    test_trials,
                },
                train,
                test,
            }
        })
        .collect())
}

/// Largest-remainder allocation of `total` slots over `counts`, at least one
/// slot per nonempty class and never more than the class holds.
fn allocate(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        alloc[c] += 1;
    }
    for (a, &c) in alloc.iter_mut().zip(counts) {
        *a = (*a).clamp(1.min(c), c);
    }
    alloc
}

/// Stratified sample without replacement of about `fraction · N` rows.
///
/// Selection depends only on the multiset of rows (rows are put in a
/// canonical order before the seeded shuffle). Output is grouped by class in
/// ascending class order.
pub fn subsample(d: &FeatureDataset, fraction: f64, seed: u64) -> Result<FeatureDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let order = d.canonical_order();
    let classes = d.class_ids();
    let per_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| order.iter().copied().filter(|&i| d.labels[i] == c).collect())
        .collect();
    let counts: Vec<usize> = per_class.iter().map(Vec::len).collect();
    let alloc = allocate(&counts, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (mut rows, take) in per_class.into_iter().zip(alloc) {
        rows.shuffle(&mut rng);
        let mut chosen: Vec<usize> = rows.into_iter().take(take).collect();
        chosen.sort_by_key(|i| order.iter().position(|o| o == i));
        picked.extend(chosen);
    }
    Ok(d.subset(&picked))
}

// ---------------------------------------------------------------------------
// Simulation

/// Two isotropic Gaussian classes with uniform outliers added to class 1.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub seed: u64,
    pub per_class: usize,
    pub outlier_fraction: f64,
    pub grid_step: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 0,
            per_class: 100,
            outlier_fraction: 0.1,
            grid_step: 0.05,
        }
    }
}

pub const SIM_MEANS: [[f64; 2]; 2] = [[2.5, 2.5], [5.0, 5.0]];
pub const SIM_VARIANCE: f64 = 0.5;
pub const SIM_OUTLIER_RANGE: (f64, f64) = (0.0, 7.0);
pub const SIM_GRID_RANGE: (f64, f64) = (0.0, 8.0);

/// Bayes-optimal label under the two generating Gaussians (equal priors,
/// shared isotropic covariance). Ties go to class 1.
pub fn simulation_bayes_label(x: &[f64]) -> u32 {
    let d = |m: &[f64; 2]| (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
    if d(&SIM_MEANS[0]) <= d(&SIM_MEANS[1]) {
        1
    } else {
        2
    }
}

/// Training data (trial 1) and a clean labelled evaluation grid (trial 2).
pub fn generate_simulation_with(cfg: &SimulationConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    if !(cfg.grid_step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sd = SIM_VARIANCE.sqrt();
    let mut train = FeatureDataset::empty(2);
    for (c, mean) in SIM_MEANS.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            train.push(&[mean[0] + sd * z0, mean[1] + sd * z1], c as u32 + 1, 1, 1)?;
        }
    }
    let n_out = (cfg.outlier_fraction * cfg.per_class as f64).round() as usize;
    for _ in 0..n_out {
        let (lo, hi) = SIM_OUTLIER_RANGE;
        let x = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        train.push(&x, 1, 1, 1)?;
    }

    let (lo, hi) = SIM_GRID_RANGE;
    let steps = ((hi - lo) / cfg.grid_step + 1e-9).floor() as usize;
    let mut grid = FeatureDataset::empty(2);
    for i in 0..=steps {
        for j in 0..=steps {
            let x = [lo + i as f64 * cfg.grid_step, lo + j as f64 * cfg.grid_step];
            grid.push(&x, simulation_bayes_label(&x), 2, 1)?;
        }
    }
    Ok((train, grid))
}

pub fn generate_simulation(seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    generate_simulation_with(&SimulationConfig {
        seed,
        ..SimulationConfig::default()
    })
}
