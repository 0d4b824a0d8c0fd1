//! Dataset model, text-table IO, and deterministic splitting/subsampling.
//!
//! The on-disk format is a plain text table, one sample per row: the first
//! column is the label (`normal` or an anomaly-type tag), the remaining `d`
//! columns are decimal floats. The first line is a header
//! `label,f0,f1,...`. Floats are written with Rust's shortest round-trip
//! formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

pub const NORMAL_LABEL: &str = "normal";

/// Class of one sample: normal, or anomalous with a type tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Normal,
    Anomaly(String),
}

impl Label {
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Label::Anomaly(_))
    }

    pub fn anomaly_type(&self) -> Option<&str> {
        match self {
            Label::Normal => None,
            Label::Anomaly(tag) => Some(tag),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => f.write_str(NORMAL_LABEL),
            Label::Anomaly(tag) => f.write_str(tag),
        }
    }
}

/// One feature vector with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub label: Label,
    pub features: Vec<f64>,
}

impl LabeledSample {
    pub fn normal(features: Vec<f64>) -> Self {
        Self {
            label: Label::Normal,
            features,
        }
    }

    pub fn anomaly(tag: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            label: Label::Anomaly(tag.into()),
            features,
        }
    }
}

/// An immutable collection of labeled samples of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dimension: usize,
    /// Anomaly-type tag -> human description. Tags present in samples are
    /// always registered; descriptions may be empty.
    type_registry: BTreeMap<String, String>,
}

fn valid_tag(tag: &str) -> bool {
    !tag.is_empty()
        && tag != NORMAL_LABEL
        && tag
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl Dataset {
    /// Builds a dataset, validating dimensions, finiteness, and tags.
    pub fn new(samples: Vec<LabeledSample>, dimension: usize) -> Result<Self> {
        Self::with_registry(samples, dimension, BTreeMap::new())
    }

    pub fn with_registry(
        samples: Vec<LabeledSample>,
        dimension: usize,
        mut type_registry: BTreeMap<String, String>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::usage("dataset dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dimension {
                return Err(Error::shape(
                    format!("sample {i} features"),
                    dimension,
                    s.features.len(),
                ));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("sample {i} features")));
            }
            if let Label::Anomaly(tag) = &s.label {
                if !valid_tag(tag) {
                    return Err(Error::usage(format!(
                        "sample {i}: invalid anomaly type tag {tag:?}"
                    )));
                }
                type_registry.entry(tag.clone()).or_default();
            }
        }
        for tag in type_registry.keys() {
            if !valid_tag(tag) {
                return Err(Error::usage(format!("invalid anomaly type tag {tag:?}")));
            }
        }
        Ok(Self {
            samples,
            dimension,
            type_registry,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn type_registry(&self) -> &BTreeMap<String, String> {
        &self.type_registry
    }

    /// Tags actually present among the samples, sorted.
    pub fn present_types(&self) -> Vec<String> {
        let mut tags: Vec<String> = self
            .samples
            .iter()
            .filter_map(|s| s.label.anomaly_type().map(str::to_owned))
            .collect();
        tags.sort();
        tags.dedup();
        tags
    }

    pub fn normal_count(&self) -> usize {
        self.samples.iter().filter(|s| !s.label.is_anomaly()).count()
    }

    pub fn anomaly_count(&self) -> usize {
        self.samples.len() - self.normal_count()
    }

    /// Feature vectors of all normal samples, in dataset order.
    pub fn normal_features(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .filter(|s| !s.label.is_anomaly())
            .map(|s| s.features.clone())
            .collect()
    }

    /// Feature vectors of all anomalous samples, in dataset order.
    pub fn anomaly_features(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .filter(|s| s.label.is_anomaly())
            .map(|s| s.features.clone())
            .collect()
    }

    /// A copy with every feature vector replaced by `map(features)`.
    /// Labels and registry are preserved; the new dimension is taken from
    /// the mapped vectors.
    pub fn map_features<F>(&self, mut map: F) -> Result<Dataset>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut mapped = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            mapped.push(LabeledSample {
                label: s.label.clone(),
                features: map(&s.features)?,
            });
        }
        let dim = mapped.first().map(|s| s.features.len()).unwrap_or(self.dimension);
        Dataset::with_registry(mapped, dim, self.type_registry.clone())
    }
}

/// How to carve a dataset into train/validation/test.
///
/// Validation receives normal samples only; anomalies are split between
/// train and test in proportion to their fractions.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
        seed: u64,
    },
    /// Explicit sample indices per split.
    Explicit {
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Deterministically splits a dataset. Normals are shuffled (seeded) and
/// dealt into train/validation/test; anomalies are shuffled and dealt into
/// train/test only, stratified per type so every split sees the same type
/// mix. When the fractions sum to one the split covers every sample.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<DatasetSplits> {
    match spec {
        SplitSpec::Fractions {
            train,
            validation,
            test,
            seed,
        } => split_fractions(dataset, *train, *validation, *test, *seed),
        SplitSpec::Explicit {
            train,
            validation,
            test,
        } => split_explicit(dataset, train, validation, test),
    }
}

fn split_fractions(
    dataset: &Dataset,
    f_train: f64,
    f_validation: f64,
    f_test: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    for (name, f) in [("train", f_train), ("validation", f_validation), ("test", f_test)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::usage(format!("{name} fraction must be in [0, 1], got {f}")));
        }
    }
    let total = f_train + f_validation + f_test;
    if total > 1.0 + 1e-12 {
        return Err(Error::usage(format!("split fractions sum to {total} > 1")));
    }
    let covers_all = (total - 1.0).abs() < 1e-12;

    let mut rng = seeded_rng(seed);
    let mut normal_idx: Vec<usize> = Vec::new();
    let mut anomaly_by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        match &s.label {
            Label::Normal => normal_idx.push(i),
            Label::Anomaly(tag) => anomaly_by_type.entry(tag).or_default().push(i),
        }
    }

    normal_idx.shuffle(&mut rng);
    let n = normal_idx.len();
    let n_train = (f_train * n as f64).floor() as usize;
    let n_val = (f_validation * n as f64).floor() as usize;
    let n_test = if covers_all {
        n - n_train - n_val
    } else {
        (f_test * n as f64).floor() as usize
    };
    if n_train + n_val + n_test > n {
        return Err(Error::usage("not enough normal samples for the requested fractions"));
    }
    if n_val > 0 && n_val == n {
        return Err(Error::usage("validation fraction consumes every normal sample"));
    }

    let mut train_idx: Vec<usize> = normal_idx[..n_train].to_vec();
    let val_idx: Vec<usize> = normal_idx[n_train..n_train + n_val].to_vec();
    let mut test_idx: Vec<usize> = normal_idx[n_train + n_val..n_train + n_val + n_test].to_vec();

    // Anomalies go to train and test only, per type.
    let anomaly_total = f_train + f_test;
    for (_, mut idx) in anomaly_by_type {
        idx.shuffle(&mut rng);
        let m = idx.len();
        let m_train = if anomaly_total > 0.0 {
            (f_train / anomaly_total * m as f64).floor() as usize
        } else {
            0
        };
        let m_test = if covers_all {
            m - m_train
        } else if anomaly_total > 0.0 {
            ((f_test / anomaly_total) * m as f64).floor() as usize
        } else {
            0
        };
        train_idx.extend(&idx[..m_train]);
        test_idx.extend(&idx[m_train..m_train + m_test.min(m - m_train)]);
    }

    let pick = |idx: &[usize]| -> Result<Dataset> {
        let samples = idx.iter().map(|&i| dataset.samples()[i].clone()).collect();
        Dataset::with_registry(samples, dataset.dimension(), dataset.type_registry().clone())
    };
    Ok(DatasetSplits {
        train: pick(&train_idx)?,
        validation: pick(&val_idx)?,
        test: pick(&test_idx)?,
    })
}

fn split_explicit(
    dataset: &Dataset,
    train: &[usize],
    validation: &[usize],
    test: &[usize],
) -> Result<DatasetSplits> {
    let n = dataset.len();
    let mut seen = vec![false; n];
    for (name, idx) in [("train", train), ("validation", validation), ("test", test)] {
        for &i in idx {
            if i >= n {
                return Err(Error::usage(format!("{name} index {i} out of range ({n} samples)")));
            }
            if seen[i] {
                return Err(Error::usage(format!("sample {i} assigned to more than one split")));
            }
            seen[i] = true;
        }
    }
    for &i in validation {
        if dataset.samples()[i].label.is_anomaly() {
            return Err(Error::usage(format!(
                "validation must contain normal samples only (sample {i} is anomalous)"
            )));
        }
    }
    let pick = |idx: &[usize]| -> Result<Dataset> {
        let samples = idx.iter().map(|&i| dataset.samples()[i].clone()).collect();
        Dataset::with_registry(samples, dataset.dimension(), dataset.type_registry().clone())
    };
    Ok(DatasetSplits {
        train: pick(train)?,
        validation: pick(validation)?,
        test: pick(test)?,
    })
}

/// Keeps all normals and a uniform without-replacement subset of `n`
/// anomalies. Deterministic per seed.
pub fn subsample_anomalies(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let anomaly_idx: Vec<usize> = dataset
        .samples()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.label.is_anomaly().then_some(i))
        .collect();
    if n > anomaly_idx.len() {
        return Err(Error::usage(format!(
            "requested {n} anomalies but only {} are available",
            anomaly_idx.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut pool = anomaly_idx;
    pool.shuffle(&mut rng);
    let mut keep: Vec<usize> = pool[..n].to_vec();
    keep.sort_unstable();
    let mut keep_iter = keep.iter().peekable();
    let samples: Vec<LabeledSample> = dataset
        .samples()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if s.label.is_anomaly() {
                if keep_iter.peek() == Some(&&i) {
                    keep_iter.next();
                    Some(s.clone())
                } else {
                    None
                }
            } else {
                Some(s.clone())
            }
        })
        .collect();
    Dataset::with_registry(samples, dataset.dimension(), dataset.type_registry().clone())
}

/// Keeps all normals plus anomalies whose type is in `types`.
pub fn select_types(dataset: &Dataset, types: &[String]) -> Result<Dataset> {
    for tag in types {
        if !dataset.type_registry().contains_key(tag) {
            return Err(Error::usage(format!("unknown anomaly type {tag:?}")));
        }
    }
    let samples: Vec<LabeledSample> = dataset
        .samples()
        .iter()
        .filter(|s| match &s.label {
            Label::Normal => true,
            Label::Anomaly(tag) => types.contains(tag),
        })
        .cloned()
        .collect();
    let registry: BTreeMap<String, String> = dataset
        .type_registry()
        .iter()
        .filter(|(tag, _)| types.contains(tag))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Dataset::with_registry(samples, dataset.dimension(), registry)
}

/// Writes the dataset as the text table described in the module docs.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "label")?;
    for i in 0..dataset.dimension() {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for s in dataset.samples() {
        write!(w, "{}", s.label)?;
        for v in &s.features {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset saved by [`save_dataset`]. Parse errors carry 1-based
/// line numbers.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Format {
                path: display,
                message: "empty file: expected a header line".into(),
            })
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"label") || columns.len() < 2 {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("header must be label,f0,f1,... (got {header:?})"),
        });
    }
    let dimension = columns.len() - 1;

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dimension + 1 {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                message: format!("expected {} columns, found {}", dimension + 1, fields.len()),
            });
        }
        let label = if fields[0] == NORMAL_LABEL {
            Label::Normal
        } else if valid_tag(fields[0]) {
            Label::Anomaly(fields[0].to_owned())
        } else {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                message: format!("invalid label {:?}", fields[0]),
            });
        };
        let mut features = Vec::with_capacity(dimension);
        for (col, raw) in fields[1..].iter().enumerate() {
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("column f{col}: {raw:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("column f{col}: non-finite value"),
                });
            }
            features.push(value);
        }
        samples.push(LabeledSample { label, features });
    }

    Dataset::new(samples, dimension).map_err(|e| match e {
        Error::Shape { context, expected, actual } => Error::Format {
            path: display.clone(),
            message: format!("{context}: expected {expected} features, got {actual}"),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        let mut samples = Vec::new();
        for i in 0..100 {
            samples.push(LabeledSample::normal(vec![i as f64, -0.5]));
        }
        for i in 0..10 {
            samples.push(LabeledSample::anomaly("shift", vec![100.0 + i as f64, 1.0]));
        }
        for i in 0..10 {
            samples.push(LabeledSample::anomaly("noise", vec![200.0 + i as f64, 2.0]));
        }
        Dataset::new(samples, 2).unwrap()
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut ds = toy_dataset();
        // Exercise awkward floats.
        ds.samples[0].features[0] = 0.1 + 0.2;
        ds.samples[1].features[1] = -1.0e-17;
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds.dimension(), back.dimension());
        assert_eq!(ds.samples(), back.samples());
        assert_eq!(
            ds.type_registry().keys().collect::<Vec<_>>(),
            back.type_registry().keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn wrong_column_count_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,f0,f1\nnormal,1.0,2.0\nnormal,3.0\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn non_numeric_feature_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "label,f0\nnormal,abc\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("f0"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn fraction_split_keeps_validation_normal_only() {
        let ds = toy_dataset();
        let spec = SplitSpec::Fractions {
            train: 0.5,
            validation: 0.1,
            test: 0.4,
            seed: 7,
        };
        let splits = split(&ds, &spec).unwrap();
        assert_eq!(splits.validation.len(), 10);
        assert_eq!(splits.validation.anomaly_count(), 0);
        // Normals: 50 train / 10 validation / 40 test.
        assert_eq!(splits.train.normal_count(), 50);
        assert_eq!(splits.test.normal_count(), 40);
        // All 20 anomalies distributed over train and test.
        assert_eq!(splits.train.anomaly_count() + splits.test.anomaly_count(), 20);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let ds = toy_dataset();
        let spec = SplitSpec::Fractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            seed: 42,
        };
        let a = split(&ds, &spec).unwrap();
        let b = split(&ds, &spec).unwrap();
        assert_eq!(a.train.samples(), b.train.samples());
        assert_eq!(a.validation.samples(), b.validation.samples());
        assert_eq!(a.test.samples(), b.test.samples());

        // Partition: every sample lands in exactly one split.
        let total = a.train.len() + a.validation.len() + a.test.len();
        assert_eq!(total, ds.len());
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for part in [&a.train, &a.validation, &a.test] {
            for s in part.samples() {
                assert!(!seen.contains(&s.features), "duplicate {:?}", s.features);
                seen.push(s.features.clone());
            }
        }
    }

    #[test]
    fn explicit_split_rejects_anomalous_validation() {
        let ds = toy_dataset();
        let spec = SplitSpec::Explicit {
            train: vec![0, 1],
            validation: vec![100], // anomaly index
            test: vec![2],
        };
        assert!(matches!(split(&ds, &spec), Err(Error::Usage(_))));
    }

    #[test]
    fn subsample_keeps_normals_and_counts() {
        let ds = toy_dataset();
        let sub = subsample_anomalies(&ds, 5, 3).unwrap();
        assert_eq!(sub.normal_count(), 100);
        assert_eq!(sub.anomaly_count(), 5);

        let all = subsample_anomalies(&ds, 20, 3).unwrap();
        assert_eq!(all.samples(), ds.samples());

        let none = subsample_anomalies(&ds, 0, 3).unwrap();
        assert_eq!(none.anomaly_count(), 0);
        assert_eq!(none.normal_count(), 100);

        assert!(subsample_anomalies(&ds, 21, 3).is_err());
    }

    #[test]
    fn different_seeds_give_different_subsets() {
        let mut samples = Vec::new();
        for i in 0..1000 {
            samples.push(LabeledSample::anomaly("x", vec![i as f64]));
        }
        let ds = Dataset::new(samples, 1).unwrap();
        let mut collisions = 0;
        for trial in 0..100 {
            let a = subsample_anomalies(&ds, 8, 2 * trial).unwrap();
            let b = subsample_anomalies(&ds, 8, 2 * trial + 1).unwrap();
            let fa: Vec<_> = a.samples().iter().map(|s| s.features[0] as i64).collect();
            let fb: Vec<_> = b.samples().iter().map(|s| s.features[0] as i64).collect();
            let mut sa = fa.clone();
            let mut sb = fb.clone();
            sa.sort();
            sb.sort();
            if sa == sb {
                collisions += 1;
            }
        }
        assert!(collisions < 5, "{collisions} identical subsets out of 100");
    }

    #[test]
    fn select_types_partitions_anomalies() {
        let ds = toy_dataset();
        let both = select_types(&ds, &["shift".into(), "noise".into()]).unwrap();
        assert_eq!(both.samples(), ds.samples());

        let none = select_types(&ds, &[]).unwrap();
        assert_eq!(none.anomaly_count(), 0);

        let shift = select_types(&ds, &["shift".into()]).unwrap();
        let noise = select_types(&ds, &["noise".into()]).unwrap();
        assert_eq!(shift.anomaly_count() + noise.anomaly_count(), ds.anomaly_count());

        assert!(select_types(&ds, &["bogus".into()]).is_err());
    }

    #[test]
    fn subsample_after_select_stays_within_types() {
        let ds = toy_dataset();
        let shift_only = select_types(&ds, &["shift".into()]).unwrap();
        let sub = subsample_anomalies(&shift_only, 4, 9).unwrap();
        for s in sub.samples() {
            if let Some(tag) = s.label.anomaly_type() {
                assert_eq!(tag, "shift");
            }
        }
    }

    #[test]
    fn dataset_rejects_dimension_mismatch_and_nan() {
        let bad_dim = vec![
            LabeledSample::normal(vec![1.0, 2.0]),
            LabeledSample::normal(vec![1.0]),
        ];
        assert!(Dataset::new(bad_dim, 2).is_err());

        let bad_val = vec![LabeledSample::normal(vec![f64::NAN])];
        assert!(Dataset::new(bad_val, 1).is_err());

        let bad_tag = vec![LabeledSample::anomaly("has space", vec![1.0])];
        assert!(Dataset::new(bad_tag, 1).is_err());
    }
}
