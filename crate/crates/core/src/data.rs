//! Datasets, preprocessing, train/validation/test splits with inexact
//! anomaly sets, and the two-dimensional synthetic benchmark.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub attribute_names: Vec<String>,
    pub x: DenseMatrix,
    pub is_anomaly: Vec<bool>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DenseMatrix, is_anomaly: Vec<bool>) -> Result<Self> {
        if x.rows() != is_anomaly.len() {
            return Err(Error::dims("anomaly flags", x.rows(), is_anomaly.len()));
        }
        let attribute_names = (0..x.cols()).map(|c| format!("x{c}")).collect();
        Ok(Self {
            name: name.into(),
            attribute_names,
            x,
            is_anomaly,
        })
    }

    pub fn len(&self) -> usize {
        self.is_anomaly.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_anomaly.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn anomaly_count(&self) -> usize {
        self.is_anomaly.iter().filter(|a| **a).count()
    }

    pub fn normal_count(&self) -> usize {
        self.len() - self.anomaly_count()
    }

    fn gather(&self, indices: &[usize]) -> DenseMatrix {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.x.row(i)).collect();
        DenseMatrix::from_rows(&rows, self.dim()).expect("rows share the dataset width")
    }
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
}

impl LabelColumn {
    /// `"last"`, a zero-based column index, or a header name.
    pub fn parse(spec: &str) -> Self {
        if spec.eq_ignore_ascii_case("last") {
            LabelColumn::Last
        } else if let Ok(i) = spec.parse() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(spec.to_string())
        }
    }
}

/// Label values accepted for each class. Matching is case-insensitive and
/// numeric values compare numerically (so `1.0` matches `1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub anomaly: Vec<String>,
    pub normal: Vec<String>,
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self {
            anomaly: ["anomaly", "1", "yes", "outlier"]
                .map(String::from)
                .to_vec(),
            normal: ["normal", "0", "no", "inlier"].map(String::from).to_vec(),
        }
    }
}

impl LabelScheme {
    fn matches(token: &str, value: &str) -> bool {
        if token.eq_ignore_ascii_case(value) {
            return true;
        }
        matches!(
            (token.parse::<f64>(), value.parse::<f64>()),
            (Ok(a), Ok(b)) if a == b
        )
    }

    pub fn classify(&self, value: &str) -> Option<bool> {
        let v = value.trim().trim_matches(|c| c == '\'' || c == '"');
        if self.anomaly.iter().any(|t| Self::matches(t, v)) {
            Some(true)
        } else if self.normal.iter().any(|t| Self::matches(t, v)) {
            Some(false)
        } else {
            None
        }
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads numeric attributes plus one label column. A first row whose
/// attribute cells are not all numeric is taken as the header.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    scheme: &LabelScheme,
) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    let first = records
        .first()
        .ok_or_else(|| format_err("file has no rows".into()))?;
    let width = first.len();
    if width < 2 {
        return Err(format_err(
            "need at least one attribute and a label column".into(),
        ));
    }

    let label_idx = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(format_err(format!(
                "label column {i} out of range (width {width})"
            )))
        }
        LabelColumn::Name(name) => first
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(format!("no column named {name:?}")))?,
    };
    let has_header = matches!(label_column, LabelColumn::Name(_))
        || first
            .iter()
            .enumerate()
            .any(|(c, cell)| c != label_idx && parse_cell(cell).is_none());

    let attribute_names: Vec<String> = (0..width)
        .filter(|&c| c != label_idx)
        .map(|c| {
            if has_header {
                first[c].to_string()
            } else {
                format!("x{c}")
            }
        })
        .collect();

    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(format_err("no data rows".into()));
    }
    let mut data = Vec::with_capacity(body.len() * (width - 1));
    let mut is_anomaly = Vec::with_capacity(body.len());
    for (r, record) in body.iter().enumerate() {
        let row = r + 1 + usize::from(has_header);
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let flag = scheme.classify(cell).ok_or_else(|| Error::UnknownLabel {
                    path: path.to_path_buf(),
                    row,
                    value: cell.to_string(),
                })?;
                is_anomaly.push(flag);
            } else {
                data.push(parse_cell(cell).ok_or_else(|| Error::NonNumericCell {
                    path: path.to_path_buf(),
                    row,
                    col: c + 1,
                    value: cell.to_string(),
                })?);
            }
        }
    }
    let x = DenseMatrix::from_vec(body.len(), width - 1, data)?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset {
        name,
        attribute_names,
        x,
        is_anomaly,
    })
}

/// Per-column min-max scaling to `[0, 1]` (constant columns become 0),
/// then removal of exact duplicate rows keeping the first occurrence.
pub fn preprocess(ds: &Dataset) -> Dataset {
    let (n, d) = (ds.len(), ds.dim());
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in 0..n {
        for (c, &v) in ds.x.row(r).iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    let mut is_anomaly = Vec::with_capacity(n);
    for r in 0..n {
        let scaled: Vec<f64> =
            ds.x.row(r)
                .iter()
                .enumerate()
                .map(|(c, &v)| {
                    let range = hi[c] - lo[c];
                    if range > 0.0 {
                        ((v - lo[c]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
        if seen.insert(scaled.iter().map(|v| v.to_bits()).collect()) {
            data.extend_from_slice(&scaled);
            is_anomaly.push(ds.is_anomaly[r]);
        }
    }
    Dataset {
        name: ds.name.clone(),
        attribute_names: ds.attribute_names.clone(),
        x: DenseMatrix::from_vec(is_anomaly.len(), d, data).expect("consistent shape"),
        is_anomaly,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InexactAnomalySet {
    pub member_indices: Vec<usize>,
}

/// Row indices for every role of one experiment repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_normals: Vec<usize>,
    pub val_normals: Vec<usize>,
    pub test_normals: Vec<usize>,
    pub train_sets: Vec<InexactAnomalySet>,
    pub val_sets: Vec<InexactAnomalySet>,
    pub test_anomalies: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub n_train_sets: usize,
    pub n_val_sets: usize,
    pub set_size: usize,
    /// Percentages of the normal instances for training and validation;
    /// test receives the rest.
    pub train_percent: usize,
    pub val_percent: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            n_train_sets: 10,
            n_val_sets: 5,
            set_size: 5,
            train_percent: 70,
            val_percent: 15,
        }
    }
}

pub fn make_splits<R: Rng + ?Sized>(
    ds: &Dataset,
    options: &SplitOptions,
    rng: &mut R,
) -> Result<SplitSpec> {
    make_splits_where(ds, options, rng, |_| true)
}

/// Like [`make_splits`], but only anomalies accepted by `set_eligible` may
/// seed a training or validation set. Ineligible anomalies go to test.
pub fn make_splits_where<R, F>(
    ds: &Dataset,
    options: &SplitOptions,
    rng: &mut R,
    set_eligible: F,
) -> Result<SplitSpec>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> bool,
{
    if options.set_size == 0 {
        return Err(Error::InvalidConfig("set size must be at least 1".into()));
    }
    if options.train_percent + options.val_percent >= 100 {
        return Err(Error::InvalidConfig(
            "train and validation percentages leave no test data".into(),
        ));
    }
    let mut normals: Vec<usize> = (0..ds.len()).filter(|&i| !ds.is_anomaly[i]).collect();
    let anomalies: Vec<usize> = (0..ds.len()).filter(|&i| ds.is_anomaly[i]).collect();
    let mut eligible: Vec<usize> = anomalies
        .iter()
        .copied()
        .filter(|&i| set_eligible(i))
        .collect();

    let n = normals.len();
    let n_train = (n * options.train_percent + 50) / 100;
    let n_val = (n * options.val_percent + 50) / 100;
    let members = options.set_size - 1;
    let n_sets = options.n_train_sets + options.n_val_sets;
    let insufficient = n_train < options.n_train_sets * members + 1
        || n_val < options.n_val_sets * members + 1
        || n_train + n_val >= n
        || eligible.len() < n_sets
        || anomalies.len() < n_sets + 1;
    if insufficient {
        // Smallest normal count whose rounded pools can host every set.
        let mut required_normals = 3;
        loop {
            let t = (required_normals * options.train_percent + 50) / 100;
            let v = (required_normals * options.val_percent + 50) / 100;
            if t > options.n_train_sets * members
                && v > options.n_val_sets * members
                && t + v < required_normals
            {
                break;
            }
            required_normals += 1;
        }
        return Err(Error::InsufficientData {
            required_anomalies: n_sets + 1,
            required_normals,
            anomalies: eligible.len().min(anomalies.len()),
            normals: n,
        });
    }

    normals.shuffle(rng);
    let mut test_normals = normals.split_off(n_train + n_val);
    let mut val_pool = normals.split_off(n_train);
    let mut train_pool = normals;

    eligible.shuffle(rng);
    let mut build_sets = |seeds: &[usize], pool: &mut Vec<usize>| -> Vec<InexactAnomalySet> {
        seeds
            .iter()
            .map(|&anomaly| {
                let mut member_indices: Vec<usize> = pool.drain(..members).collect();
                let at = rng.random_range(0..=members);
                member_indices.insert(at, anomaly);
                InexactAnomalySet { member_indices }
            })
            .collect()
    };
    let train_sets = build_sets(&eligible[..options.n_train_sets], &mut train_pool);
    let val_sets = build_sets(&eligible[options.n_train_sets..n_sets], &mut val_pool);

    let used: HashSet<usize> = eligible[..n_sets].iter().copied().collect();
    let test_anomalies = anomalies
        .into_iter()
        .filter(|i| !used.contains(i))
        .collect();
    train_pool.sort_unstable();
    val_pool.sort_unstable();
    test_normals.sort_unstable();
    Ok(SplitSpec {
        train_normals: train_pool,
        val_normals: val_pool,
        test_normals,
        train_sets,
        val_sets,
        test_anomalies,
    })
}

/// Instances labelled only through sets, plus plain normal instances.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelData {
    pub sets: Vec<DenseMatrix>,
    pub normals: DenseMatrix,
}

impl WeakLabelData {
    pub fn dim(&self) -> usize {
        self.normals.cols()
    }

    pub fn set_instance_count(&self) -> usize {
        self.sets.iter().map(DenseMatrix::rows).sum()
    }

    /// Every set member stacked into one matrix, in set order.
    pub fn flattened_sets(&self) -> DenseMatrix {
        let rows: Vec<&[f64]> = self
            .sets
            .iter()
            .flat_map(|s| (0..s.rows()).map(move |r| s.row(r)))
            .collect();
        DenseMatrix::from_rows(&rows, self.dim()).expect("sets share the data width")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestData {
    pub anomalies: DenseMatrix,
    pub normals: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub train: WeakLabelData,
    pub val: WeakLabelData,
    pub test: TestData,
}

impl SplitSpec {
    pub fn materialize(&self, ds: &Dataset) -> Result<Partition> {
        if let Some(bad) = self.all_indices().find(|&i| i >= ds.len()) {
            return Err(Error::dims("split index bound", ds.len(), bad));
        }
        let sets = |ss: &[InexactAnomalySet]| {
            ss.iter()
                .map(|s| ds.gather(&s.member_indices))
                .collect::<Vec<_>>()
        };
        Ok(Partition {
            train: WeakLabelData {
                sets: sets(&self.train_sets),
                normals: ds.gather(&self.train_normals),
            },
            val: WeakLabelData {
                sets: sets(&self.val_sets),
                normals: ds.gather(&self.val_normals),
            },
            test: TestData {
                anomalies: ds.gather(&self.test_anomalies),
                normals: ds.gather(&self.test_normals),
            },
        })
    }

    pub fn all_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train_normals
            .iter()
            .chain(&self.val_normals)
            .chain(&self.test_normals)
            .chain(&self.test_anomalies)
            .chain(
                self.train_sets
                    .iter()
                    .chain(&self.val_sets)
                    .flat_map(|s| &s.member_indices),
            )
            .copied()
    }

    /// Every index appears in at most one role and one set, and every set
    /// holds exactly one anomaly.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen = HashSet::new();
        for i in self.all_indices() {
            if i >= ds.len() {
                return Err(Error::dims("split index bound", ds.len(), i));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidConfig(format!(
                    "index {i} used twice in split"
                )));
            }
        }
        for (k, set) in self.train_sets.iter().chain(&self.val_sets).enumerate() {
            let hits = set
                .member_indices
                .iter()
                .filter(|&&i| ds.is_anomaly[i])
                .count();
            if hits != 1 {
                return Err(Error::InvalidConfig(format!(
                    "set {k} holds {hits} anomalies, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mixture component of a synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticComponent {
    NormalLeft,
    NormalRight,
    /// Tight anomaly cluster between the two normal modes; the only one
    /// used in training and validation sets.
    AnomalyBetween,
    /// Broad anomaly cloud above the normal modes, test data only.
    AnomalyAbove,
}

impl SyntheticComponent {
    pub fn mean(self) -> [f64; 2] {
        match self {
            Self::NormalLeft => [-2.0, 0.0],
            Self::NormalRight => [2.0, 0.0],
            Self::AnomalyBetween => [0.0, -1.5],
            Self::AnomalyAbove => [0.0, 3.0],
        }
    }

    /// Isotropic variance.
    pub fn variance(self) -> f64 {
        match self {
            Self::NormalLeft | Self::NormalRight => 1.0,
            Self::AnomalyBetween => 0.25,
            Self::AnomalyAbove => 4.0,
        }
    }

    pub fn count(self) -> usize {
        match self {
            Self::NormalLeft | Self::NormalRight => 250,
            Self::AnomalyBetween | Self::AnomalyAbove => 100,
        }
    }

    pub fn is_anomaly(self) -> bool {
        matches!(self, Self::AnomalyBetween | Self::AnomalyAbove)
    }

    pub const ALL: [SyntheticComponent; 4] = [
        Self::NormalLeft,
        Self::NormalRight,
        Self::AnomalyBetween,
        Self::AnomalyAbove,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub components: Vec<SyntheticComponent>,
    pub split: SplitSpec,
}

impl SyntheticData {
    pub fn partition(&self) -> Result<Partition> {
        self.split.materialize(&self.dataset)
    }
}

/// 500 normal and 200 anomalous points from a 2-D Gaussian mixture, split
/// with the default [`SplitOptions`]. Coordinates are left unscaled.
pub fn gen_synthetic<R: Rng + ?Sized>(rng: &mut R) -> Result<SyntheticData> {
    let mut data = Vec::new();
    let mut components = Vec::new();
    for comp in SyntheticComponent::ALL {
        let [mx, my] = comp.mean();
        let sd = comp.variance().sqrt();
        for _ in 0..comp.count() {
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            data.extend_from_slice(&[mx + sd * zx, my + sd * zy]);
            components.push(comp);
        }
    }
    let is_anomaly = components.iter().map(|c| c.is_anomaly()).collect();
    let mut dataset = Dataset::new(
        "synthetic",
        DenseMatrix::from_vec(components.len(), 2, data)?,
        is_anomaly,
    )?;
    dataset.attribute_names = vec!["x".into(), "y".into()];
    let split = make_splits_where(&dataset, &SplitOptions::default(), rng, |i| {
        components[i] == SyntheticComponent::AnomalyBetween
    })?;
    Ok(SyntheticData {
        dataset,
        components,
        split,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn splits_are_role_disjoint(seed in any::<u64>()) {
            let n = 250;
            let data = (0..n).flat_map(|i| [i as f64, 0.0]).collect();
            let flags = (0..n).map(|i| i % 5 == 0).collect();
            let ds = Dataset::new("p", DenseMatrix::from_vec(n, 2, data).unwrap(), flags).unwrap();
            let split = make_splits(&ds, &SplitOptions::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(split.validate(&ds).is_ok());
            prop_assert_eq!(split.all_indices().count(), n);
        }

        #[test]
        fn preprocessed_columns_span_unit_interval(
            rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 2..20)
        ) {
            let n = rows.len();
            let x = DenseMatrix::from_rows(&rows, 3).unwrap();
            let ds = Dataset::new("p", x, vec![false; n]).unwrap();
            let p = preprocess(&ds);
            for c in 0..3 {
                let col: Vec<f64> = (0..p.len()).map(|r| p.x.get(r, c)).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let constant = rows.iter().all(|r| r[c] == rows[0][c]);
                if constant {
                    prop_assert!(col.iter().all(|v| *v == 0.0));
                } else {
                    prop_assert_eq!((lo, hi), (0.0, 1.0));
                }
            }
        }
    }
}
