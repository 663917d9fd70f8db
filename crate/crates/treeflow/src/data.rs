//! Tabular datasets, preprocessing, and split construction for the
//! in-distribution, shifted, and out-of-distribution protocols.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeded_rng;

/// Feature matrix with integer class labels.
///
/// Construction validates shape, finiteness, and label range. The unit-range
/// invariant (all values in [0,1]) is established by the scaling operations,
/// not the constructor: the shift protocol needs raw-unit thresholds before
/// scaling statistics exist. Consumers that assume the unit grid call
/// [`Dataset::require_unit_range`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>, // row-major, num_rows x num_features
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    feature_names: Vec<String>,
    provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        num_features: usize,
        labels: Vec<usize>,
        num_classes: usize,
        feature_names: Vec<String>,
        provenance: String,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_features == 0 || features.len() != labels.len() * num_features {
            return Err(Error::BadParams("feature matrix shape"));
        }
        if feature_names.len() != num_features {
            return Err(Error::BadParams("feature name count"));
        }
        if num_classes < 2 {
            return Err(Error::BadLabels(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::BadLabels(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
            feature_names,
            provenance,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.num_features + feature]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn class_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.num_classes];
        for &c in &self.labels {
            hist[c] += 1;
        }
        hist
    }

    pub fn is_unit_range(&self) -> bool {
        self.features.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn require_unit_range(&self) -> Result<()> {
        if self.is_unit_range() {
            Ok(())
        } else {
            Err(Error::BadParams("features must lie in [0,1]; scale first"))
        }
    }

    /// Min-max scale every column over the full dataset.
    pub fn minmax_scaled(&self) -> Result<Dataset> {
        let n = self.num_rows();
        let d = self.num_features;
        let mut out = vec![0.0; n * d];
        for f in 0..d {
            let column: Vec<f64> = (0..n).map(|i| self.value(i, f)).collect();
            let scaled = minmax_scale(&column)?;
            for (i, v) in scaled.into_iter().enumerate() {
                out[i * d + f] = v;
            }
        }
        Dataset::new(
            out,
            d,
            self.labels.clone(),
            self.num_classes,
            self.feature_names.clone(),
            self.provenance.clone(),
        )
    }

    /// Rows at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize], provenance: String) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = self.num_features;
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            features,
            d,
            labels,
            self.num_classes,
            self.feature_names.clone(),
            provenance,
        )
    }
}

/// How a dataset is partitioned for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub shift: Option<ShiftSpec>,
}

/// Domain-shift partition: one feature and a raw-unit threshold; the flag
/// picks which side trains.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub feature: usize,
    pub threshold: f64,
    pub train_below: bool,
}

/// Deterministic shuffled split into (train, test) of sizes
/// (floor(n * fraction), remainder).
pub fn train_test_split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "train_fraction {} not in (0,1)",
            spec.train_fraction
        )));
    }
    let n = d.num_rows();
    let train_n = ((n as f64) * spec.train_fraction) as usize;
    if train_n == 0 || train_n == n {
        return Err(Error::DegenerateSplit(format!(
            "fraction {} leaves an empty partition of {n} rows",
            spec.train_fraction
        )));
    }
    let order = shuffled_indices(n, spec.seed);
    let mut train_idx: Vec<usize> = order[..train_n].to_vec();
    let mut test_idx: Vec<usize> = order[train_n..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = d.subset(&train_idx, format!("{}/train", d.provenance()))?;
    let test = d.subset(&test_idx, format!("{}/test", d.provenance()))?;
    Ok((train, test))
}

/// Row indices on each side of a raw threshold: (below, at_or_above) where
/// below means value < threshold.
pub fn shift_partition(
    d: &Dataset,
    feature: usize,
    threshold: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if feature >= d.num_features() {
        return Err(Error::BadFeature {
            index: feature,
            num_features: d.num_features(),
        });
    }
    if !threshold.is_finite() {
        return Err(Error::NonFinite("shift threshold"));
    }
    let mut below = Vec::new();
    let mut above = Vec::new();
    for i in 0..d.num_rows() {
        if d.value(i, feature) < threshold {
            below.push(i);
        } else {
            above.push(i);
        }
    }
    Ok((below, above))
}

/// Domain-shift protocol: rows on the training side of the threshold are
/// split into train and in-distribution test (test size = round(m * fraction),
/// deterministic shuffle from `seed`); all rows on the other side form the
/// out-of-distribution test set. Scaling statistics are computed on the train
/// partition only and applied to all three outputs, clamping tests to [0,1].
pub fn domain_shift_split(
    d: &Dataset,
    feature: usize,
    threshold: f64,
    id_test_fraction: f64,
    train_below: bool,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (below, above) = shift_partition(d, feature, threshold)?;
    let (in_dist, out_dist) = if train_below { (below, above) } else { (above, below) };
    if in_dist.is_empty() {
        return Err(Error::EmptyShiftSide(format!(
            "no rows on the training side of feature {feature} at {threshold}"
        )));
    }
    if out_dist.is_empty() {
        return Err(Error::EmptyShiftSide(format!(
            "no rows on the shifted side of feature {feature} at {threshold}"
        )));
    }
    if !(0.0..1.0).contains(&id_test_fraction) {
        return Err(Error::DegenerateSplit(format!(
            "id_test_fraction {id_test_fraction} not in [0,1)"
        )));
    }
    let m = in_dist.len();
    let id_test_n = libm::round((m as f64) * id_test_fraction) as usize;
    let train_n = m - id_test_n;
    if train_n == 0 || id_test_n == 0 {
        return Err(Error::DegenerateSplit(format!(
            "shift split of {m} in-distribution rows gives ({train_n}, {id_test_n})"
        )));
    }
    let order = shuffled_indices(m, seed);
    let mut train_idx: Vec<usize> = order[..train_n].iter().map(|&k| in_dist[k]).collect();
    let mut id_idx: Vec<usize> = order[train_n..].iter().map(|&k| in_dist[k]).collect();
    train_idx.sort_unstable();
    id_idx.sort_unstable();

    let prov = d.provenance();
    let train = d.subset(&train_idx, format!("{prov}/shift-train"))?;
    let test_id = d.subset(&id_idx, format!("{prov}/shift-test-id"))?;
    let test_ood = d.subset(&out_dist, format!("{prov}/shift-test-ood"))?;

    // Train-only scaling statistics, applied to all three partitions.
    let dft = train.num_features();
    let mut lo = vec![f64::INFINITY; dft];
    let mut hi = vec![f64::NEG_INFINITY; dft];
    for i in 0..train.num_rows() {
        for f in 0..dft {
            let v = train.value(i, f);
            lo[f] = lo[f].min(v);
            hi[f] = hi[f].max(v);
        }
    }
    let apply = |part: &Dataset| -> Result<Dataset> {
        let n = part.num_rows();
        let mut out = vec![0.0; n * dft];
        for i in 0..n {
            for f in 0..dft {
                let span = hi[f] - lo[f];
                let v = if span == 0.0 {
                    0.0
                } else {
                    (part.value(i, f) - lo[f]) / span
                };
                out[i * dft + f] = v.clamp(0.0, 1.0);
            }
        }
        Dataset::new(
            out,
            dft,
            part.labels().to_vec(),
            part.num_classes(),
            part.feature_names().to_vec(),
            String::from(part.provenance()),
        )
    };
    Ok((apply(&train)?, apply(&test_id)?, apply(&test_ood)?))
}

/// Scale one column to [0,1]; constant columns map to all-zeros.
pub fn minmax_scale(column: &[f64]) -> Result<Vec<f64>> {
    if column.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !column.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("column"));
    }
    let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span == 0.0 {
        return Ok(vec![0.0; column.len()]);
    }
    Ok(column.iter().map(|&v| (v - lo) / span).collect())
}

/// Kind of irrelevant filler feature for the hidden-XOR generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Binary,
    Real,
}

/// Synthetic task where the label is the XOR of two designated binary
/// features and every other feature is independent noise. The designated
/// pair occupies columns 0 and 1 (named `xor_a`, `xor_b`); the four XOR
/// input patterns are stratified across rows, then shuffled, so any n >= 4
/// covers all four patterns as evenly as possible.
pub fn gen_hidden_xor(
    n: usize,
    num_noise: usize,
    noise_kind: NoiseKind,
    seed: u64,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::TooFewRows { got: n, need: 4 });
    }
    let mut rng = seeded_rng(seed);
    const PATTERNS: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    let mut pattern_of_row: Vec<usize> = (0..n).map(|i| i % 4).collect();
    // Fisher-Yates on the pattern assignment.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        pattern_of_row.swap(i, j);
    }
    let d = 2 + num_noise;
    let mut features = vec![0.0; n * d];
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let (a, b) = PATTERNS[pattern_of_row[i]];
        features[i * d] = a;
        features[i * d + 1] = b;
        labels[i] = ((a as u8) ^ (b as u8)) as usize;
        for k in 0..num_noise {
            features[i * d + 2 + k] = match noise_kind {
                NoiseKind::Binary => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }
                NoiseKind::Real => rng.random::<f64>(),
            };
        }
    }
    let mut names = vec![String::from("xor_a"), String::from("xor_b")];
    for k in 0..num_noise {
        names.push(format!("noise_{k}"));
    }
    let kind = match noise_kind {
        NoiseKind::Binary => "binary",
        NoiseKind::Real => "real",
    };
    Dataset::new(
        features,
        d,
        labels,
        2,
        names,
        format!("hidden-xor(n={n},noise={num_noise},kind={kind},seed={seed})"),
    )
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
