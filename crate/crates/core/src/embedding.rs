//! Embedding data model, pairwise similarity, CSV ingestion and synthetic
//! dataset generation.
//!
//! Ground-truth identities of unlabeled samples are carried through so that
//! evaluation can score pseudo-labels, but they are only reachable through
//! [`Sample::ground_truth`]. Clustering and selection code reads
//! [`Sample::label`], which is `None` for every unlabeled row.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::input(format!("unknown split '{other}'"))),
        }
    }
}

/// One embedding vector with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    feature: Vec<f64>,
    identity: Option<u32>,
    camera: Option<u32>,
    split: Split,
}

impl Sample {
    pub fn new(
        feature: Vec<f64>,
        identity: Option<u32>,
        camera: Option<u32>,
        split: Split,
    ) -> Result<Self> {
        if feature.is_empty() {
            return Err(Error::input("feature vector is empty"));
        }
        if let Some(pos) = feature.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("feature entry {pos} is not finite")));
        }
        if split == Split::Labeled && identity.is_none() {
            return Err(Error::input("labeled sample without identity"));
        }
        Ok(Sample {
            feature,
            identity,
            camera,
            split,
        })
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    /// Identity visible to training code: `None` for unlabeled samples.
    pub fn label(&self) -> Option<u32> {
        match self.split {
            Split::Unlabeled => None,
            _ => self.identity,
        }
    }

    /// Ground-truth identity including hidden unlabeled truth. Evaluation only.
    pub fn ground_truth(&self) -> Option<u32> {
        self.identity
    }

    pub fn camera(&self) -> Option<u32> {
        self.camera
    }

    pub fn split(&self) -> Split {
        self.split
    }

    fn with_feature(&self, feature: Vec<f64>) -> Sample {
        Sample {
            feature,
            identity: self.identity,
            camera: self.camera,
            split: self.split,
        }
    }
}

/// Ordered, non-empty collection of samples sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    samples: Vec<Sample>,
    dim: usize,
}

impl EmbeddingSet {
    /// Validates dimensions and the labeled/unlabeled disjoint-identity rule.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.feature.len())
            .ok_or_else(|| Error::input("embedding set is empty"))?;
        for s in &samples {
            if s.feature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.feature.len(),
                });
            }
        }
        check_disjoint(&samples).map_err(|(identity, row)| Error::DisjointIdentity {
            identity,
            row: row + 1,
        })?;
        Ok(EmbeddingSet { samples, dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.samples[index].feature
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.feature.as_slice())
    }

    /// Samples of one split, in original order.
    pub fn select(&self, split: Split) -> Result<EmbeddingSet> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect();
        if samples.is_empty() {
            return Err(Error::input(format!("no {split} samples")));
        }
        Ok(EmbeddingSet {
            samples,
            dim: self.dim,
        })
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.samples.iter().any(|s| s.split == split)
    }

    /// Concatenation of two sets; validates the union.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        EmbeddingSet::new(samples)
    }

    /// Distinct visible labels in ascending order.
    pub fn label_set(&self) -> Vec<u32> {
        self.samples
            .iter()
            .filter_map(Sample::label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Ground-truth identities, evaluation only.
    pub fn ground_truth(&self) -> Vec<Option<u32>> {
        self.samples.iter().map(Sample::ground_truth).collect()
    }

    /// Applies `map` to every feature vector, keeping metadata.
    pub fn map_features<F>(&self, mut map: F) -> Result<EmbeddingSet>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let feature = map(&s.feature);
                if feature.is_empty() || feature.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Degenerate(
                        "feature map produced an empty or non-finite vector".into(),
                    ));
                }
                Ok(s.with_feature(feature))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::new(samples)
    }

    /// Scales every feature to unit L2 norm. Zero vectors stay zero.
    pub fn l2_normalized(&self) -> EmbeddingSet {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let norm = s.feature.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    s.clone()
                } else {
                    s.with_feature(s.feature.iter().map(|v| v / norm).collect())
                }
            })
            .collect();
        EmbeddingSet {
            samples,
            dim: self.dim,
        }
    }
}

fn check_disjoint(samples: &[Sample]) -> std::result::Result<(), (u32, usize)> {
    let labeled: BTreeSet<u32> = samples
        .iter()
        .filter(|s| s.split == Split::Labeled)
        .filter_map(|s| s.identity)
        .collect();
    for (row, s) in samples.iter().enumerate() {
        if s.split == Split::Unlabeled {
            if let Some(id) = s.identity {
                if labeled.contains(&id) {
                    return Err((id, row));
                }
            }
        }
    }
    Ok(())
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Dense N×N similarity matrix; the diagonal holds preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a matrix from row-major values.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::input("similarity matrix needs at least 2 rows"));
        }
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("similarity matrix has non-finite entries"));
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Off-diagonal entries in row-major order.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n;
        self.values
            .iter()
            .enumerate()
            .filter(move |(idx, _)| idx / n != idx % n)
            .map(|(_, v)| *v)
    }

    pub fn with_diagonal(&self, diagonal: &[f64]) -> Result<SimilarityMatrix> {
        if diagonal.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: diagonal.len(),
            });
        }
        if diagonal.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("preference is not finite"));
        }
        let mut out = self.clone();
        for (i, p) in diagonal.iter().enumerate() {
            out.values[i * self.n + i] = *p;
        }
        Ok(out)
    }

    pub fn with_uniform_diagonal(&self, value: f64) -> Result<SimilarityMatrix> {
        self.with_diagonal(&vec![value; self.n])
    }

    /// Principal submatrix over `indices`, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Result<SimilarityMatrix> {
        if indices.len() < 2 {
            return Err(Error::input("submatrix needs at least 2 indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::input(format!("index {bad} out of range")));
        }
        let m = indices.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in indices {
            for &j in indices {
                values.push(self.get(i, j));
            }
        }
        Ok(SimilarityMatrix { n: m, values })
    }
}

/// Negative squared Euclidean distances off the diagonal; zero diagonal.
pub fn compute_similarity(embeddings: &EmbeddingSet) -> Result<SimilarityMatrix> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::input(format!(
            "similarity needs at least 2 samples, got {n}"
        )));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let fi = embeddings.feature(i);
        for j in (i + 1)..n {
            let s = -squared_distance(fi, embeddings.feature(j));
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Squared distances of same-identity and different-identity pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairDistances {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Pair distances among samples with a known identity.
///
/// With `labeled_only` the visible labels of the labeled split are used; without
/// it every sample carrying ground truth participates (evaluation use).
pub fn pair_distances(embeddings: &EmbeddingSet, labeled_only: bool) -> Result<PairDistances> {
    let members: Vec<(u32, &[f64])> = embeddings
        .samples()
        .iter()
        .filter_map(|s| {
            let id = if labeled_only {
                if s.split() == Split::Labeled {
                    s.label()
                } else {
                    None
                }
            } else {
                s.ground_truth()
            };
            id.map(|id| (id, s.feature()))
        })
        .collect();
    let distinct: BTreeSet<u32> = members.iter().map(|(id, _)| *id).collect();
    if distinct.len() < 2 {
        return Err(Error::GuidanceUnavailable(format!(
            "need at least 2 labeled identities, found {}",
            distinct.len()
        )));
    }
    let mut out = PairDistances::default();
    for (i, (id_i, f_i)) in members.iter().enumerate() {
        for (id_j, f_j) in &members[i + 1..] {
            let d = squared_distance(f_i, f_j);
            if id_i == id_j {
                out.positive.push(d);
            } else {
                out.negative.push(d);
            }
        }
    }
    Ok(out)
}

const FIXED_COLUMNS: [&str; 3] = ["id", "split", "camera"];

fn parse_optional_u32(field: &str, name: &str) -> std::result::Result<Option<u32>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<u32>()
        .map(Some)
        .map_err(|e| format!("bad {name} '{field}': {e}"))
}

/// Reads the `id,split,camera,f0,...,f{D-1}` CSV format.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| load_err(0, e.to_string()))?
        .clone();
    if headers.len() < 4 {
        return Err(load_err(0, "header needs id,split,camera and at least one feature".into()));
    }
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if headers[i].trim() != *expected {
            return Err(load_err(
                0,
                format!("header column {i} is '{}', expected '{expected}'", &headers[i]),
            ));
        }
    }
    for (k, name) in headers.iter().skip(3).enumerate() {
        if name.trim() != format!("f{k}") {
            return Err(load_err(0, format!("feature column '{name}' should be 'f{k}'")));
        }
    }
    let dim = headers.len() - 3;

    let mut samples = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| load_err(row, e.to_string()))?;
        if record.len() != dim + 3 {
            return Err(load_err(
                row,
                format!("expected {} features, found {}", dim, record.len().saturating_sub(3)),
            ));
        }
        let identity = parse_optional_u32(&record[0], "id").map_err(|m| load_err(row, m))?;
        let split: Split = record[1]
            .parse()
            .map_err(|e: Error| load_err(row, e.to_string()))?;
        let camera = parse_optional_u32(&record[2], "camera").map_err(|m| load_err(row, m))?;
        let feature = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(k, field)| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| load_err(row, format!("feature f{k} '{field}': {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if split != Split::Unlabeled && identity.is_none() {
            return Err(load_err(row, format!("{split} row without id")));
        }
        let sample =
            Sample::new(feature, identity, camera, split).map_err(|e| load_err(row, e.to_string()))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(load_err(0, "no data rows".into()));
    }
    EmbeddingSet::new(samples).map_err(|e| match e {
        Error::DisjointIdentity { identity, row } => load_err(
            row,
            format!("identity {identity} is labeled elsewhere but appears as unlabeled ground truth"),
        ),
        other => other,
    })
}

/// Writes the CSV format read by [`load_embeddings`]. Floats use the shortest
/// round-trip representation so loading is bit-exact.
pub fn save_embeddings(embeddings: &EmbeddingSet, path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..embeddings.dim()).map(|k| format!("f{k}")));
    writer.write_record(&header).map_err(|e| io_err(e.into()))?;
    for s in embeddings.samples() {
        let mut record = vec![
            s.identity.map(|v| v.to_string()).unwrap_or_default(),
            s.split.to_string(),
            s.camera.map(|v| v.to_string()).unwrap_or_default(),
        ];
        record.extend(s.feature.iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(|e| io_err(e.into()))?;
    }
    writer.flush().map_err(io_err)
}

/// Parameters of a synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Training identities (labeled plus unlabeled).
    pub identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub intra_std: f64,
    /// Minimum distance between any two identity centers.
    pub spacing: f64,
    pub labeled_fraction: f64,
    pub seed: u64,
    /// Centers vary only in the first `signal_dim` coordinates; the remaining
    /// coordinates carry pure noise. `None` means all `dim` coordinates.
    pub signal_dim: Option<usize>,
    /// Extra held-out identities emitted as query (first sample) and gallery rows.
    pub test_identities: usize,
    pub cameras: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identities: 10,
            samples_per_identity: 10,
            dim: 8,
            intra_std: 1.0,
            spacing: 10.0,
            labeled_fraction: 0.5,
            seed: 0,
            signal_dim: None,
            test_identities: 0,
            cameras: 2,
        }
    }
}

impl SyntheticSpec {
    pub fn labeled_identities(&self) -> usize {
        (self.labeled_fraction * self.identities as f64).round() as usize
    }
}

fn place_centers(rng: &mut ChaCha8Rng, count: usize, dims: usize, spacing: f64) -> Vec<Vec<f64>> {
    let mut side = spacing * 2.0 * (count.max(2) as f64).powf(1.0 / dims as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut failures = 0;
    while centers.len() < count {
        let candidate: Vec<f64> = (0..dims).map(|_| rng.random::<f64>() * side).collect();
        let ok = centers
            .iter()
            .all(|c| squared_distance(c, &candidate) >= spacing * spacing);
        if ok {
            centers.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures >= 200 {
                side *= 1.25;
                failures = 0;
            }
        }
    }
    centers
}

/// Deterministic blobs around well-spaced identity centers.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingSet> {
    if spec.identities == 0 || spec.samples_per_identity == 0 || spec.dim == 0 {
        return Err(Error::input("identity count, samples per identity and dim must be positive"));
    }
    if !(spec.labeled_fraction > 0.0 && spec.labeled_fraction < 1.0) {
        return Err(Error::input("labeled fraction must lie in (0, 1)"));
    }
    if !(spec.intra_std >= 0.0 && spec.intra_std.is_finite()) {
        return Err(Error::input("intra-cluster std must be finite and non-negative"));
    }
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) {
        return Err(Error::input("spacing must be positive"));
    }
    let signal_dim = spec.signal_dim.unwrap_or(spec.dim);
    if signal_dim == 0 || signal_dim > spec.dim {
        return Err(Error::input("signal dim must lie in 1..=dim"));
    }
    let n_labeled = spec.labeled_identities();
    if n_labeled == 0 {
        return Err(Error::input(format!(
            "labeled fraction {} of {} identities yields no labeled identity",
            spec.labeled_fraction, spec.identities
        )));
    }
    let cameras = spec.cameras.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total_ids = spec.identities + spec.test_identities;
    let centers = place_centers(&mut rng, total_ids, signal_dim, spec.spacing);
    let noise = Normal::new(0.0, spec.intra_std).map_err(|e| Error::input(e.to_string()))?;

    let mut samples = Vec::with_capacity(total_ids * spec.samples_per_identity);
    for (idx, center) in centers.iter().enumerate() {
        let identity = idx as u32 + 1;
        for j in 0..spec.samples_per_identity {
            let split = if idx < n_labeled {
                Split::Labeled
            } else if idx < spec.identities {
                Split::Unlabeled
            } else if j == 0 {
                Split::Query
            } else {
                Split::Gallery
            };
            let feature: Vec<f64> = (0..spec.dim)
                .map(|k| {
                    let base = if k < signal_dim { center[k] } else { 0.0 };
                    if spec.intra_std == 0.0 {
                        base
                    } else {
                        base + noise.sample(&mut rng)
                    }
                })
                .collect();
            let camera = j as u32 % cameras;
            samples.push(Sample::new(feature, Some(identity), Some(camera), split)?);
        }
    }
    EmbeddingSet::new(samples)
}
