//! Trainable linear embedding map and expandable softmax classifier.
//!
//! Losses return their value together with the analytic gradient with respect
//! to their inputs; [`train_refiner`] chains those through the linear layers
//! and applies plain gradient descent with step decay.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Stacks the features of a set into an `N x D` matrix.
pub fn feature_matrix(set: &EmbeddingSet) -> Array2<f64> {
    let mut out = Array2::zeros((set.len(), set.dim()));
    for (mut row, f) in out.rows_mut().into_iter().zip(set.features()) {
        row.iter_mut().zip(f).for_each(|(o, v)| *o = *v);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedder {
    weight: Array2<f64>,
}

impl LinearEmbedder {
    pub fn identity(dim: usize) -> Self {
        LinearEmbedder {
            weight: Array2::eye(dim),
        }
    }

    /// Gaussian entries with variance `1 / d_in`.
    pub fn random(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("valid std");
        LinearEmbedder {
            weight: Array2::from_shape_fn((d_out, d_in), |_| normal.sample(&mut rng)),
        }
    }

    pub fn from_weight(weight: Array2<f64>) -> Result<Self> {
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::input("embedder weight must be non-empty"));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("embedder weight is not finite"));
        }
        Ok(LinearEmbedder { weight })
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    /// Row-wise map `x -> W x` of an `N x d_in` matrix.
    pub fn embed_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t())
    }

    pub fn embed_set(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        if set.dim() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                got: set.dim(),
            });
        }
        let w = &self.weight;
        set.map_features(|f| {
            w.rows()
                .into_iter()
                .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
                .collect()
        })
    }
}

/// Label of one classifier column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKey {
    /// A real labeled identity.
    Identity(u32),
    /// A pseudo-identity named by its exemplar's unlabeled-set index.
    Pseudo(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    weight: Array2<f64>,
    bias: Array1<f64>,
    class_map: Vec<ClassKey>,
}

impl SoftmaxClassifier {
    /// Zero-initialized classifier over real identities.
    pub fn new(identities: &[u32], dim: usize) -> Result<Self> {
        let class_map: Vec<ClassKey> = identities.iter().map(|&id| ClassKey::Identity(id)).collect();
        let mut sorted = class_map.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != class_map.len() {
            return Err(Error::input("duplicate identity in classifier"));
        }
        Ok(SoftmaxClassifier {
            weight: Array2::zeros((class_map.len(), dim)),
            bias: Array1::zeros(class_map.len()),
            class_map,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn class_map(&self) -> &[ClassKey] {
        &self.class_map
    }

    pub fn column_of(&self, key: ClassKey) -> Option<usize> {
        self.class_map.iter().position(|&k| k == key)
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn logits(&self, embeddings: &Array2<f64>) -> Array2<f64> {
        embeddings.dot(&self.weight.t()) + &self.bias
    }

    /// Drops every pseudo-identity column.
    pub fn real_only(&self) -> SoftmaxClassifier {
        let keep: Vec<usize> = self
            .class_map
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, ClassKey::Identity(_)))
            .map(|(i, _)| i)
            .collect();
        SoftmaxClassifier {
            weight: self.weight.select(Axis(0), &keep),
            bias: self.bias.select(Axis(0), &keep),
            class_map: keep.iter().map(|&i| self.class_map[i]).collect(),
        }
    }
}

/// Appends one zero-initialized column per exemplar.
pub fn expand_classifier(
    classifier: &SoftmaxClassifier,
    exemplar_ids: &[usize],
) -> Result<SoftmaxClassifier> {
    let mut class_map = classifier.class_map.clone();
    for &e in exemplar_ids {
        let key = ClassKey::Pseudo(e);
        if class_map.contains(&key) {
            return Err(Error::input(format!("pseudo identity {e} already present")));
        }
        class_map.push(key);
    }
    let c = class_map.len();
    let old = classifier.num_classes();
    let mut weight = Array2::zeros((c, classifier.dim()));
    weight
        .slice_mut(ndarray::s![..old, ..])
        .assign(&classifier.weight);
    let mut bias = Array1::zeros(c);
    bias.slice_mut(ndarray::s![..old]).assign(&classifier.bias);
    Ok(SoftmaxClassifier {
        weight,
        bias,
        class_map,
    })
}

fn row_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Adds `scale * (a - b) / |a - b|` to `grad_a` and subtracts it from `grad_b`.
/// Zero distance contributes nothing.
fn accumulate_distance_grad(
    x: &Array2<f64>,
    a: usize,
    b: usize,
    dist: f64,
    scale: f64,
    grad: &mut Array2<f64>,
) {
    if dist == 0.0 {
        return;
    }
    let dim = x.ncols();
    for d in 0..dim {
        let g = scale * (x[[a, d]] - x[[b, d]]) / dist;
        grad[[a, d]] += g;
        grad[[b, d]] -= g;
    }
}

/// Batch-hard triplet loss on Euclidean distances: for every anchor, the
/// farthest positive and the closest negative; mean hinge over anchors.
pub fn batch_hard_triplet_loss(
    embeddings: &Array2<f64>,
    identities: &[usize],
    margin: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    if identities.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: identities.len(),
        });
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &id in identities {
        *counts.entry(id).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::input("batch needs at least 2 identities"));
    }
    if let Some((id, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::input(format!("identity {id} has a single sample in the batch")));
    }

    let mut dist = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = row_distance(embeddings.row(i), embeddings.row(j));
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }

    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for a in 0..n {
        let mut hardest_pos = (usize::MAX, f64::NEG_INFINITY);
        let mut hardest_neg = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[[a, j]];
            if identities[j] == identities[a] {
                if d > hardest_pos.1 {
                    hardest_pos = (j, d);
                }
            } else if d < hardest_neg.1 {
                hardest_neg = (j, d);
            }
        }
        let hinge = hardest_pos.1 - hardest_neg.1 + margin;
        if hinge > 0.0 {
            total += hinge;
            accumulate_distance_grad(embeddings, a, hardest_pos.0, hardest_pos.1, scale, &mut grad);
            accumulate_distance_grad(embeddings, a, hardest_neg.0, hardest_neg.1, -scale, &mut grad);
        }
    }
    Ok((total * scale, grad))
}

/// Mean triplet hinge over explicit `(anchor, positive, negative)` rows.
/// Returns the loss and gradients for the three inputs.
pub fn triplet_hinge(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    negatives: &Array2<f64>,
    margin: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let n = anchors.nrows();
    if positives.dim() != anchors.dim() || negatives.dim() != anchors.dim() {
        return Err(Error::input("triplet inputs must share a shape"));
    }
    if n == 0 {
        return Err(Error::input("no triplets"));
    }
    let mut ga = Array2::zeros(anchors.raw_dim());
    let mut gp = Array2::zeros(anchors.raw_dim());
    let mut gn = Array2::zeros(anchors.raw_dim());
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let dp = row_distance(anchors.row(i), positives.row(i));
        let dn = row_distance(anchors.row(i), negatives.row(i));
        let hinge = dp - dn + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        for d in 0..anchors.ncols() {
            if dp > 0.0 {
                let g = scale * (anchors[[i, d]] - positives[[i, d]]) / dp;
                ga[[i, d]] += g;
                gp[[i, d]] -= g;
            }
            if dn > 0.0 {
                let g = scale * (anchors[[i, d]] - negatives[[i, d]]) / dn;
                ga[[i, d]] -= g;
                gn[[i, d]] += g;
            }
        }
    }
    Ok((total * scale, ga, gp, gn))
}

/// Mean cross-entropy between `softmax(logits)` and soft targets; the
/// gradient is `(softmax - target) / batch`.
pub fn soft_cross_entropy_loss(
    logits: &Array2<f64>,
    soft_targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != soft_targets.dim() {
        return Err(Error::input("logits and targets differ in shape"));
    }
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    for (i, row) in soft_targets.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::input(format!("target row {i} is not a distribution")));
        }
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for c in 0..logits.ncols() {
            let log_p = row[c] - log_z;
            let y = soft_targets[[i, c]];
            if y > 0.0 {
                total -= y * log_p;
            }
            grad[[i, c]] = (log_p.exp() - y) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Random draws behind the augmented triplet loss: one labeled negative per
/// unlabeled anchor and one Gaussian perturbation row per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationDraws {
    pub negatives: Vec<usize>,
    pub perturbation: Array2<f64>,
}

pub fn augmentation_draws(
    unlabeled_count: usize,
    labeled_count: usize,
    dim: usize,
    perturbation_std: f64,
    seed: u64,
) -> Result<AugmentationDraws> {
    if unlabeled_count == 0 || labeled_count == 0 {
        return Err(Error::input("augmented triplets need labeled and unlabeled samples"));
    }
    if !(perturbation_std >= 0.0 && perturbation_std.is_finite()) {
        return Err(Error::input("perturbation std must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negatives = Vec::with_capacity(unlabeled_count);
    let mut perturbation = Array2::zeros((unlabeled_count, dim));
    let normal = Normal::new(0.0, perturbation_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::input(e.to_string()))?;
    for i in 0..unlabeled_count {
        negatives.push(rng.random_range(0..labeled_count));
        if perturbation_std > 0.0 {
            for d in 0..dim {
                perturbation[[i, d]] = normal.sample(&mut rng);
            }
        }
    }
    Ok(AugmentationDraws {
        negatives,
        perturbation,
    })
}

/// Triplets `(u, u + noise, l)` with a random labeled negative per unlabeled
/// anchor. Returns the loss and gradients for the labeled and unlabeled batch.
pub fn augmented_triplet_loss(
    labeled: &Array2<f64>,
    unlabeled: &Array2<f64>,
    perturbation_std: f64,
    margin: f64,
    seed: u64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if labeled.ncols() != unlabeled.ncols() {
        return Err(Error::DimensionMismatch {
            expected: labeled.ncols(),
            got: unlabeled.ncols(),
        });
    }
    let draws = augmentation_draws(
        unlabeled.nrows(),
        labeled.nrows(),
        unlabeled.ncols(),
        perturbation_std,
        seed,
    )?;
    let positives = unlabeled + &draws.perturbation;
    let negatives = labeled.select(Axis(0), &draws.negatives);
    let (loss, ga, gp, gn) = triplet_hinge(unlabeled, &positives, &negatives, margin)?;
    let grad_unlabeled = ga + gp;
    let mut grad_labeled = Array2::zeros(labeled.raw_dim());
    for (row, &j) in draws.negatives.iter().enumerate() {
        let mut target = grad_labeled.row_mut(j);
        target += &gn.row(row);
    }
    Ok((loss, grad_labeled, grad_unlabeled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub p_identities: usize,
    pub k_per_identity: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub triplet_weight: f64,
    pub id_weight: f64,
    pub aug_weight: f64,
    /// Learning rate is divided by 10 every this many epochs.
    pub decay_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            p_identities: 16,
            k_per_identity: 4,
            margin: 0.3,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
            triplet_weight: 1.0,
            id_weight: 1.0,
            aug_weight: 1.0,
            decay_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_identities < 2 || self.k_per_identity < 2 {
            return Err(Error::input("need P >= 2 identities and K >= 2 samples per batch"));
        }
        if !(self.margin > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::input("margin must be positive and learning rate non-negative"));
        }
        if [self.triplet_weight, self.id_weight, self.aug_weight]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::input("loss weights must be non-negative"));
        }
        if self.decay_every == 0 {
            return Err(Error::input("decay interval must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.1f64.powi((epoch / self.decay_every) as i32)
    }
}

/// Unlabeled inputs for the augmented triplet term used during initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationData {
    pub labeled: Array2<f64>,
    pub unlabeled: Array2<f64>,
    pub perturbation_std: f64,
}

/// Training rows `{X^l, Y^l, X^r, Y^p}` as input features, mining identities
/// and soft targets over the classifier columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub triplet_ids: Vec<usize>,
    pub targets: Array2<f64>,
    pub augmentation: Option<AugmentationData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub triplet: f64,
    pub id: f64,
    pub aug: f64,
    pub total: f64,
}

/// Writes `(iteration, record)` rows.
pub fn write_loss_trace<W: Write>(trace: &[(usize, LossRecord)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,epoch,batch,triplet,id,aug,total")?;
    for (t, r) in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t, r.epoch, r.batch, r.triplet, r.id, r.aug, r.total
        )?;
    }
    Ok(())
}

/// Shape and class map of dumped parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterHeader {
    pub d_in: usize,
    pub d_out: usize,
    pub classes: usize,
    pub class_map: Vec<ClassKey>,
}

pub fn parameter_header(embedder: &LinearEmbedder, classifier: &SoftmaxClassifier) -> ParameterHeader {
    ParameterHeader {
        d_in: embedder.d_in(),
        d_out: embedder.d_out(),
        classes: classifier.num_classes(),
        class_map: classifier.class_map().to_vec(),
    }
}

/// One CSV row per matrix row.
pub fn write_matrix_csv<W: Write>(matrix: &Array2<f64>, mut out: W) -> std::io::Result<()> {
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

fn pk_batches(ids: &[usize], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &id) in ids.iter().enumerate() {
        members.entry(id).or_default().push(row);
    }
    let mut order: Vec<usize> = members.keys().copied().collect();
    order.shuffle(rng);
    order
        .chunks_exact(config.p_identities)
        .map(|chunk| {
            let mut batch = Vec::with_capacity(chunk.len() * config.k_per_identity);
            for id in chunk {
                let rows = &members[id];
                if rows.len() >= config.k_per_identity {
                    batch.extend(rows.choose_multiple(rng, config.k_per_identity).copied());
                } else {
                    for _ in 0..config.k_per_identity {
                        batch.push(rows[rng.random_range(0..rows.len())]);
                    }
                }
            }
            batch
        })
        .collect()
}

/// Epochs of PK-sampled gradient descent on
/// `triplet_weight * triplet + id_weight * soft CE (+ aug_weight * augmented)`.
pub fn train_refiner(
    embedder: &LinearEmbedder,
    classifier: &SoftmaxClassifier,
    train_set: &TrainingSet,
    config: &TrainConfig,
) -> Result<(LinearEmbedder, SoftmaxClassifier, Vec<LossRecord>)> {
    config.validate()?;
    let n = train_set.features.nrows();
    if train_set.features.ncols() != embedder.d_in() {
        return Err(Error::DimensionMismatch {
            expected: embedder.d_in(),
            got: train_set.features.ncols(),
        });
    }
    if classifier.dim() != embedder.d_out() {
        return Err(Error::DimensionMismatch {
            expected: embedder.d_out(),
            got: classifier.dim(),
        });
    }
    if train_set.triplet_ids.len() != n || train_set.targets.nrows() != n {
        return Err(Error::input("training rows, ids and targets differ in length"));
    }
    if train_set.targets.ncols() != classifier.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: classifier.num_classes(),
            got: train_set.targets.ncols(),
        });
    }
    let distinct = train_set
        .triplet_ids
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if distinct < config.p_identities {
        return Err(Error::input(format!(
            "{distinct} identities available, batch needs P = {}",
            config.p_identities
        )));
    }

    let mut w = embedder.weight.clone();
    let mut cw = classifier.weight.clone();
    let mut cb = classifier.bias.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        for (batch_index, rows) in pk_batches(&train_set.triplet_ids, config, &mut rng)
            .into_iter()
            .enumerate()
        {
            let x = train_set.features.select(Axis(0), &rows);
            let ids: Vec<usize> = rows.iter().map(|&r| train_set.triplet_ids[r]).collect();
            let targets = train_set.targets.select(Axis(0), &rows);
            let e = x.dot(&w.t());

            let mut grad_e = Array2::<f64>::zeros(e.raw_dim());
            let mut grad_w = Array2::<f64>::zeros(w.raw_dim());
            let mut grad_cw = Array2::<f64>::zeros(cw.raw_dim());
            let mut grad_cb = Array1::<f64>::zeros(cb.len());

            let mut triplet = 0.0;
            if config.triplet_weight > 0.0 {
                let (loss, g) = batch_hard_triplet_loss(&e, &ids, config.margin)?;
                triplet = loss;
                grad_e.scaled_add(config.triplet_weight, &g);
            }

            let mut id = 0.0;
            if config.id_weight > 0.0 {
                let logits = e.dot(&cw.t()) + &cb;
                let (loss, g) = soft_cross_entropy_loss(&logits, &targets)?;
                id = loss;
                grad_e.scaled_add(config.id_weight, &g.dot(&cw));
                grad_cw.scaled_add(config.id_weight, &g.t().dot(&e));
                grad_cb.scaled_add(config.id_weight, &g.sum_axis(Axis(0)));
            }

            let mut aug = 0.0;
            if config.aug_weight > 0.0 {
                if let Some(data) = &train_set.augmentation {
                    let count = rows.len().min(data.unlabeled.nrows());
                    let picked: Vec<usize> =
                        rand::seq::index::sample(&mut rng, data.unlabeled.nrows(), count).into_vec();
                    let u = data.unlabeled.select(Axis(0), &picked);
                    let draws = augmentation_draws(
                        count,
                        data.labeled.nrows(),
                        u.ncols(),
                        data.perturbation_std,
                        rng.random(),
                    )?;
                    let u_pos = &u + &draws.perturbation;
                    let l_neg = data.labeled.select(Axis(0), &draws.negatives);
                    let (ea, ep, en) = (u.dot(&w.t()), u_pos.dot(&w.t()), l_neg.dot(&w.t()));
                    let (loss, ga, gp, gn) = triplet_hinge(&ea, &ep, &en, config.margin)?;
                    aug = loss;
                    grad_w.scaled_add(config.aug_weight, &ga.t().dot(&u));
                    grad_w.scaled_add(config.aug_weight, &gp.t().dot(&u_pos));
                    grad_w.scaled_add(config.aug_weight, &gn.t().dot(&l_neg));
                }
            }

            let total =
                config.triplet_weight * triplet + config.id_weight * id + config.aug_weight * aug;
            if !total.is_finite() {
                return Err(Error::NumericalFailure { sweep: epoch });
            }
            trace.push(LossRecord {
                epoch,
                batch: batch_index,
                triplet,
                id,
                aug,
                total,
            });

            if lr > 0.0 {
                grad_w += &grad_e.t().dot(&x);
                w.scaled_add(-lr, &grad_w);
                cw.scaled_add(-lr, &grad_cw);
                cb.scaled_add(-lr, &grad_cb);
            }
        }
    }

    if w.iter().chain(cw.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure {
            sweep: config.epochs,
        });
    }
    Ok((
        LinearEmbedder { weight: w },
        SoftmaxClassifier {
            weight: cw,
            bias: cb,
            class_map: classifier.class_map.clone(),
        },
        trace,
    ))
}
