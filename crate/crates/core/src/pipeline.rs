//! The progressive pseudo-labeling loop.
//!
//! After initialization on the labeled set, every iteration embeds all
//! samples with the current map, clusters the unlabeled set, selects the
//! reliable members under the growing threshold, assigns soft labels, expands
//! the classifier and refines the map on labeled plus pseudo-labeled rows.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::affinity::{ap_cluster, median_off_diagonal, ApConfig, ClusterAssignment};
use crate::embedding::{compute_similarity, pair_distances, EmbeddingSet, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_clustering, evaluate_retrieval, pseudo_label_accuracy, ClusteringScore,
    RetrievalResult,
};
use crate::refiner::{
    expand_classifier, feature_matrix, train_refiner, AugmentationData, LinearEmbedder,
    LossRecord, SoftmaxClassifier, TrainConfig, TrainingSet,
};
use crate::selection::{
    advance_schedule, assign_soft_labels, estimate_threshold, select_reliable, SelectionSchedule,
    ThresholdEstimate,
};
use crate::sgap::{adaptive_preference, sg_ap_cluster, PreferenceSearchConfig, RankingScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringMethod {
    /// Semantics-guided AP with the searched preference scalar.
    SgAp,
    /// Plain AP with the median similarity as uniform preference.
    ApMedian,
}

/// How the per-iteration threshold increment is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    /// `d_step = factor * tau_l` of the first iteration.
    Relative(f64),
    /// Fixed `d_step` in squared-distance units.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub total_iterations: usize,
    pub seed: u64,
    pub clustering: ClusteringMethod,
    pub ap: ApConfig,
    pub stall_window: usize,
    pub max_search_steps: usize,
    pub ranking_scope: RankingScope,
    /// Refinement run each iteration (the augmented term is not used there).
    pub train: TrainConfig,
    /// Epochs of the initialization run; other settings come from `train`.
    pub init_epochs: usize,
    /// Augmentation noise std as a multiple of the mean labeled intra-identity
    /// distance.
    pub perturbation_scale: f64,
    pub step: StepMode,
    pub bin_count: usize,
    pub re_search_p_each_iteration: bool,
    pub re_estimate_tau_each_iteration: bool,
    pub warm_start: bool,
    pub normalize: bool,
    pub cross_camera: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            total_iterations: 8,
            seed: 0,
            clustering: ClusteringMethod::SgAp,
            ap: ApConfig::default(),
            stall_window: 5,
            max_search_steps: 40,
            ranking_scope: RankingScope::LabeledOnly,
            train: TrainConfig::default(),
            init_epochs: 20,
            perturbation_scale: 0.05,
            step: StepMode::Relative(0.25),
            bin_count: 100,
            re_search_p_each_iteration: true,
            re_estimate_tau_each_iteration: true,
            warm_start: true,
            normalize: false,
            cross_camera: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::input(format!("config key '{key}': bad value '{value}': {e}")))
}

impl PipelineConfig {
    /// Every key accepted by [`PipelineConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "iterations",
        "seed",
        "clustering",
        "damping",
        "ap_max_iterations",
        "convergence_window",
        "stall_window",
        "max_search_steps",
        "ranking_scope",
        "p_identities",
        "k_per_identity",
        "margin",
        "learning_rate",
        "epochs",
        "init_epochs",
        "decay_every",
        "triplet_weight",
        "id_weight",
        "aug_weight",
        "perturbation_scale",
        "d_step_mode",
        "d_step",
        "bin_count",
        "re_search_p",
        "re_estimate_tau",
        "warm_start",
        "normalize",
        "cross_camera",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "iterations" => self.total_iterations = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "clustering" => {
                self.clustering = match v {
                    "sg-ap" => ClusteringMethod::SgAp,
                    "ap-median" => ClusteringMethod::ApMedian,
                    _ => return Err(Error::input(format!("unknown clustering '{v}'"))),
                }
            }
            "damping" => self.ap.damping = parse_value(key, v)?,
            "ap_max_iterations" => self.ap.max_iterations = parse_value(key, v)?,
            "convergence_window" => self.ap.convergence_window = parse_value(key, v)?,
            "stall_window" => self.stall_window = parse_value(key, v)?,
            "max_search_steps" => self.max_search_steps = parse_value(key, v)?,
            "ranking_scope" => {
                self.ranking_scope = match v {
                    "labeled-only" => RankingScope::LabeledOnly,
                    "joint" => RankingScope::Joint,
                    _ => return Err(Error::input(format!("unknown ranking scope '{v}'"))),
                }
            }
            "p_identities" => self.train.p_identities = parse_value(key, v)?,
            "k_per_identity" => self.train.k_per_identity = parse_value(key, v)?,
            "margin" => self.train.margin = parse_value(key, v)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, v)?,
            "epochs" => self.train.epochs = parse_value(key, v)?,
            "init_epochs" => self.init_epochs = parse_value(key, v)?,
            "decay_every" => self.train.decay_every = parse_value(key, v)?,
            "triplet_weight" => self.train.triplet_weight = parse_value(key, v)?,
            "id_weight" => self.train.id_weight = parse_value(key, v)?,
            "aug_weight" => self.train.aug_weight = parse_value(key, v)?,
            "perturbation_scale" => self.perturbation_scale = parse_value(key, v)?,
            "d_step_mode" => {
                let amount = match self.step {
                    StepMode::Relative(x) | StepMode::Absolute(x) => x,
                };
                self.step = match v {
                    "relative" => StepMode::Relative(amount),
                    "absolute" => StepMode::Absolute(amount),
                    _ => return Err(Error::input(format!("unknown d_step_mode '{v}'"))),
                }
            }
            "d_step" => {
                let amount: f64 = parse_value(key, v)?;
                self.step = match self.step {
                    StepMode::Relative(_) => StepMode::Relative(amount),
                    StepMode::Absolute(_) => StepMode::Absolute(amount),
                }
            }
            "bin_count" => self.bin_count = parse_value(key, v)?,
            "re_search_p" => self.re_search_p_each_iteration = parse_value(key, v)?,
            "re_estimate_tau" => self.re_estimate_tau_each_iteration = parse_value(key, v)?,
            "warm_start" => self.warm_start = parse_value(key, v)?,
            "normalize" => self.normalize = parse_value(key, v)?,
            "cross_camera" => self.cross_camera = parse_value(key, v)?,
            other => return Err(Error::input(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::input(format!("config line {}: expected 'key = value'", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut config = PipelineConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(Error::input("total iterations must be at least 1"));
        }
        if self.bin_count == 0 {
            return Err(Error::input("bin count must be positive"));
        }
        if !(self.perturbation_scale >= 0.0) {
            return Err(Error::input("perturbation scale must be non-negative"));
        }
        match self.step {
            StepMode::Relative(x) | StepMode::Absolute(x) if !(x >= 0.0 && x.is_finite()) => {
                return Err(Error::input("d_step must be finite and non-negative"))
            }
            _ => {}
        }
        self.ap.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    /// Mean total loss over the first epoch's batches.
    pub initial: f64,
    /// Mean total loss over the last epoch's batches.
    pub last: f64,
}

fn summarize(trace: &[LossRecord]) -> Option<LossSummary> {
    let first = trace.first()?.epoch;
    let last = trace.last()?.epoch;
    let mean = |epoch: usize| {
        let rows: Vec<f64> = trace
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.total)
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    Some(LossSummary {
        initial: mean(first),
        last: mean(last),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 0 for the post-initialization baseline.
    pub iteration: usize,
    pub p_star: Option<f64>,
    pub cluster_count: usize,
    pub exemplars: Vec<usize>,
    pub reliable_count: usize,
    pub tau: Option<f64>,
    pub pseudo_label_accuracy: Option<f64>,
    pub classifier_columns: usize,
    pub retrieval: Option<RetrievalResult>,
    pub clustering: Option<ClusteringScore>,
    pub loss: Option<LossSummary>,
}

/// Everything carried from one iteration to the next.
#[derive(Debug, Clone)]
pub struct PipelineState {
    iteration: usize,
    config: PipelineConfig,
    labeled: EmbeddingSet,
    unlabeled: EmbeddingSet,
    identities: Vec<u32>,
    embedder: LinearEmbedder,
    classifier: SoftmaxClassifier,
    schedule: Option<SelectionSchedule>,
    threshold: Option<ThresholdEstimate>,
    p_star: Option<f64>,
    last_assignment: Option<ClusterAssignment>,
    loss_trace: Vec<(usize, LossRecord)>,
}

impl PipelineState {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn embedder(&self) -> &LinearEmbedder {
        &self.embedder
    }

    pub fn classifier(&self) -> &SoftmaxClassifier {
        &self.classifier
    }

    pub fn labeled(&self) -> &EmbeddingSet {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &EmbeddingSet {
        &self.unlabeled
    }

    pub fn schedule(&self) -> Option<SelectionSchedule> {
        self.schedule
    }

    /// Most recent labeled-pair threshold estimate.
    pub fn threshold(&self) -> Option<&ThresholdEstimate> {
        self.threshold.as_ref()
    }

    pub fn last_assignment(&self) -> Option<&ClusterAssignment> {
        self.last_assignment.as_ref()
    }

    /// Training losses tagged with the iteration (0 = initialization).
    pub fn loss_trace(&self) -> &[(usize, LossRecord)] {
        &self.loss_trace
    }

    /// Applies the current map to any set with the input dimension.
    pub fn embed(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        let set = if self.config.normalize {
            set.l2_normalized()
        } else {
            set.clone()
        };
        self.embedder.embed_set(&set)
    }

    fn train_config(&self, epochs: usize, aug_weight: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            aug_weight,
            seed: self
                .config
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add(self.iteration as u64),
            ..self.config.train.clone()
        }
    }

    fn labeled_rows(&self, columns: usize) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
        let features = feature_matrix(&self.labeled);
        let mut targets = Array2::zeros((self.labeled.len(), columns));
        let ids: Vec<usize> = self
            .labeled
            .samples()
            .iter()
            .enumerate()
            .map(|(row, s)| {
                let id = s.label().expect("labeled sample carries a label");
                let col = self.identities.binary_search(&id).expect("known identity");
                targets[[row, col]] = 1.0;
                col
            })
            .collect();
        (features, ids, targets)
    }
}

fn mean_intra_identity_distance(labeled: &EmbeddingSet) -> Result<f64> {
    let pairs = pair_distances(labeled, true)?;
    if pairs.positive.is_empty() {
        return Err(Error::GuidanceUnavailable(
            "no labeled identity has two samples".into(),
        ));
    }
    Ok(pairs.positive.iter().map(|d| d.sqrt()).sum::<f64>() / pairs.positive.len() as f64)
}

/// Trains the initial map on the labeled set plus the augmented triplet term
/// over unlabeled perturbation pairs.
pub fn initialize(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    config: &PipelineConfig,
) -> Result<PipelineState> {
    config.validate()?;
    if labeled.samples().iter().any(|s| s.split() != Split::Labeled) {
        return Err(Error::input("labeled set contains non-labeled rows"));
    }
    if unlabeled.samples().iter().any(|s| s.split() != Split::Unlabeled) {
        return Err(Error::input("unlabeled set contains non-unlabeled rows"));
    }
    // Validates dimension agreement and identity disjointness.
    labeled.concat(unlabeled)?;
    let (labeled, unlabeled) = if config.normalize {
        (labeled.l2_normalized(), unlabeled.l2_normalized())
    } else {
        (labeled.clone(), unlabeled.clone())
    };
    let identities = labeled.label_set();
    if identities.len() < 2 {
        return Err(Error::GuidanceUnavailable(format!(
            "need at least 2 labeled identities, found {}",
            identities.len()
        )));
    }
    let dim = labeled.dim();
    let mut state = PipelineState {
        iteration: 0,
        config: config.clone(),
        embedder: LinearEmbedder::identity(dim),
        classifier: SoftmaxClassifier::new(&identities, dim)?,
        identities,
        schedule: None,
        threshold: None,
        p_star: None,
        last_assignment: None,
        loss_trace: Vec::new(),
        labeled,
        unlabeled,
    };

    let (features, triplet_ids, targets) = state.labeled_rows(state.classifier.num_classes());
    let augmentation = if config.train.aug_weight > 0.0 {
        Some(AugmentationData {
            labeled: features.clone(),
            unlabeled: feature_matrix(&state.unlabeled),
            perturbation_std: config.perturbation_scale
                * mean_intra_identity_distance(&state.labeled)?,
        })
    } else {
        None
    };
    let train_set = TrainingSet {
        features,
        triplet_ids,
        targets,
        augmentation,
    };
    let train_config = state.train_config(config.init_epochs, config.train.aug_weight);
    let (embedder, classifier, trace) =
        train_refiner(&state.embedder, &state.classifier, &train_set, &train_config)?;
    state.embedder = embedder;
    state.classifier = classifier;
    state.loss_trace.extend(trace.into_iter().map(|r| (0, r)));
    Ok(state)
}

/// Post-initialization baseline report (iteration 0).
pub fn baseline_report(state: &PipelineState) -> IterationReport {
    let losses: Vec<LossRecord> = state
        .loss_trace
        .iter()
        .filter(|(t, _)| *t == 0)
        .map(|(_, r)| *r)
        .collect();
    IterationReport {
        iteration: 0,
        p_star: None,
        cluster_count: 0,
        exemplars: Vec::new(),
        reliable_count: 0,
        tau: None,
        pseudo_label_accuracy: None,
        classifier_columns: state.classifier.num_classes(),
        retrieval: None,
        clustering: None,
        loss: summarize(&losses),
    }
}

fn cluster_unlabeled(
    state: &mut PipelineState,
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
) -> Result<(ClusterAssignment, f64)> {
    let config = &state.config;
    match config.clustering {
        ClusteringMethod::ApMedian => {
            let sim = compute_similarity(unlabeled)?;
            let p = median_off_diagonal(&sim);
            let assignment = ap_cluster(&sim.with_uniform_diagonal(p)?, &config.ap)?;
            Ok((assignment, p))
        }
        ClusteringMethod::SgAp => match state.p_star {
            Some(p) if !config.re_search_p_each_iteration => {
                let sim = compute_similarity(unlabeled)?;
                let assignment = ap_cluster(&adaptive_preference(&sim, p)?, &config.ap)?;
                Ok((assignment, p))
            }
            _ => {
                let search = PreferenceSearchConfig {
                    target_cluster_count: state.identities.len(),
                    stall_window: config.stall_window,
                    max_search_steps: config.max_search_steps,
                    initial_p: None,
                    scope: config.ranking_scope,
                };
                let (assignment, result) = sg_ap_cluster(labeled, unlabeled, &search, &config.ap)?;
                if !result.matched {
                    warn!(
                        "p* search stopped at {} labeled clusters for {} identities",
                        result.labeled_cluster_count, result.target_cluster_count
                    );
                }
                state.p_star = Some(result.p_star);
                Ok((assignment, result.p_star))
            }
        },
    }
}

/// One round of clustering, selection, pseudo-labeling and refinement.
pub fn run_iteration(mut state: PipelineState) -> Result<(PipelineState, IterationReport)> {
    if state.iteration >= state.config.total_iterations {
        return Err(Error::input(format!(
            "all {} iterations already run",
            state.config.total_iterations
        )));
    }
    let labeled = state.embedder.embed_set(&state.labeled)?;
    let unlabeled = state.embedder.embed_set(&state.unlabeled)?;

    let (assignment, p_star) = cluster_unlabeled(&mut state, &labeled, &unlabeled)?;

    if state.threshold.is_none() || state.config.re_estimate_tau_each_iteration {
        let pairs = pair_distances(&labeled, true)?;
        state.threshold = Some(estimate_threshold(
            &pairs.positive,
            &pairs.negative,
            state.config.bin_count,
        )?);
    }
    let tau_l = state.threshold.as_ref().expect("estimated above").tau_l;
    let schedule = match state.schedule {
        Some(s) => s,
        None => SelectionSchedule::new(match state.config.step {
            StepMode::Relative(f) => f * tau_l,
            StepMode::Absolute(d) => d,
        })?,
    };
    let tau = schedule.tau(tau_l);

    let selected = select_reliable(&unlabeled, &assignment, tau)?;
    if selected.is_empty() {
        warn!("no reliable unlabeled samples at tau = {tau}; training on labeled data only");
    }
    let pseudo = assign_soft_labels(&unlabeled, &assignment, &selected)?;

    let truth = state.unlabeled.ground_truth();
    let accuracy = if truth.iter().all(Option::is_some) {
        Some(pseudo_label_accuracy(&pseudo, &assignment, &truth)?)
    } else {
        None
    };
    let clustering = if truth.iter().all(Option::is_some) {
        let ids: Vec<u32> = truth.iter().map(|t| t.expect("checked")).collect();
        Some(evaluate_clustering(&assignment, &ids)?)
    } else {
        None
    };

    if !state.config.warm_start {
        state.embedder = LinearEmbedder::identity(state.labeled.dim());
        state.classifier = SoftmaxClassifier::new(&state.identities, state.labeled.dim())?;
    }
    let classifier = expand_classifier(&state.classifier.real_only(), &pseudo.exemplar_ids)?;
    let columns = classifier.num_classes();
    let real = state.identities.len();

    let (labeled_x, mut triplet_ids, labeled_t) = state.labeled_rows(columns);
    let unlabeled_x = feature_matrix(&state.unlabeled);
    let rows = labeled_x.nrows() + pseudo.len();
    let mut features = Array2::zeros((rows, labeled_x.ncols()));
    let mut targets = Array2::zeros((rows, columns));
    features
        .slice_mut(ndarray::s![..labeled_x.nrows(), ..])
        .assign(&labeled_x);
    targets
        .slice_mut(ndarray::s![..labeled_x.nrows(), ..])
        .assign(&labeled_t);
    for (k, &i) in pseudo.selected_indices.iter().enumerate() {
        let row = labeled_x.nrows() + k;
        features.row_mut(row).assign(&unlabeled_x.row(i));
        for (c, &y) in pseudo.soft_labels[k].iter().enumerate() {
            targets[[row, real + c]] = y;
        }
        triplet_ids.push(real + pseudo.cluster_columns[k]);
    }
    let train_set = TrainingSet {
        features,
        triplet_ids,
        targets,
        augmentation: None,
    };
    let train_config = state.train_config(state.config.train.epochs, 0.0);
    let (embedder, classifier, trace) =
        train_refiner(&state.embedder, &classifier, &train_set, &train_config)?;

    state.iteration += 1;
    state.embedder = embedder;
    state.classifier = classifier;
    state.schedule = Some(advance_schedule(schedule));
    state.last_assignment = Some(assignment.clone());
    let loss = summarize(&trace);
    let t = state.iteration;
    state.loss_trace.extend(trace.into_iter().map(|r| (t, r)));

    info!(
        "iteration {t}: p* = {p_star:.4}, {} clusters, {} reliable at tau = {tau:.4}",
        assignment.cluster_count(),
        pseudo.len()
    );
    let report = IterationReport {
        iteration: t,
        p_star: Some(p_star),
        cluster_count: assignment.cluster_count(),
        exemplars: assignment.exemplars.clone(),
        reliable_count: pseudo.len(),
        tau: Some(tau),
        pseudo_label_accuracy: accuracy,
        classifier_columns: columns,
        retrieval: None,
        clustering,
        loss,
    };
    Ok((state, report))
}

/// Reports plus the training losses of a full run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub reports: Vec<IterationReport>,
    pub loss_trace: Vec<(usize, LossRecord)>,
    pub final_state: PipelineState,
}

/// Initialization followed by `total_iterations` rounds, with held-out
/// retrieval evaluated after each (including the baseline).
pub fn run_pipeline(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    eval_query: &EmbeddingSet,
    eval_gallery: &EmbeddingSet,
    config: &PipelineConfig,
) -> Result<PipelineRun> {
    let evaluate = |state: &PipelineState| -> Result<RetrievalResult> {
        evaluate_retrieval(
            &state.embed(eval_query)?,
            &state.embed(eval_gallery)?,
            config.cross_camera,
        )
    };
    let mut state = initialize(labeled, unlabeled, config)?;
    let mut baseline = baseline_report(&state);
    baseline.retrieval = Some(evaluate(&state)?);
    let mut reports = vec![baseline];
    for _ in 0..config.total_iterations {
        let (next, mut report) = run_iteration(state)?;
        report.retrieval = Some(evaluate(&next)?);
        reports.push(report);
        state = next;
    }
    Ok(PipelineRun {
        reports,
        loss_trace: state.loss_trace.clone(),
        final_state: state,
    })
}

/// One line per report: the per-iteration curves.
pub fn curves_csv(reports: &[IterationReport]) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut out = String::from(
        "iteration,p_star,cluster_count,reliable_count,tau,pseudo_label_accuracy,rank1,map,nmi,ari\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            opt(r.p_star),
            r.cluster_count,
            r.reliable_count,
            opt(r.tau),
            opt(r.pseudo_label_accuracy),
            opt(r.retrieval.as_ref().map(|x| x.rank1)),
            opt(r.retrieval.as_ref().map(|x| x.map)),
            opt(r.clustering.as_ref().map(|x| x.nmi)),
            opt(r.clustering.as_ref().map(|x| x.ari)),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.total_iterations, 8);
        assert_eq!(c.stall_window, 5);
        assert_eq!(c.train.p_identities, 16);
        assert_eq!(c.train.k_per_identity, 4);
        assert!(c.re_search_p_each_iteration && c.re_estimate_tau_each_iteration && c.warm_start);
    }

    #[test]
    fn key_value_text_parses() {
        let mut c = PipelineConfig::default();
        c.apply_text(
            "# experiment\niterations = 3\nclustering = ap-median # baseline\n\nd_step_mode = absolute\nd_step = 1\nwarm_start=false\n",
        )
        .unwrap();
        assert_eq!(c.total_iterations, 3);
        assert_eq!(c.clustering, ClusteringMethod::ApMedian);
        assert_eq!(c.step, StepMode::Absolute(1.0));
        assert!(!c.warm_start);
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let samples = [
            ("clustering", "sg-ap"),
            ("ranking_scope", "joint"),
            ("d_step_mode", "relative"),
            ("re_search_p", "true"),
            ("re_estimate_tau", "true"),
            ("warm_start", "true"),
            ("normalize", "false"),
            ("cross_camera", "true"),
        ];
        for key in PipelineConfig::KEYS {
            let value = samples
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .unwrap_or("2");
            PipelineConfig::default().set(key, value).unwrap();
        }
    }

    #[test]
    fn bad_lines_are_rejected() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("iterations 3").is_err());
        assert!(c.apply_text("nonsense = 1").is_err());
        assert!(c.apply_text("iterations = many").is_err());
        c.total_iterations = 0;
        assert!(c.validate().is_err());
    }
}
