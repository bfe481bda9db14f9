//! Task-space pipeline: confidence-weighted prototypes, task class-relation
//! graphs, optimal-transport confidences, label-distribution amendment and
//! training with the mixed one-hot / distribution loss.
//!
//! Every amendment epoch runs, in order and over the full training set:
//! feature extraction, prototypes from the previous round's confidences
//! (all ones on the first round), task graphs, confidences against the cached
//! semantic graphs, and amended distributions from the same prototypes. The
//! minibatch updates of that epoch then train against the amended targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::embeddings::EmotionVocabulary;
use crate::error::{Error, Result};
use crate::nn::layer::{DenseGrads, DenseLayer};
use crate::nn::linalg::{argmax, check_len, norm, squared_distance, Matrix};
use crate::nn::loss::{check_simplex, cosine_similarity, cross_entropy, one_hot, softmax};
use crate::nn::{Activation, ForwardCache, MlpGrads, MlpNetwork, Optimizer, OptimizerConfig};
use crate::semantic::{semantic_crgraph, semantic_graphs, AutoEncoder};
use crate::transport::{confidence, CrGraph, GroundCost, GroundCostKind};

/// Feature extractor followed by a linear classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub backbone: MlpNetwork,
    pub head: DenseLayer,
}

/// One forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct TaskForward {
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGrads {
    pub backbone: MlpGrads,
    pub head: DenseGrads,
}

impl TaskGrads {
    pub fn zeros_like(model: &TaskModel) -> Self {
        Self {
            backbone: MlpGrads::zeros_like(&model.backbone),
            head: DenseGrads::zeros_like(&model.head),
        }
    }

    /// Same layout as [`TaskModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.backbone.flatten();
        self.head.write_flat(&mut out);
        out
    }
}

impl TaskModel {
    pub fn from_parts(backbone: MlpNetwork, head: DenseLayer) -> Result<Self> {
        check_len("head input", backbone.out_dim(), head.in_dim())?;
        if head.activation != Activation::Identity {
            return Err(Error::InvalidConfig("classification head must be linear".into()));
        }
        Ok(Self { backbone, head })
    }

    /// Backbone `input → hidden… → feature_dim` (ReLU hidden layers,
    /// `feature_activation` on the features) and a linear head to `classes`
    /// logits, initialized from `ChaCha8Rng(seed)`.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        feature_activation: Activation,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(feature_dim);
        let backbone = MlpNetwork::new(&sizes, Activation::Relu, feature_activation, &mut rng)?;
        let head = DenseLayer::glorot(feature_dim, classes, Activation::Identity, &mut rng);
        Self::from_parts(backbone, head)
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.out_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.backbone.predict(x)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.backbone.predict(x)?;
        Ok(self.head.forward(&f).1)
    }

    pub fn forward(&self, x: &[f64]) -> Result<TaskForward> {
        let (features, cache) = self.backbone.forward(x)?;
        let logits = self.head.forward(&features).1;
        Ok(TaskForward {
            features,
            logits,
            cache,
        })
    }

    /// Accumulates the gradients of a loss with `dL/dlogits = d_logits`.
    pub fn backward(&self, pass: &TaskForward, d_logits: &[f64], grads: &mut TaskGrads) -> Result<()> {
        check_len("logit gradient", self.classes(), d_logits.len())?;
        // Linear head: pre-activation equals output.
        let d_features = self.head.backward(
            &pass.features,
            &pass.logits,
            &pass.logits,
            d_logits,
            &mut grads.head,
        );
        self.backbone
            .backward_into(&pass.cache, &d_features, &mut grads.backbone)?;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.backbone.params();
        self.head.write_params(&mut p);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("task model parameters", self.num_params(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("task model parameters"));
        }
        let (bb, head) = params.split_at(self.backbone.num_params());
        self.backbone.set_params(bb)?;
        self.head.read_params(head);
        Ok(())
    }
}

/// Feature matrix, one row `f(x_i)` per sample.
pub fn extract_features(model: &TaskModel, dataset: &Dataset) -> Result<Matrix> {
    check_len("dataset features", model.input_dim(), dataset.dim())?;
    let mut out = Matrix::zeros(dataset.len(), model.feature_dim());
    for (i, s) in dataset.samples().iter().enumerate() {
        out.row_mut(i).copy_from_slice(&model.features(&s.x)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// `p_k = (1/n_k) Σ α_i f(x_i)`: the confidence-weighted sum over the class size.
    #[serde(rename = "literal_eq4")]
    CountNormalized,
    /// `p_k = Σ α_i f(x_i) / Σ α_i`.
    #[default]
    WeightedMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub centers: Matrix,
    pub mode: PrototypeMode,
    /// `false` for classes without members; their centers are zero and unusable.
    pub valid: Vec<bool>,
}

impl Prototypes {
    pub fn classes(&self) -> usize {
        self.centers.rows()
    }

    /// Zero-based indices of classes with a usable center.
    pub fn valid_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&k| self.valid[k]).collect()
    }

    /// 1-based labels of classes without members.
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.classes())
            .filter(|&k| !self.valid[k])
            .map(|k| k + 1)
            .collect()
    }

    pub fn require_complete(&self) -> Result<()> {
        match self.valid.iter().position(|v| !v) {
            Some(k) => Err(Error::EmptyClass(k + 1)),
            None => Ok(()),
        }
    }
}

/// Confidence-weighted class centers. Classes without members come back
/// flagged invalid rather than as an error, so that a training epoch can skip
/// them; [`Prototypes::require_complete`] turns that into
/// [`Error::EmptyClass`].
pub fn compute_prototypes(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    alpha: &[f64],
    mode: PrototypeMode,
) -> Result<Prototypes> {
    check_len("prototype labels", features.rows(), labels.len())?;
    check_len("prototype confidences", features.rows(), alpha.len())?;
    if let Some(&a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "confidences must be positive and finite, got {a}"
        )));
    }
    let mut centers = Matrix::zeros(classes, features.cols());
    let mut weight = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for ((row, &label), &a) in features.iter_rows().zip(labels).zip(alpha) {
        if label == 0 || label > classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let k = label - 1;
        crate::nn::linalg::axpy(a, row, centers.row_mut(k));
        weight[k] += a;
        count[k] += 1;
    }
    for k in 0..classes {
        let divisor = match mode {
            PrototypeMode::WeightedMean => weight[k],
            PrototypeMode::CountNormalized => count[k] as f64,
        };
        if count[k] > 0 {
            centers.row_mut(k).iter_mut().for_each(|v| *v /= divisor);
        }
    }
    Ok(Prototypes {
        centers,
        mode,
        valid: count.iter().map(|&n| n > 0).collect(),
    })
}

/// `S_t[k] = cos(p_k, f)` over all classes.
pub fn task_crgraph(prototypes: &Prototypes, f: &[f64]) -> Result<CrGraph> {
    prototypes.require_complete()?;
    task_crgraph_over(prototypes, f, &(0..prototypes.classes()).collect::<Vec<_>>())
}

/// Task graph restricted to `classes` (zero-based), in that order.
pub fn task_crgraph_over(prototypes: &Prototypes, f: &[f64], classes: &[usize]) -> Result<CrGraph> {
    check_len("task feature", prototypes.centers.cols(), f.len())?;
    if norm(f) == 0.0 {
        return Err(Error::ZeroNorm("task feature"));
    }
    classes
        .iter()
        .map(|&k| {
            if !prototypes.valid[k] {
                return Err(Error::EmptyClass(k + 1));
            }
            cosine_similarity(prototypes.centers.row(k), f).map_err(|e| match e {
                Error::ZeroNorm(_) => Error::ZeroNorm("prototype"),
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()
        .map(CrGraph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaNormalization {
    Raw,
    /// Divide each confidence by the mean confidence of its labelled class.
    #[default]
    ClassMeanOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector {
    /// Normalized per `normalization`.
    pub alpha: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalization: AlphaNormalization,
    /// Mean raw confidence per class (1.0 for classes without members).
    pub class_means: Vec<f64>,
}

impl ConfidenceVector {
    pub fn ones(n: usize, classes: usize, normalization: AlphaNormalization) -> Self {
        Self {
            alpha: vec![1.0; n],
            raw: vec![1.0; n],
            normalization,
            class_means: vec![1.0; classes],
        }
    }
}

/// Raw confidence `1 / (W + ε)` per sample, then the configured normalization.
pub fn compute_confidences(
    semantic: &[CrGraph],
    task: &[CrGraph],
    labels: &[usize],
    classes: usize,
    epsilon: f64,
    cost: &GroundCost,
    normalization: AlphaNormalization,
) -> Result<ConfidenceVector> {
    check_len("confidence graph counts", semantic.len(), task.len())?;
    check_len("confidence labels", semantic.len(), labels.len())?;
    let raw = semantic
        .iter()
        .zip(task)
        .map(|(s, t)| confidence(s, t, epsilon, cost))
        .collect::<Result<Vec<f64>>>()?;
    normalize_confidences(raw, labels, classes, normalization)
}

pub fn normalize_confidences(
    raw: Vec<f64>,
    labels: &[usize],
    classes: usize,
    normalization: AlphaNormalization,
) -> Result<ConfidenceVector> {
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (&a, &label) in raw.iter().zip(labels) {
        if label == 0 || label > classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        sums[label - 1] += a;
        counts[label - 1] += 1;
    }
    let class_means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 1.0 })
        .collect();
    let alpha = match normalization {
        AlphaNormalization::Raw => raw.clone(),
        AlphaNormalization::ClassMeanOne => raw
            .iter()
            .zip(labels)
            .map(|(&a, &label)| a / class_means[label - 1])
            .collect(),
    };
    Ok(ConfidenceVector {
        alpha,
        raw,
        normalization,
        class_means,
    })
}

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution(pub Vec<f64>);

impl LabelDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Zero-based classes sorted by decreasing probability (ties by index).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx
    }
}

/// `l_k ∝ 1 / (‖f − p_k‖² + ε)`, normalized to sum one. Classes flagged
/// invalid in `prototypes` receive zero mass.
pub fn amend_distribution(f: &[f64], prototypes: &Prototypes, epsilon: f64) -> Result<LabelDistribution> {
    check_len("amended feature", prototypes.centers.cols(), f.len())?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "distance epsilon must be positive, got {epsilon}"
        )));
    }
    if !prototypes.valid.iter().any(|&v| v) {
        return Err(Error::EmptyClass(1));
    }
    let weights: Vec<f64> = (0..prototypes.classes())
        .map(|k| {
            if prototypes.valid[k] {
                1.0 / (squared_distance(f, prototypes.centers.row(k)) + epsilon)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("label distribution"));
    }
    Ok(LabelDistribution(weights.into_iter().map(|w| w / total).collect()))
}

/// `β CE(onehot(y), z) + (1 − β) CE(l, z)` with gradient
/// `softmax(z) − (β onehot(y) + (1 − β) l)`.
pub fn total_loss(logits: &[f64], label: usize, l: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if label == 0 || label > c {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta {beta} outside [0, 1]")));
    }
    check_len("label distribution", c, l.len())?;
    check_simplex(l)?;
    let hard = one_hot(label - 1, c);
    let (ce_hard, _) = cross_entropy(&hard, logits)?;
    let (ce_soft, _) = cross_entropy(l, logits)?;
    let loss = beta * ce_hard + (1.0 - beta) * ce_soft;
    let grad = softmax(logits)
        .into_iter()
        .zip(hard.iter().zip(l))
        .map(|(p, (&h, &s))| p - (beta * h + (1.0 - beta) * s))
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Weight of the one-hot term; 1.0 is plain cross-entropy training.
    pub beta: f64,
    /// Added to the transport distance before inversion.
    pub epsilon_conf: f64,
    /// Added to squared prototype distances before inversion.
    pub epsilon_dist: f64,
    /// Epochs trained on one-hot labels before amendment starts.
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub prototype_mode: PrototypeMode,
    pub alpha_normalization: AlphaNormalization,
    pub ground_cost: GroundCostKind,
    pub optimizer: OptimizerConfig,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub feature_activation: Activation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            beta: 0.7,
            epsilon_conf: 1e-3,
            epsilon_dist: 1e-8,
            warmup_epochs: 10,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            prototype_mode: PrototypeMode::WeightedMean,
            alpha_normalization: AlphaNormalization::ClassMeanOne,
            ground_cost: GroundCostKind::Discrete,
            optimizer: OptimizerConfig::default(),
            hidden: vec![64],
            feature_dim: 32,
            feature_activation: Activation::Tanh,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if !(self.epsilon_conf > 0.0) || !(self.epsilon_dist > 0.0) {
            return bad("epsilon_conf and epsilon_dist must be positive".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 || self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("batch_size, feature_dim and hidden widths must be positive".into());
        }
        self.optimizer.validate()
    }

    pub fn build_model(&self, input_dim: usize, classes: usize) -> Result<TaskModel> {
        TaskModel::new(
            input_dim,
            &self.hidden,
            self.feature_dim,
            self.feature_activation,
            classes,
            self.seed,
        )
    }
}

/// Minibatch order generator: `ChaCha8Rng(seed)` on stream 1, one shuffle of
/// the sample indices per epoch.
pub fn batch_order_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub amended: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_alpha_clean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_alpha_flipped: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub empty_classes: Vec<usize>,
}

/// Result of one amendment round over a dataset.
#[derive(Debug, Clone)]
pub struct Amendment {
    pub prototypes: Prototypes,
    pub confidences: ConfidenceVector,
    pub distributions: Vec<LabelDistribution>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaskModel,
    pub metrics: Vec<EpochMetrics>,
    /// Amendment round recomputed with the final model.
    pub final_round: Amendment,
}

/// Frozen semantic side: autoencoder, vocabulary and the transport cost.
#[derive(Debug, Clone)]
pub struct SemanticContext<'a> {
    pub autoencoder: &'a AutoEncoder,
    pub vocab: &'a EmotionVocabulary,
    pub cost: GroundCost,
}

impl<'a> SemanticContext<'a> {
    pub fn new(autoencoder: &'a AutoEncoder, vocab: &'a EmotionVocabulary, kind: GroundCostKind) -> Self {
        Self {
            autoencoder,
            vocab,
            cost: GroundCost::from_kind(kind, vocab),
        }
    }
}

/// One amendment round: prototypes from `prior_alpha`, task graphs,
/// confidences and distributions. Classes without members are left out of
/// the graphs and receive no distribution mass.
pub fn amendment_round(
    model: &TaskModel,
    dataset: &Dataset,
    semantic: &[CrGraph],
    prior_alpha: &[f64],
    cost: &GroundCost,
    config: &EngineConfig,
) -> Result<Amendment> {
    let features = extract_features(model, dataset)?;
    let labels = dataset.labels();
    let classes = dataset.classes();
    let prototypes =
        compute_prototypes(&features, &labels, classes, prior_alpha, config.prototype_mode)?;
    let valid = prototypes.valid_classes();
    let restricted = valid.len() < classes;
    let sub_cost = if restricted { cost.restrict(&valid) } else { cost.clone() };
    let mut task = Vec::with_capacity(dataset.len());
    let mut sem = Vec::with_capacity(dataset.len());
    for (row, s) in features.iter_rows().zip(semantic) {
        task.push(task_crgraph_over(&prototypes, row, &valid)?);
        sem.push(if restricted { s.restrict(&valid) } else { s.clone() });
    }
    let confidences = compute_confidences(
        &sem,
        &task,
        &labels,
        classes,
        config.epsilon_conf,
        &sub_cost,
        config.alpha_normalization,
    )?;
    let distributions = features
        .iter_rows()
        .map(|f| amend_distribution(f, &prototypes, config.epsilon_dist))
        .collect::<Result<Vec<_>>>()?;
    Ok(Amendment {
        prototypes,
        confidences,
        distributions,
    })
}

fn mean_where(values: &[f64], mask: &[bool], want: bool) -> Option<f64> {
    let picked: Vec<f64> = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .map(|(&v, _)| v)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Trains a task model on `dataset`. Epochs before `warmup_epochs` use the
/// one-hot loss with unit confidences; later epochs run an amendment round
/// first and train with [`total_loss`].
pub fn train(
    dataset: &Dataset,
    semantic: &SemanticContext<'_>,
    config: &EngineConfig,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = dataset.classes();
    check_len("dataset classes vs vocabulary", semantic.vocab.classes(), classes)?;
    check_len(
        "dataset features vs autoencoder",
        semantic.autoencoder.input_dim(),
        dataset.dim(),
    )?;
    let mut model = config.build_model(dataset.dim(), classes)?;
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut order_rng = batch_order_rng(config.seed);
    let semantic_graphs = semantic_graphs(semantic.autoencoder, semantic.vocab, dataset)?;
    let flip_mask = dataset.flip_mask();

    let n = dataset.len();
    let hard: Vec<LabelDistribution> = dataset
        .samples()
        .iter()
        .map(|s| LabelDistribution(one_hot(s.class(), classes)))
        .collect();
    let mut alpha = vec![1.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let amending = epoch >= config.warmup_epochs;
        let mut round = None;
        if amending {
            let r = amendment_round(&model, dataset, &semantic_graphs, &alpha, &semantic.cost, config)?;
            let empty = r.prototypes.empty_classes();
            if !empty.is_empty() {
                log::warn!("epoch {}: classes {empty:?} have no members, skipped", epoch + 1);
            }
            alpha.clone_from(&r.confidences.alpha);
            round = Some(r);
        }
        let (targets, beta) = match &round {
            Some(r) => (&r.distributions, config.beta),
            None => (&hard, 1.0),
        };

        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = TaskGrads::zeros_like(&model);
            for &i in batch {
                let s = &dataset.samples()[i];
                let pass = model.forward(&s.x)?;
                let (loss, d_logits) = total_loss(&pass.logits, s.label, targets[i].as_slice(), beta)?;
                epoch_loss += loss;
                model.backward(&pass, &d_logits, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = grads.flatten().into_iter().map(|v| v * scale).collect();
            let mut params = model.params();
            optimizer.step(&mut params, &g)?;
            model.set_params(&params)?;
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }

        let alpha_stats = round.as_ref().map(|r| {
            let a = &r.confidences.alpha;
            let mean = a.iter().sum::<f64>() / n as f64;
            let (clean, flipped) = match &flip_mask {
                Some(mask) => (mean_where(a, mask, false), mean_where(a, mask, true)),
                None => (None, None),
            };
            (mean, clean, flipped)
        });
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            mean_loss,
            train_accuracy: evaluate(&model, dataset)?,
            test_accuracy: eval.map(|d| evaluate(&model, d)).transpose()?,
            amended: amending,
            mean_alpha: alpha_stats.map(|s| s.0),
            mean_alpha_clean: alpha_stats.and_then(|s| s.1),
            mean_alpha_flipped: alpha_stats.and_then(|s| s.2),
            empty_classes: round.map(|r| r.prototypes.empty_classes()).unwrap_or_default(),
        });
    }

    let final_round =
        amendment_round(&model, dataset, &semantic_graphs, &alpha, &semantic.cost, config)?;
    Ok(TrainOutcome {
        model,
        metrics,
        final_round,
    })
}

/// Fraction of samples whose arg-max logit matches the label.
pub fn evaluate(model: &TaskModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for s in dataset.samples() {
        if argmax(&model.logits(&s.x)?) == s.class() {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// Predicted label, 1-based.
    pub class: usize,
    pub distribution: LabelDistribution,
    pub raw_alpha: f64,
    /// Normalized with the stored class means of the given label (or of the
    /// predicted class when no label is given).
    pub alpha: f64,
}

/// Everything needed to score single samples after training.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: TaskModel,
    pub prototypes: Prototypes,
    pub autoencoder: AutoEncoder,
    pub vocab: EmotionVocabulary,
    pub config: EngineConfig,
    /// Mean raw confidence per class from the final training round.
    pub alpha_class_means: Vec<f64>,
}

impl Predictor {
    pub fn from_outcome(
        outcome: &TrainOutcome,
        autoencoder: &AutoEncoder,
        vocab: &EmotionVocabulary,
        config: &EngineConfig,
    ) -> Self {
        Self {
            model: outcome.model.clone(),
            prototypes: outcome.final_round.prototypes.clone(),
            autoencoder: autoencoder.clone(),
            vocab: vocab.clone(),
            config: config.clone(),
            alpha_class_means: outcome.final_round.confidences.class_means.clone(),
        }
    }

    /// Predicted class, amended distribution and confidence of one sample.
    pub fn predict_with_distribution(&self, x: &[f64], label: Option<usize>) -> Result<Prediction> {
        let classes = self.model.classes();
        if let Some(l) = label {
            if l == 0 || l > classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        let features = self.model.features(x)?;
        let logits = self.model.head.forward(&features).1;
        let class = argmax(&logits) + 1;
        let distribution = amend_distribution(&features, &self.prototypes, self.config.epsilon_dist)?;

        let valid = self.prototypes.valid_classes();
        let restricted = valid.len() < classes;
        let cost = GroundCost::from_kind(self.config.ground_cost, &self.vocab);
        let cost = if restricted { cost.restrict(&valid) } else { cost };
        let g = self.autoencoder.embed(x)?;
        let mut sem = semantic_crgraph(&self.vocab, &g)?;
        if restricted {
            sem = sem.restrict(&valid);
        }
        let task = task_crgraph_over(&self.prototypes, &features, &valid)?;
        let raw_alpha = confidence(&sem, &task, self.config.epsilon_conf, &cost)?;
        let alpha = match self.config.alpha_normalization {
            AlphaNormalization::Raw => raw_alpha,
            AlphaNormalization::ClassMeanOne => {
                raw_alpha / self.alpha_class_means[label.unwrap_or(class) - 1]
            }
        };
        Ok(Prediction {
            class,
            distribution,
            raw_alpha,
            alpha,
        })
    }
}
