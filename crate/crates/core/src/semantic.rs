//! Semantic space: an autoencoder whose code is pulled toward the word vector
//! of the sample's label, and the class-relation graphs built from that code.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::embeddings::EmotionVocabulary;
use crate::error::{Error, Result};
use crate::nn::linalg::check_len;
use crate::nn::loss::{cosine_similarity, cosine_similarity_grad, mse};
use crate::nn::{Activation, MlpGrads, MlpNetwork, Optimizer, OptimizerConfig};
use crate::transport::CrGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    pub encoder: MlpNetwork,
    pub decoder: MlpNetwork,
}

impl AutoEncoder {
    pub fn from_parts(encoder: MlpNetwork, decoder: MlpNetwork) -> Result<Self> {
        check_len("decoder input", encoder.out_dim(), decoder.in_dim())?;
        check_len("decoder output", encoder.in_dim(), decoder.out_dim())?;
        Ok(Self { encoder, decoder })
    }

    /// `input → hidden → code` encoder (ReLU hidden, linear code) and its mirror.
    pub fn new(input_dim: usize, hidden: usize, code_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = MlpNetwork::new(
            &[input_dim, hidden, code_dim],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        let decoder = MlpNetwork::new(
            &[code_dim, hidden, input_dim],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        Self::from_parts(encoder, decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Semantic feature `g(x)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(x)
    }

    fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("autoencoder parameters", self.num_params(), params.len())?;
        let (enc, dec) = params.split_at(self.encoder.num_params());
        self.encoder.set_params(enc)?;
        self.decoder.set_params(dec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    /// Weight of the word-vector alignment term.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epochs: 40,
            batch_size: 32,
            hidden: 64,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch_size and hidden must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SemanticLoss {
    pub loss: f64,
    pub reconstruction: f64,
    /// `1 − cos(V(y), g(x))`
    pub misalignment: f64,
    pub encoder_grads: MlpGrads,
    pub decoder_grads: MlpGrads,
}

/// Reconstruction MSE plus `γ (1 − cos(V(y), g(x)))` for one sample. The
/// reconstruction term reaches both halves of the autoencoder; the alignment
/// term depends on the code only and so reaches the encoder only.
pub fn semantic_loss(
    x: &[f64],
    label: usize,
    vocab: &EmotionVocabulary,
    ae: &AutoEncoder,
    gamma: f64,
) -> Result<SemanticLoss> {
    let mut encoder_grads = MlpGrads::zeros_like(&ae.encoder);
    let mut decoder_grads = MlpGrads::zeros_like(&ae.decoder);
    let (reconstruction, misalignment) = semantic_loss_into(
        x,
        label,
        vocab,
        ae,
        gamma,
        &mut encoder_grads,
        &mut decoder_grads,
    )?;
    Ok(SemanticLoss {
        loss: reconstruction + gamma * misalignment,
        reconstruction,
        misalignment,
        encoder_grads,
        decoder_grads,
    })
}

/// Like [`semantic_loss`] but adds the gradients into existing buffers.
/// Returns `(reconstruction, misalignment)`.
pub fn semantic_loss_into(
    x: &[f64],
    label: usize,
    vocab: &EmotionVocabulary,
    ae: &AutoEncoder,
    gamma: f64,
    encoder_grads: &mut MlpGrads,
    decoder_grads: &mut MlpGrads,
) -> Result<(f64, f64)> {
    let anchor = vocab.word_vector(label)?;
    check_len("semantic code vs vocabulary", vocab.dim(), ae.code_dim())?;
    let (code, enc_cache) = ae.encoder.forward(x)?;
    let (recon, dec_cache) = ae.decoder.forward(&code)?;
    let (reconstruction, d_recon) = mse(&recon, x)?;
    let (cos, d_cos) = cosine_similarity_grad(&code, anchor).map_err(|e| match e {
        Error::ZeroNorm(_) => Error::ZeroNorm("semantic feature"),
        other => other,
    })?;
    let d_code_recon = ae.decoder.backward_into(&dec_cache, &d_recon, decoder_grads)?;
    let d_code: Vec<f64> = d_code_recon
        .iter()
        .zip(&d_cos)
        .map(|(r, c)| r - gamma * c)
        .collect();
    ae.encoder.backward_into(&enc_cache, &d_code, encoder_grads)?;
    Ok((reconstruction, 1.0 - cos))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticHistory {
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean `cos(V(y), g(x))` over the training set before training
    /// (index 0) and after every epoch.
    pub alignment: Vec<f64>,
}

fn validate_dataset(dataset: &Dataset, vocab: &EmotionVocabulary) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("dataset classes vs vocabulary", vocab.classes(), dataset.classes())
}

pub fn mean_alignment(ae: &AutoEncoder, dataset: &Dataset, vocab: &EmotionVocabulary) -> Result<f64> {
    validate_dataset(dataset, vocab)?;
    let mut total = 0.0;
    for s in dataset.samples() {
        let g = ae.embed(&s.x)?;
        total += cosine_similarity(vocab.word_vector(s.label)?, &g)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Minibatch training of the autoencoder. Batches follow a seeded shuffle
/// per epoch; the last partial batch is kept.
pub fn train_autoencoder(
    dataset: &Dataset,
    vocab: &EmotionVocabulary,
    config: &SemanticConfig,
) -> Result<(AutoEncoder, SemanticHistory)> {
    config.validate()?;
    validate_dataset(dataset, vocab)?;
    let mut ae = AutoEncoder::new(dataset.dim(), config.hidden, vocab.dim(), config.seed)?;
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);

    let mut history = SemanticHistory {
        epoch_loss: Vec::with_capacity(config.epochs),
        alignment: vec![mean_alignment(&ae, dataset, vocab)?],
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut enc = MlpGrads::zeros_like(&ae.encoder);
            let mut dec = MlpGrads::zeros_like(&ae.decoder);
            for &i in batch {
                let s = &dataset.samples()[i];
                let (recon, misalign) =
                    semantic_loss_into(&s.x, s.label, vocab, &ae, config.gamma, &mut enc, &mut dec)?;
                epoch_loss += recon + config.gamma * misalign;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = enc.flatten();
            grads.extend(dec.flatten());
            grads.iter_mut().for_each(|g| *g *= scale);
            let mut params = ae.params();
            optimizer.step(&mut params, &grads)?;
            ae.set_params(&params)?;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("autoencoder training loss"));
        }
        history.epoch_loss.push(mean);
        history.alignment.push(mean_alignment(&ae, dataset, vocab)?);
    }
    Ok((ae, history))
}

/// `S_s[k] = cos(v_k, g)` for every class `k`.
pub fn semantic_crgraph(vocab: &EmotionVocabulary, g: &[f64]) -> Result<CrGraph> {
    check_len("semantic feature", vocab.dim(), g.len())?;
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroNorm("semantic feature"));
    }
    vocab
        .vectors()
        .iter_rows()
        .map(|v| cosine_similarity(v, g))
        .collect::<Result<Vec<f64>>>()
        .map(CrGraph)
}

/// Semantic graphs of every sample under a frozen autoencoder.
pub fn semantic_graphs(
    ae: &AutoEncoder,
    vocab: &EmotionVocabulary,
    dataset: &Dataset,
) -> Result<Vec<CrGraph>> {
    dataset
        .samples()
        .iter()
        .map(|s| semantic_crgraph(vocab, &ae.embed(&s.x)?))
        .collect()
}
