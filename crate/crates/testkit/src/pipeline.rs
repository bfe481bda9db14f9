//! Plain minibatch cross-entropy training with nothing but one-hot targets.

use ldl_core::amend::{batch_order_rng, EngineConfig, TaskGrads, TaskModel};
use ldl_core::datagen::Dataset;
use ldl_core::nn::Optimizer;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEpoch {
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub struct ReferenceRun {
    pub model: TaskModel,
    pub epochs: Vec<ReferenceEpoch>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &TaskModel, data: &Dataset) -> f64 {
    let hits = data
        .samples()
        .iter()
        .filter(|s| first_argmax(&model.logits(&s.x).unwrap()) + 1 == s.label)
        .count();
    hits as f64 / data.len() as f64
}

/// Trains from the same initialization and batch order the engine uses,
/// with the loss `log Σ exp z − z_y` and gradient `softmax(z) − onehot(y)`.
pub fn train_one_hot(data: &Dataset, config: &EngineConfig, eval: Option<&Dataset>) -> ReferenceRun {
    let mut model = config.build_model(data.dim(), data.classes()).unwrap();
    let mut opt = Optimizer::new(config.optimizer).unwrap();
    let mut rng = batch_order_rng(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::new();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = TaskGrads::zeros_like(&model);
            for &i in batch {
                let s = &data.samples()[i];
                let pass = model.forward(&s.x).unwrap();
                let y = s.label - 1;
                total += log_sum_exp(&pass.logits) - pass.logits[y];
                let mut d = softmax(&pass.logits);
                d[y] -= 1.0;
                model.backward(&pass, &d, &mut grads).unwrap();
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = grads.flatten().into_iter().map(|v| v * scale).collect();
            let mut params = model.params();
            opt.step(&mut params, &g).unwrap();
            model.set_params(&params).unwrap();
        }
        epochs.push(ReferenceEpoch {
            mean_loss: total / data.len() as f64,
            train_accuracy: accuracy(&model, data),
            test_accuracy: eval.map(|d| accuracy(&model, d)),
        });
    }
    ReferenceRun { model, epochs }
}
