use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, Params};
use super::{encode_phrase, LstmError, LstmHyperparams, LstmModel};

/// Loss curve of a training run. Every value is the mean squared error over
/// the whole dataset in inference mode (no dropout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn dataset_mse(params: &Params, hp: &LstmHyperparams, data: &[(Vec<usize>, f64)]) -> f64 {
    let sum: f64 = data
        .iter()
        .map(|(seq, y)| (forward(params, hp, seq, None).output - y).powi(2))
        .sum();
    sum / data.len() as f64
}

/// Fits a model to `(phrase, open rate)` pairs by per-sample stochastic
/// gradient descent on squared error. Initialization, the per-epoch shuffle
/// and the dropout masks all come from one generator seeded with `hp.seed`,
/// so equal inputs give bit-identical models.
pub fn train(dataset: &[(String, f64)], hp: &LstmHyperparams) -> Result<(LstmModel, TrainingReport), LstmError> {
    hp.validate()?;
    if dataset.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    if let Some((phrase, label)) = dataset.iter().find(|(_, y)| !(0.0..=1.0).contains(y)) {
        return Err(LstmError::InvalidLabel {
            phrase: phrase.clone(),
            label: *label,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = Params::init(hp, &mut rng);
    let data: Vec<(Vec<usize>, f64)> = dataset.iter().map(|(p, y)| (encode_phrase(p, hp), *y)).collect();

    let initial_loss = dataset_mse(&params, hp, &data);
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let (seq, target) = &data[idx];
            let pass = forward(&params, hp, seq, Some(&mut rng));
            let (loss, mut grads) = backward(&params, seq, &pass, *target);
            let norm = grads.norm();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(LstmError::NonFiniteLoss {
                    epoch,
                    phrase: dataset[idx].0.clone(),
                });
            }
            if norm > hp.grad_clip {
                grads.scale(hp.grad_clip / norm);
            }
            params.add_scaled(&grads, -hp.learning_rate);
        }
        let loss = dataset_mse(&params, hp, &data);
        if !loss.is_finite() {
            return Err(LstmError::NonFiniteLoss {
                epoch,
                phrase: String::new(),
            });
        }
        epoch_losses.push(loss);
    }

    let model = LstmModel {
        hyperparams: hp.clone(),
        params,
        build_id: String::new(),
    };
    Ok((
        model,
        TrainingReport {
            initial_loss,
            epoch_losses,
        },
    ))
}
