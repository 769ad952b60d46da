use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax, Gradients};
use super::{Matrix, MlpError, MlpModel};

/// Mini-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        // lr = 0 is allowed so a run can be replayed without moving the weights.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::InvalidConfig(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(MlpError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_model: MlpModel,
    pub loss_history: Vec<EpochLoss>,
    pub train_seconds: f64,
    pub test_accuracy: f64,
}

fn check_split(model: &MlpModel, x: &Matrix, y: &Matrix, name: &str) -> Result<(), MlpError> {
    if x.rows() != y.rows() {
        return Err(MlpError::Shape {
            what: format!("{name} rows"),
            expected: x.rows().to_string(),
            got: y.rows().to_string(),
        });
    }
    if x.cols() != model.input_size() {
        return Err(MlpError::Shape {
            what: format!("{name} features"),
            expected: model.input_size().to_string(),
            got: x.cols().to_string(),
        });
    }
    if y.cols() != model.output_size() {
        return Err(MlpError::Shape {
            what: format!("{name} classes"),
            expected: model.output_size().to_string(),
            got: y.cols().to_string(),
        });
    }
    Ok(())
}

/// Trains `model` with shuffled mini-batch SGD and scores it on the test split.
///
/// Training rows are reshuffled every epoch from a generator seeded with
/// `config.seed`, so two runs with the same inputs produce the same loss
/// history and accuracy. Only `train_seconds` varies between runs.
pub fn train(
    mut model: MlpModel,
    train_x: &Matrix,
    train_y: &Matrix,
    test_x: &Matrix,
    test_y: &Matrix,
    config: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    config.validate()?;
    check_split(&model, train_x, train_y, "train")?;
    check_split(&model, test_x, test_y, "test")?;
    if train_x.rows() == 0 {
        return Err(MlpError::EmptyBatch);
    }
    if test_x.rows() == 0 {
        return Err(MlpError::EmptyEvaluation);
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.scale(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_gradients(train_x.row(i), train_y.row(i), &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(MlpError::Diverged { epoch });
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            model.apply_gradients(&grads, config.learning_rate);
        }
        if !model.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        loss_history.push(EpochLoss {
            epoch,
            loss: epoch_loss / train_x.rows() as f64,
        });
    }

    let train_seconds = started.elapsed().as_secs_f64();
    let test_accuracy = evaluate(&model, test_x, test_y)?;
    Ok(TrainReport {
        final_model: model,
        loss_history,
        train_seconds,
        test_accuracy,
    })
}

/// Fraction of rows whose predicted class (argmax, lowest index on ties)
/// matches the target's.
pub fn evaluate(model: &MlpModel, x: &Matrix, y_one_hot: &Matrix) -> Result<f64, MlpError> {
    check_split(model, x, y_one_hot, "evaluation")?;
    if x.rows() == 0 {
        return Err(MlpError::EmptyEvaluation);
    }
    let mut correct = 0usize;
    for r in 0..x.rows() {
        let probs = model.predict(x.row(r))?;
        if argmax(&probs) == argmax(y_one_hot.row(r)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / x.rows() as f64)
}
