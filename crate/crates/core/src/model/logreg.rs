//! Order-free baseline: logistic regression over a concatenated
//! mean-embedding + auxiliary feature vector, trained with the same
//! seeded SGD contract as the sequence model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabelClass;
use crate::model::math::{add_scaled_vec, sigmoid};
use crate::model::{ModelError, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    pub class: LabelClass,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn prob_positive(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.weights.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        let mut z = self.bias;
        for (w, xi) in self.weights.iter().zip(x) {
            z += w * xi;
        }
        Ok(sigmoid(z))
    }

    /// Mean cross-entropy plus L2 on the weights.
    pub fn loss(&self, batch: &[(Vec<f64>, bool)], l2_lambda: f64) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for (x, label) in batch {
            let p = self.prob_positive(x)?.clamp(1e-12, 1.0 - 1e-12);
            total -= if *label { p.ln() } else { (1.0 - p).ln() };
        }
        let l2: f64 = self.weights.iter().map(|w| w * w).sum();
        Ok(total / batch.len() as f64 + l2_lambda * l2)
    }

    /// Exact gradient of [`Self::loss`]: `(d_weights, d_bias)`.
    pub fn gradients(
        &self,
        batch: &[(Vec<f64>, bool)],
        l2_lambda: f64,
    ) -> Result<(Vec<f64>, f64), ModelError> {
        let mut dw = vec![0.0; self.weights.len()];
        let mut db = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (x, label) in batch {
            let p = self.prob_positive(x)?;
            let residual = (p - f64::from(u8::from(*label))) * scale;
            add_scaled_vec(&mut dw, x, residual);
            db += residual;
        }
        add_scaled_vec(&mut dw, &self.weights, 2.0 * l2_lambda);
        Ok((dw, db))
    }
}

/// Train the baseline with seeded uniform init and per-example SGD;
/// bit-reproducible for identical inputs.
pub fn train_logreg_baseline(
    class: LabelClass,
    dataset: &[(Vec<f64>, bool)],
    cfg: &TrainConfig,
) -> Result<LogRegModel, ModelError> {
    cfg.validate()?;
    let positives = dataset.iter().filter(|(_, l)| *l).count();
    if dataset.is_empty() || positives == 0 || positives == dataset.len() {
        return Err(ModelError::DegenerateLabels);
    }
    let dim = dataset[0].0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LogRegModel {
        class,
        weights: (0..dim).map(|_| rng.gen_range(-0.08..0.08)).collect(),
        bias: rng.gen_range(-0.08..0.08),
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let row = &dataset[idx];
            let (dw, db) = model.gradients(std::slice::from_ref(row), cfg.l2_lambda)?;
            add_scaled_vec(&mut model.weights, &dw, -cfg.learning_rate);
            model.bias -= cfg.learning_rate * db;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Foundation;

    fn class() -> LabelClass {
        LabelClass::Foundation(Foundation::CareHarm)
    }

    fn separable() -> Vec<(Vec<f64>, bool)> {
        (0..20)
            .map(|i| {
                let positive = i % 2 == 0;
                let x = if positive {
                    vec![1.0, 0.0, 0.1 * (i as f64)]
                } else {
                    vec![-1.0, 0.5, 0.1 * (i as f64)]
                };
                (x, positive)
            })
            .collect()
    }

    #[test]
    fn separable_set_reaches_perfect_training_f1() {
        let cfg = TrainConfig {
            epochs: 20,
            l2_lambda: 0.0,
            ..TrainConfig::default()
        };
        let data = separable();
        let model = train_logreg_baseline(class(), &data, &cfg).unwrap();
        let correct = data
            .iter()
            .all(|(x, label)| (model.prob_positive(x).unwrap() >= 0.5) == *label);
        assert!(correct);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dim = 5;
        let batch: Vec<(Vec<f64>, bool)> = (0..6)
            .map(|i| {
                (
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    i % 2 == 0,
                )
            })
            .collect();
        let model = LogRegModel {
            class: class(),
            weights: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            bias: 0.1,
        };
        let l2 = 1e-3;
        let (dw, db) = model.gradients(&batch, l2).unwrap();
        let eps = 1e-6;
        for i in 0..dim {
            let mut plus = model.clone();
            plus.weights[i] += eps;
            let mut minus = model.clone();
            minus.weights[i] -= eps;
            let numeric =
                (plus.loss(&batch, l2).unwrap() - minus.loss(&batch, l2).unwrap()) / (2.0 * eps);
            let rel = (numeric - dw[i]).abs() / numeric.abs().max(dw[i].abs()).max(1e-8);
            assert!(
                rel <= 1e-6,
                "weight {i}: numeric {numeric}, analytic {}",
                dw[i]
            );
        }
        let mut plus = model.clone();
        plus.bias += eps;
        let mut minus = model.clone();
        minus.bias -= eps;
        let numeric =
            (plus.loss(&batch, l2).unwrap() - minus.loss(&batch, l2).unwrap()) / (2.0 * eps);
        let rel = (numeric - db).abs() / numeric.abs().max(db.abs()).max(1e-8);
        assert!(rel <= 1e-6);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = TrainConfig::default();
        let data = separable();
        let a = train_logreg_baseline(class(), &data, &cfg).unwrap();
        let b = train_logreg_baseline(class(), &data, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
    }

    #[test]
    fn degenerate_labels_rejected() {
        let cfg = TrainConfig::default();
        let data: Vec<(Vec<f64>, bool)> = (0..4).map(|_| (vec![1.0], true)).collect();
        assert!(matches!(
            train_logreg_baseline(class(), &data, &cfg),
            Err(ModelError::DegenerateLabels)
        ));
    }
}
