//! Target-domain prediction from a fitted generator, plus executable checks
//! of the identifiability results.

mod predictor;
mod validators;

use serde::{Deserialize, Serialize};

pub use predictor::{Predictor, PredictorKind};
pub use validators::{
    check_linear_independence, default_grid, gaussian_kde, silverman_bandwidth,
    validate_prop1_injectivity, validate_prop2_recovery, IndependenceCertificate,
    InjectivityReport, PairCheck, RecoveryReport, CERTIFICATE_TOL, PROP1_DELTA, PROP1_EPSILON,
};

use crate::cgdan::CgdanModel;
use crate::data::{DomainDataset, LabelSpace};
use crate::error::{Error, Result};
use crate::gdan::GdanModel;
use crate::numerics::{Rng, Tensor2};

/// Cap on the generated training set.
pub const MAX_GENERATED: usize = 50_000;

/// Anything that can draw labeled rows for its target domain.
pub trait TargetModel {
    /// Feature columns the generated rows carry.
    fn features(&self) -> Vec<String>;
    fn label_space(&self) -> Result<LabelSpace>;
    fn sample_target(&self, n: usize, rng: &mut Rng) -> Result<DomainDataset>;
}

impl TargetModel for GdanModel {
    fn features(&self) -> Vec<String> {
        self.feature_names.clone()
    }

    fn label_space(&self) -> Result<LabelSpace> {
        Ok(self.label_space)
    }

    fn sample_target(&self, n: usize, rng: &mut Rng) -> Result<DomainDataset> {
        self.sample_domain(self.target_domain(), n, rng)
    }
}

impl TargetModel for CgdanModel {
    fn features(&self) -> Vec<String> {
        CgdanModel::features(self)
    }

    fn label_space(&self) -> Result<LabelSpace> {
        Ok(self.context()?.label_space)
    }

    fn sample_target(&self, n: usize, rng: &mut Rng) -> Result<DomainDataset> {
        self.ancestral_generate(self.target_domain(), None, n, rng)
    }
}

/// Default generated set size: ten rows per target row, capped.
pub fn default_generated_size(target_rows: usize) -> usize {
    (10 * target_rows).clamp(1, MAX_GENERATED)
}

/// Target columns in the model's feature order.
pub fn model_view(model: &dyn TargetModel, target: &DomainDataset) -> Result<Tensor2> {
    let idx = model
        .features()
        .iter()
        .map(|f| {
            target
                .column_index(f)
                .ok_or_else(|| Error::Schema(format!("target has no column `{f}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(target.x.select_cols(&idx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adapted {
    pub predictor: Predictor,
    pub predictions: Vec<f64>,
    pub generated: DomainDataset,
}

/// Generates labeled target rows, fits `kind` on them and predicts the
/// target features. `n` defaults to [`default_generated_size`].
pub fn adapt_and_predict(
    model: &dyn TargetModel,
    target: &DomainDataset,
    kind: PredictorKind,
    n: Option<usize>,
    rng: &mut Rng,
) -> Result<Adapted> {
    if target.is_empty() {
        return Err(Error::contract("target features are empty"));
    }
    let x = model_view(model, target)?;
    let n = n.unwrap_or_else(|| default_generated_size(target.len()));
    let generated = model.sample_target(n, rng)?;
    let predictor = Predictor::fit(
        kind,
        &generated.x,
        generated.labels()?,
        &model.label_space()?,
    )?;
    let predictions = predictor.predict(&x)?;
    Ok(Adapted {
        predictor,
        predictions,
        generated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    Classification,
    WithinRadius { radius: f64 },
}

impl Task {
    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Classification => "accuracy",
            Task::WithinRadius { .. } => "within_radius",
        }
    }
}

/// Accuracy, or the fraction of predictions within the radius.
pub fn evaluate(predictions: &[f64], truth: &[f64], task: Task) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("nothing to evaluate"));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| match task {
            Task::Classification => p == t,
            Task::WithinRadius { radius } => (*p - *t).abs() <= radius,
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub model_checkpoint_hash: String,
}

impl MetricReport {
    pub fn new(
        task: Task,
        value: f64,
        n: usize,
        seed: u64,
        model_checkpoint_hash: impl Into<String>,
    ) -> Self {
        Self {
            task,
            metric: task.metric_name().to_string(),
            value,
            n,
            seed,
            model_checkpoint_hash: model_checkpoint_hash.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_metrics() {
        assert_eq!(
            evaluate(
                &[0.0, 1.0, 1.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                Task::Classification
            )
            .unwrap(),
            0.75
        );
        let t = Task::WithinRadius { radius: 10.0 };
        assert_eq!(evaluate(&[1.0, 2.0], &[1.5, 2.5], t).unwrap(), 1.0);
        let t = Task::WithinRadius { radius: 0.0 };
        let v = evaluate(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 0.0, 0.0], t).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
        assert!(evaluate(&[1.0], &[], Task::Classification).is_err());
    }

    #[test]
    fn generated_size_default() {
        assert_eq!(default_generated_size(100), 1000);
        assert_eq!(default_generated_size(10_000), MAX_GENERATED);
    }
}
