use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabelSpace;
use crate::error::{Error, Result};
use crate::numerics::{linalg, sq_dist, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    MultinomialLogistic,
    KNearestNeighbor {
        k: usize,
    },
    LeastSquares,
}

/// Full-batch gradient descent settings for the logistic model.
const LOGISTIC_STEPS: usize = 400;
const LOGISTIC_LR: f64 = 0.5;
const LOGISTIC_L2: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Predictor {
    /// Softmax over standardized features; `weights` is `(D+1) x C`, bias row last.
    MultinomialLogistic {
        mean: Vec<f64>,
        scale: Vec<f64>,
        weights: Tensor2,
    },
    KNearestNeighbor {
        k: usize,
        classify: bool,
        x: Tensor2,
        y: Vec<f64>,
    },
    /// `y ≈ [x, 1] · coef`.
    LeastSquares { coef: Vec<f64> },
}

fn standardize(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean = x.column_means();
    let scale = (0..x.cols())
        .map(|c| {
            let v = (0..x.rows())
                .map(|r| (x.get(r, c) - mean[c]).powi(2))
                .sum::<f64>()
                / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn scaled_row(row: &[f64], mean: &[f64], scale: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        row.iter()
            .zip(mean)
            .zip(scale)
            .map(|((v, m), s)| (v - m) / s),
    );
    out.push(1.0);
}

fn softmax_row(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Predictor {
    pub fn fit(kind: PredictorKind, x: &Tensor2, y: &[f64], space: &LabelSpace) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::contract(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::DegenerateTraining("no training rows".into()));
        }
        match kind {
            PredictorKind::MultinomialLogistic => {
                let classes = space.classes().ok_or_else(|| {
                    Error::contract("logistic regression needs categorical labels")
                })?;
                space.check(y)?;
                let mut seen = vec![false; classes];
                for &c in y {
                    seen[c as usize] = true;
                }
                if let Some(c) = seen.iter().position(|s| !s) {
                    return Err(Error::DegenerateTraining(format!(
                        "class {c} is absent from the training data"
                    )));
                }
                Ok(fit_logistic(x, y, classes))
            }
            PredictorKind::KNearestNeighbor { k } => {
                if k == 0 {
                    return Err(Error::contract("k must be positive"));
                }
                Ok(Predictor::KNearestNeighbor {
                    k: k.min(x.rows()),
                    classify: space.classes().is_some(),
                    x: x.clone(),
                    y: y.to_vec(),
                })
            }
            PredictorKind::LeastSquares => {
                let design = DMatrix::from_fn(x.rows(), x.cols() + 1, |r, c| {
                    if c < x.cols() {
                        x.get(r, c)
                    } else {
                        1.0
                    }
                });
                let rank = linalg::rank(&design, 1e-10);
                if rank < x.cols() + 1 {
                    return Err(Error::DegenerateTraining(format!(
                        "design matrix has rank {rank}, needs {}",
                        x.cols() + 1
                    )));
                }
                let coef = linalg::least_squares(&design, &DVector::from_column_slice(y))?;
                Ok(Predictor::LeastSquares {
                    coef: coef.iter().cloned().collect(),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Predictor::MultinomialLogistic { mean, .. } => mean.len(),
            Predictor::KNearestNeighbor { x, .. } => x.cols(),
            Predictor::LeastSquares { coef } => coef.len() - 1,
        }
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::shape("predict", x.shape(), (x.rows(), self.dim())));
        }
        Ok(match self {
            Predictor::MultinomialLogistic {
                mean,
                scale,
                weights,
            } => {
                let mut buf = Vec::new();
                (0..x.rows())
                    .map(|r| {
                        scaled_row(x.row(r), mean, scale, &mut buf);
                        let mut best = (0, f64::NEG_INFINITY);
                        for c in 0..weights.cols() {
                            let z: f64 = buf
                                .iter()
                                .enumerate()
                                .map(|(i, v)| v * weights.get(i, c))
                                .sum();
                            if z > best.1 {
                                best = (c, z);
                            }
                        }
                        best.0 as f64
                    })
                    .collect()
            }
            Predictor::KNearestNeighbor {
                k,
                classify,
                x: train,
                y,
            } => (0..x.rows())
                .map(|r| knn_one(train, y, *k, *classify, x.row(r)))
                .collect(),
            Predictor::LeastSquares { coef } => (0..x.rows())
                .map(|r| {
                    x.row(r).iter().zip(coef).map(|(v, c)| v * c).sum::<f64>()
                        + coef[coef.len() - 1]
                })
                .collect(),
        })
    }
}

fn fit_logistic(x: &Tensor2, y: &[f64], classes: usize) -> Predictor {
    let (mean, scale) = standardize(x);
    let d = x.cols() + 1;
    let n = x.rows() as f64;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|r| {
            let mut b = Vec::with_capacity(d);
            scaled_row(x.row(r), &mean, &scale, &mut b);
            b
        })
        .collect();
    let mut w = Tensor2::zeros(d, classes);
    let mut z = vec![0.0; classes];
    for _ in 0..LOGISTIC_STEPS {
        let mut g = Tensor2::zeros(d, classes);
        for (row, &label) in rows.iter().zip(y) {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = row.iter().enumerate().map(|(i, v)| v * w.get(i, c)).sum();
            }
            softmax_row(&mut z);
            z[label as usize] -= 1.0;
            for (i, v) in row.iter().enumerate() {
                let gr = g.row_mut(i);
                for c in 0..classes {
                    gr[c] += v * z[c];
                }
            }
        }
        for i in 0..d {
            for c in 0..classes {
                let reg = if i + 1 < d {
                    LOGISTIC_L2 * w.get(i, c)
                } else {
                    0.0
                };
                let step = LOGISTIC_LR * (g.get(i, c) / n + reg);
                w.set(i, c, w.get(i, c) - step);
            }
        }
    }
    Predictor::MultinomialLogistic {
        mean,
        scale,
        weights: w,
    }
}

/// Majority vote (ties to the smallest label) or mean of the `k` nearest.
fn knn_one(train: &Tensor2, y: &[f64], k: usize, classify: bool, q: &[f64]) -> f64 {
    let mut d: Vec<(f64, usize)> = (0..train.rows())
        .map(|r| (sq_dist(train.row(r), q), r))
        .collect();
    d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let near = &d[..k];
    if classify {
        let mut votes: Vec<(f64, usize)> = Vec::new();
        for &(_, r) in near {
            match votes.iter_mut().find(|(l, _)| *l == y[r]) {
                Some(v) => v.1 += 1,
                None => votes.push((y[r], 1)),
            }
        }
        votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
        votes[0].0
    } else {
        near.iter().map(|&(_, r)| y[r]).sum::<f64>() / k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn two_class(n: usize, seed: u64) -> (Tensor2, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = y
            .iter()
            .map(|c| 4.0 * c - 2.0 + rng.standard_normal())
            .collect();
        (Tensor2::column(&x), y)
    }

    #[test]
    fn logistic_separates_gaussians() {
        let space = LabelSpace::Categorical { classes: 2 };
        let (x, y) = two_class(2000, 1);
        let p = Predictor::fit(PredictorKind::MultinomialLogistic, &x, &y, &space).unwrap();
        let (xt, yt) = two_class(2000, 2);
        let pred = p.predict(&xt).unwrap();
        let acc = pred.iter().zip(&yt).filter(|(a, b)| a == b).count() as f64 / yt.len() as f64;
        // Bayes accuracy is Φ(2) ≈ 0.977.
        assert!(acc > 0.96, "{acc}");
    }

    #[test]
    fn missing_class_is_degenerate() {
        let space = LabelSpace::Categorical { classes: 2 };
        let x = Tensor2::column(&[0.0, 1.0]);
        let err = Predictor::fit(PredictorKind::MultinomialLogistic, &x, &[0.0, 0.0], &space)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateTraining(_)));
    }

    #[test]
    fn one_nn_returns_exact_match_label() {
        let space = LabelSpace::Categorical { classes: 3 };
        let x = Tensor2::from_rows(&[[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]]).unwrap();
        let p = Predictor::fit(
            PredictorKind::KNearestNeighbor { k: 1 },
            &x,
            &[2.0, 0.0, 1.0],
            &space,
        )
        .unwrap();
        assert_eq!(
            p.predict(&Tensor2::from_rows(&[[1.0, 1.0]]).unwrap())
                .unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = Tensor2::column(&[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let p =
            Predictor::fit(PredictorKind::LeastSquares, &x, &y, &LabelSpace::Continuous).unwrap();
        let out = p.predict(&Tensor2::column(&[10.0])).unwrap();
        assert!((out[0] - 21.0).abs() < 1e-9);
    }
}
