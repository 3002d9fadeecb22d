//! Per-domain datasets, CSV ingestion and seeded splitting.

mod csvio;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use csvio::{load_csv, save_csv, CsvSchema};
pub use synthetic::{make_synthetic, GroundTruth, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor2};

/// Whether labels are class codes or real values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSpace {
    Categorical { classes: usize },
    Continuous,
}

impl LabelSpace {
    pub fn classes(&self) -> Option<usize> {
        match self {
            LabelSpace::Categorical { classes } => Some(*classes),
            LabelSpace::Continuous => None,
        }
    }

    /// Width of the label block in a generator input.
    pub fn encoded_width(&self) -> usize {
        self.classes().unwrap_or(1)
    }

    /// One-hot rows for categorical labels, the raw value otherwise.
    pub fn encode(&self, labels: &[f64]) -> Tensor2 {
        match self {
            LabelSpace::Categorical { classes } => {
                let mut t = Tensor2::zeros(labels.len(), *classes);
                for (r, &y) in labels.iter().enumerate() {
                    t.set(r, y as usize, 1.0);
                }
                t
            }
            LabelSpace::Continuous => Tensor2::column(labels),
        }
    }

    /// Infers the label space from observed labels: all-integral non-negative
    /// codes with at most `max_classes` distinct values count as categorical.
    pub fn infer(labels: &[f64], max_classes: usize) -> Self {
        let integral = labels.iter().all(|y| y.fract() == 0.0 && *y >= 0.0);
        let max = labels.iter().cloned().fold(0.0, f64::max) as usize;
        if integral && max < max_classes {
            LabelSpace::Categorical { classes: max + 1 }
        } else {
            LabelSpace::Continuous
        }
    }

    pub fn check(&self, labels: &[f64]) -> Result<()> {
        if let LabelSpace::Categorical { classes } = self {
            if let Some(bad) = labels
                .iter()
                .find(|y| !(y.fract() == 0.0 && **y >= 0.0 && (**y as usize) < *classes))
            {
                return Err(Error::contract(format!("label {bad} outside 0..{classes}")));
            }
        }
        Ok(())
    }
}

/// One domain's sample: features, optional labels and the domain id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain: String,
    pub x: Tensor2,
    pub y: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl DomainDataset {
    pub fn new(
        domain: impl Into<String>,
        x: Tensor2,
        y: Option<Vec<f64>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if feature_names.len() != x.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.cols()
            )));
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    y.len(),
                    x.rows()
                )));
            }
        }
        Ok(Self {
            domain: domain.into(),
            x,
            y,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::Data(format!("domain `{}` has no labels", self.domain)))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Keeps the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            domain: self.domain.clone(),
            x: self.x.select_rows(rows),
            y: self
                .y
                .as_ref()
                .map(|y| rows.iter().map(|&i| y[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Copy without labels, as seen in a target domain.
    pub fn unlabeled(&self) -> Self {
        Self {
            y: None,
            ..self.clone()
        }
    }
}

/// Checks that every dataset shares one feature layout.
pub fn check_consistent(datasets: &[&DomainDataset]) -> Result<()> {
    let Some(first) = datasets.first() else {
        return Ok(());
    };
    for d in datasets {
        if d.feature_names != first.feature_names {
            return Err(Error::Data(format!(
                "domain `{}` has features {:?}, expected {:?}",
                d.domain, d.feature_names, first.feature_names
            )));
        }
    }
    Ok(())
}

/// Seeded train/held-out split. Labeled data is stratified: each class
/// receives `floor` or `ceil` of its proportional share.
pub fn split(
    dataset: &DomainDataset,
    fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::contract(format!(
            "fraction {fraction} of {n} rows leaves one side empty"
        )));
    }
    let mut rng = Rng::new(seed);

    // Group rows by label value (a single group when unlabeled).
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let key = dataset.y.as_ref().map_or(0.0, |y| y[i]);
        match groups
            .iter_mut()
            .find(|(k, _)| k.to_bits() == key.to_bits())
        {
            Some((_, rows)) => rows.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, rows) in groups.iter_mut() {
        rng.shuffle(rows);
    }

    // Largest-remainder allocation with seeded tie-breaking.
    let mut quota: Vec<usize> = groups
        .iter()
        .map(|(_, rows)| (fraction * rows.len() as f64).floor() as usize)
        .collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    rng.shuffle(&mut order);
    order.sort_by(|&a, &b| {
        let ra = fraction * groups[a].1.len() as f64 - quota[a] as f64;
        let rb = fraction * groups[b].1.len() as f64 - quota[b] as f64;
        rb.total_cmp(&ra)
    });
    for &g in order.iter().take(n_train.saturating_sub(assigned)) {
        quota[g] += 1;
    }

    let mut train = Vec::with_capacity(n_train);
    let mut held = Vec::with_capacity(n - n_train);
    for ((_, rows), q) in groups.iter().zip(&quota) {
        train.extend_from_slice(&rows[..*q]);
        held.extend_from_slice(&rows[*q..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&held)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(n: usize, labels: Option<Vec<f64>>) -> DomainDataset {
        let x = Tensor2::column(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
        DomainDataset::new("d", x, labels, vec!["f".into()]).unwrap()
    }

    #[test]
    fn split_sizes() {
        let (a, b) = split(&ds(10, None), 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_covering() {
        let d = ds(17, Some((0..17).map(|i| (i % 3) as f64).collect()));
        let (a1, b1) = split(&d, 0.6, 99).unwrap();
        let (a2, b2) = split(&d, 0.6, 99).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let mut all: Vec<f64> = a1.x.data().iter().chain(b1.x.data()).cloned().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..17).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<f64> = (0..10).map(|i| if i < 6 { 0.0 } else { 1.0 }).collect();
        let (a, _) = split(&ds(10, Some(labels)), 0.5, 1).unwrap();
        let y = a.y.unwrap();
        assert_eq!(y.iter().filter(|v| **v == 0.0).count(), 3);
        assert_eq!(y.iter().filter(|v| **v == 1.0).count(), 2);
    }

    #[test]
    fn split_rejects_empty_side() {
        assert!(split(&ds(3, None), 0.1, 0).is_err());
        assert!(split(&ds(3, None), 1.0, 0).is_err());
    }

    #[test]
    fn label_space_encoding() {
        let s = LabelSpace::Categorical { classes: 3 };
        let t = s.encode(&[2.0, 0.0]);
        assert_eq!(t.row(0), &[0.0, 0.0, 1.0]);
        assert!(s.check(&[3.0]).is_err());
        assert_eq!(
            LabelSpace::infer(&[0.0, 1.0, 1.0], 32),
            LabelSpace::Categorical { classes: 2 }
        );
        assert_eq!(LabelSpace::infer(&[0.5], 32), LabelSpace::Continuous);
    }
}
