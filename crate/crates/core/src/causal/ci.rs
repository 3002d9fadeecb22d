use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MixedGraph;
use crate::error::{Error, Result};
use crate::numerics::{linalg, Tensor2};

/// Outcome of one conditional-independence test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiTestResult {
    pub i: usize,
    pub j: usize,
    pub z: Vec<usize>,
    pub statistic: f64,
    /// Two-sided normal tail of the statistic.
    pub p_value: f64,
    pub independent: bool,
}

/// Anything that can decide `i ⫫ j | Z`.
pub trait CiTest: Sync {
    fn test(&self, i: usize, j: usize, z: &[usize]) -> Result<CiTestResult>;
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `Φ⁻¹(1 - α/2)`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!(
            "significance level must lie in (0,1), got {alpha}"
        )));
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// `√(n-|Z|-3) · atanh(r)`, with `r` clamped just inside `(-1, 1)`.
pub fn fisher_z_statistic(r: f64, n: usize, z_len: usize) -> f64 {
    let r = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    ((n - z_len - 3) as f64).sqrt() * 0.5 * ((1.0 + r) / (1.0 - r)).ln()
}

/// Partial correlation of `(i, j)` given `z` from a correlation matrix.
pub fn partial_correlation(corr: &DMatrix<f64>, i: usize, j: usize, z: &[usize]) -> Result<f64> {
    if z.is_empty() {
        return Ok(corr[(i, j)]);
    }
    let idx: Vec<usize> = [i, j].into_iter().chain(z.iter().copied()).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| corr[(idx[a], idx[b])]);
    let p = linalg::spd_inverse(&sub).map_err(|_| {
        Error::NumericalDegeneracy(format!(
            "singular correlation submatrix for ({i},{j}) given {z:?}"
        ))
    })?;
    Ok(-p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt())
}

/// Fisher-z test over a precomputed correlation matrix.
#[derive(Clone, Debug)]
pub struct FisherZ {
    corr: DMatrix<f64>,
    n: usize,
    alpha: f64,
    critical: f64,
}

impl FisherZ {
    pub fn new(data: &Tensor2, alpha: f64) -> Result<Self> {
        let critical = critical_value(alpha)?;
        Ok(Self {
            corr: linalg::correlation_matrix(data)?,
            n: data.rows(),
            alpha,
            critical,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vars(&self) -> usize {
        self.corr.nrows()
    }
}

impl CiTest for FisherZ {
    fn test(&self, i: usize, j: usize, z: &[usize]) -> Result<CiTestResult> {
        let d = self.vars();
        if i >= d || j >= d || z.iter().any(|&k| k >= d) {
            return Err(Error::contract(format!(
                "column index out of range for {d} variables"
            )));
        }
        if self.n <= z.len() + 3 {
            return Err(Error::contract(format!(
                "Fisher-z needs n > |Z| + 3, got n={} and |Z|={}",
                self.n,
                z.len()
            )));
        }
        let r = partial_correlation(&self.corr, i, j, z)?;
        let statistic = fisher_z_statistic(r, self.n, z.len());
        let p_value = 2.0 * (1.0 - std_normal().cdf(statistic.abs()));
        Ok(CiTestResult {
            i,
            j,
            z: z.to_vec(),
            statistic,
            p_value,
            independent: statistic.abs() <= self.critical,
        })
    }
}

/// One Fisher-z test on raw data.
pub fn fisher_z_test(
    data: &Tensor2,
    i: usize,
    j: usize,
    z: &[usize],
    alpha: f64,
) -> Result<CiTestResult> {
    FisherZ::new(data, alpha)?.test(i, j, z)
}

/// Exact independence answers from d-separation in a known DAG.
#[derive(Clone, Debug)]
pub struct DSeparation {
    parents: Vec<Vec<usize>>,
}

impl DSeparation {
    pub fn new(dag: &MixedGraph) -> Result<Self> {
        if !dag.is_acyclic() {
            return Err(Error::contract("d-separation needs an acyclic graph"));
        }
        Ok(Self {
            parents: (0..dag.len()).map(|i| dag.parents(i)).collect(),
        })
    }

    /// Moralized ancestral graph criterion.
    pub fn separated(&self, i: usize, j: usize, z: &[usize]) -> bool {
        let n = self.parents.len();
        let mut keep = vec![false; n];
        let mut stack: Vec<usize> = [i, j].into_iter().chain(z.iter().copied()).collect();
        while let Some(v) = stack.pop() {
            if !keep[v] {
                keep[v] = true;
                stack.extend(&self.parents[v]);
            }
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for v in (0..n).filter(|&v| keep[v]) {
            let ps = &self.parents[v];
            for (a, &p) in ps.iter().enumerate() {
                adj[v].insert(p);
                adj[p].insert(v);
                for &q in &ps[a + 1..] {
                    adj[p].insert(q);
                    adj[q].insert(p);
                }
            }
        }
        let blocked: BTreeSet<usize> = z.iter().copied().collect();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        while let Some(v) = queue.pop_front() {
            if v == j {
                return false;
            }
            for &w in &adj[v] {
                if keep[w] && !seen[w] && !blocked.contains(&w) {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        true
    }
}

impl CiTest for DSeparation {
    fn test(&self, i: usize, j: usize, z: &[usize]) -> Result<CiTestResult> {
        let independent = self.separated(i, j, z);
        Ok(CiTestResult {
            i,
            j,
            z: z.to_vec(),
            statistic: if independent { 0.0 } else { f64::INFINITY },
            p_value: if independent { 1.0 } else { 0.0 },
            independent,
        })
    }
}
