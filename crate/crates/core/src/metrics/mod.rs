//! k-means readout and external clustering metrics (ACC, NMI, purity).

mod hungarian;
mod kmeans;

pub use hungarian::min_cost_assignment;
pub use kmeans::{kmeans, kmeans_run, ClusteringResult, KMeansConfig, LloydRun};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The evaluation triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub pur: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<ClusterMetrics> {
    Ok(ClusterMetrics {
        acc: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        pur: purity(pred, truth)?,
    })
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Precondition(format!(
            "label length mismatch: predicted {} vs truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Precondition("no labels to compare".into()));
    }
    Ok(())
}

/// Dense contingency table, `table[p][t]` = count of samples with predicted
/// cluster `p` and true class `t`.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<usize>> {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    table
}

/// Clustering accuracy under the best one-to-one matching of predicted
/// clusters to classes, found with the Hungarian method.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let k = table.len().max(table[0].len());
    let max = pred.len() as f64;
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|p| {
            (0..k)
                .map(|t| max - table.get(p).and_then(|r| r.get(t)).copied().unwrap_or(0) as f64)
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    let matched: usize = assignment
        .iter()
        .enumerate()
        .map(|(p, &t)| table.get(p).and_then(|r| r.get(t)).copied().unwrap_or(0))
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Mutual information normalised by the geometric mean of the two entropies
/// (natural logarithms). Two single-cluster partitions score 1; a
/// single-cluster partition against a non-trivial one scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let table = contingency(pred, truth);
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let col: Vec<f64> = (0..table[0].len())
        .map(|t| table.iter().map(|r| r[t]).sum::<usize>() as f64)
        .collect();
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let (hp, ht) = (entropy(&row), entropy(&col));
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (p, r) in table.iter().enumerate() {
        for (t, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * (n * c / (row[p] * col[t])).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of samples that belong to the majority class of their cluster.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let hits: usize = table
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters contribute 0.
pub fn silhouette(data: &Tensor, labels: &[usize]) -> Result<f64> {
    if data.rows() != labels.len() {
        return Err(Error::Precondition(format!(
            "{} rows but {} labels",
            data.rows(),
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes = labels.iter().fold(vec![0usize; k], |mut acc, &l| {
        acc[l] += 1;
        acc
    });
    let n = data.rows();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sums[labels[j]] += d;
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / n as f64)
}
