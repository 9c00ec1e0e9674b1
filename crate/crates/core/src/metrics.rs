//! Embedding quality: kNN recall, kNN classification accuracy, silhouette.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Embedding};
use crate::error::{invalid, Result};

pub const DEFAULT_K_RECALL: usize = 15;
pub const DEFAULT_K_ACCURACY: usize = 10;

/// Serialized with fixed keys; fields that need labels are `null` without them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub knn_recall: f64,
    pub knn_accuracy: Option<f64>,
    pub silhouette: Option<f64>,
    pub k_recall: usize,
    pub k_accuracy: Option<usize>,
}

fn nearest(points: &[f64], dim: usize, i: usize, k: usize) -> Vec<usize> {
    let n = points.len() / dim;
    let xi = &points[i * dim..(i + 1) * dim];
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| {
            let xj = &points[j * dim..(j + 1) * dim];
            (xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 1 || k + 1 > n {
        return Err(invalid(format!("k = {k} out of range 1..={}", n.saturating_sub(1))));
    }
    Ok(())
}

/// Mean fraction of each sample's input-space kNN that are also its
/// embedding-space kNN.
pub fn knn_recall(data: &Dataset, emb: &Embedding, k: usize) -> Result<f64> {
    let n = data.len();
    if emb.len() != n {
        return Err(invalid("embedding and dataset sizes differ"));
    }
    check_k(k, n)?;
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut high = nearest(data.points(), data.dim(), i, k);
            high.sort_unstable();
            nearest(emb.coords(), emb.dim(), i, k)
                .iter()
                .filter(|j| high.binary_search(j).is_ok())
                .count()
        })
        .sum();
    Ok(hits as f64 / (n * k) as f64)
}

/// Leave-one-out `k`-NN majority vote in the embedding; vote ties go to
/// the smaller label.
pub fn knn_accuracy(labels: &[usize], emb: &Embedding, k: usize) -> Result<f64> {
    let n = emb.len();
    if labels.len() != n {
        return Err(invalid("label count differs from embedding rows"));
    }
    check_k(k, n)?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(invalid("knn accuracy needs at least two classes"));
    }
    let correct: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut votes = vec![0usize; n_classes];
            for j in nearest(emb.coords(), emb.dim(), i, k) {
                votes[labels[j]] += 1;
            }
            let best = votes
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (l, &v)| if v > acc.1 { (l, v) } else { acc })
                .0;
            usize::from(best == labels[i])
        })
        .sum();
    Ok(correct as f64 / n as f64)
}

/// Mean silhouette coefficient with Euclidean distances.
pub fn silhouette(labels: &[usize], emb: &Embedding) -> Result<f64> {
    let n = emb.len();
    if labels.len() != n {
        return Err(invalid("label count differs from embedding rows"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_classes];
    for &l in labels {
        sizes[l] += 1;
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| sizes[c] > 0).collect();
    if present.len() < 2 {
        return Err(invalid("silhouette needs at least two classes"));
    }
    if let Some(c) = present.iter().find(|&&c| sizes[c] < 2) {
        return Err(invalid(format!("class {c} has a single member")));
    }
    // per-sample values collected first so the final sum has a fixed order
    let per_sample: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; n_classes];
            let zi = emb.row(i);
            for j in 0..n {
                if j != i {
                    let d: f64 = zi
                        .iter()
                        .zip(emb.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    sums[labels[j]] += d;
                }
            }
            let own = labels[i];
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = present
                .iter()
                .filter(|&&c| c != own)
                .map(|&c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_sample.iter().sum::<f64>() / n as f64)
}

/// Recall always; accuracy and silhouette when labels permit.
pub fn quality_report(data: &Dataset, emb: &Embedding, k_recall: usize, k_accuracy: usize) -> Result<QualityReport> {
    let n = data.len();
    let k_recall = k_recall.min(n.saturating_sub(1)).max(1);
    let knn_recall = knn_recall(data, emb, k_recall)?;
    let (mut acc, mut sil, mut k_acc) = (None, None, None);
    if let Some(labels) = data.labels() {
        let k = k_accuracy.min(n.saturating_sub(1)).max(1);
        if let Ok(a) = knn_accuracy(labels, emb, k) {
            acc = Some(a);
            k_acc = Some(k);
        }
        sil = silhouette(labels, emb).ok();
    }
    Ok(QualityReport {
        knn_recall,
        knn_accuracy: acc,
        silhouette: sil,
        k_recall,
        k_accuracy: k_acc,
    })
}
