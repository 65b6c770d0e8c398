//! Batch-all triplet loss over strip embeddings plus per-strip softmax
//! cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Embeddings of a P×K batch with their subject labels.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddingBatch<T> {
    /// One `num_strips × embed_dim` matrix per item.
    pub embeddings: Vec<Matrix<T>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub triplet: f64,
    pub cross_entropy: f64,
    pub total: f64,
    pub nonzero_triplet_fraction: f64,
}

/// Relative weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub triplet: f64,
    pub cross_entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { triplet: 1.0, cross_entropy: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TripletOutput<T> {
    pub loss: T,
    pub nonzero_fraction: f64,
    /// Gradient with respect to each embedding, when requested.
    pub grad: Option<Vec<Matrix<T>>>,
}

fn strip_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

fn check_batch<T: Scalar>(embeddings: &[Matrix<T>], labels: &[usize]) -> Result<(usize, usize)> {
    if embeddings.len() != labels.len() {
        return Err(GaitError::Data(format!("{} embeddings but {} labels", embeddings.len(), labels.len())));
    }
    let first = embeddings.first().ok_or_else(|| GaitError::Data("empty batch".into()))?;
    let (strips, dim) = (first.rows(), first.cols());
    if embeddings.iter().any(|e| e.rows() != strips || e.cols() != dim) {
        return Err(GaitError::Data("embeddings in a batch must share one shape".into()));
    }
    Ok((strips, dim))
}

/// Batch-all triplet loss. For each strip, every `(a, p, n)` with
/// `label(a) = label(p) ≠ label(n)`, `a ≠ p` contributes
/// `max(0, d(a,p) − d(a,n) + margin)`; each strip averages over its
/// nonzero terms and strips are averaged.
pub fn triplet_loss<T: Scalar>(embeddings: &[Matrix<T>], labels: &[usize], margin: T, want_grad: bool) -> Result<TripletOutput<T>> {
    let (strips, dim) = check_batch(embeddings, labels)?;
    let n = embeddings.len();
    let mut triplets_per_strip = 0usize;
    for a in 0..n {
        let pos = (0..n).filter(|&p| p != a && labels[p] == labels[a]).count();
        let neg = (0..n).filter(|&q| labels[q] != labels[a]).count();
        triplets_per_strip += pos * neg;
    }
    if triplets_per_strip == 0 {
        return Err(GaitError::Data(
            "batch has no valid triplet: need at least 2 subjects with 2 sequences each".into(),
        ));
    }

    let strip_weight = T::one() / T::from_usize_lossy(strips);
    let mut grad = want_grad.then(|| vec![Matrix::zeros(strips, dim); n]);
    let mut total = T::zero();
    let mut nonzero_total = 0usize;
    let mut dist = vec![T::zero(); n * n];
    let mut coeff = vec![T::zero(); n * n];
    for s in 0..strips {
        for i in 0..n {
            for j in (i + 1)..n {
                let d = strip_distance(embeddings[i].row(s), embeddings[j].row(s));
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        coeff.fill(T::zero());
        let mut sum = T::zero();
        let mut count = 0usize;
        for a in 0..n {
            for p in 0..n {
                if p == a || labels[p] != labels[a] {
                    continue;
                }
                for q in 0..n {
                    if labels[q] == labels[a] {
                        continue;
                    }
                    let l = dist[a * n + p] - dist[a * n + q] + margin;
                    if l > T::zero() {
                        sum += l;
                        count += 1;
                        coeff[a * n + p] += T::one();
                        coeff[a * n + q] -= T::one();
                    }
                }
            }
        }
        nonzero_total += count;
        if count == 0 {
            continue;
        }
        let scale = strip_weight / T::from_usize_lossy(count);
        total += sum * scale;
        if let Some(grad) = grad.as_mut() {
            for a in 0..n {
                for b in 0..n {
                    let c = coeff[a * n + b];
                    let d = dist[a * n + b];
                    if c == T::zero() || d == T::zero() {
                        continue;
                    }
                    // ∂d(a,b)/∂e_a = (e_a − e_b)/d, and the opposite for e_b
                    let f = c * scale / d;
                    for k in 0..dim {
                        let diff = embeddings[a].get(s, k) - embeddings[b].get(s, k);
                        let ga = grad[a].get(s, k) + f * diff;
                        grad[a].set(s, k, ga);
                        let gb = grad[b].get(s, k) - f * diff;
                        grad[b].set(s, k, gb);
                    }
                }
            }
        }
    }
    Ok(TripletOutput {
        loss: total,
        nonzero_fraction: nonzero_total as f64 / (triplets_per_strip * strips) as f64,
        grad,
    })
}

/// Softmax cross-entropy per strip, averaged over strips and items.
/// Returns the loss and, when requested, per-item logit gradients.
pub fn cross_entropy_loss<T: Scalar>(logits: &[Matrix<T>], labels: &[usize], want_grad: bool) -> Result<(T, Option<Vec<Matrix<T>>>)> {
    let (strips, classes) = check_batch(logits, labels)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(GaitError::Data(format!("label {bad} outside [0, {classes})")));
    }
    let norm = T::one() / T::from_usize_lossy(strips * logits.len());
    let mut total = T::zero();
    let mut grads = want_grad.then(|| Vec::with_capacity(logits.len()));
    for (z, &label) in logits.iter().zip(labels) {
        let mut g = Matrix::zeros(strips, classes);
        for s in 0..strips {
            let row = z.row(s);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            total += (log_z - row[label]) * norm;
            if grads.is_some() {
                let grow = g.row_mut(s);
                for (c, slot) in grow.iter_mut().enumerate() {
                    let p = (row[c] - log_z).exp();
                    *slot = (p - if c == label { T::one() } else { T::zero() }) * norm;
                }
            }
        }
        if let Some(gs) = grads.as_mut() {
            gs.push(g);
        }
    }
    Ok((total, grads))
}

/// Gradients of the combined objective.
#[derive(Debug, Clone)]
pub struct LossGrads<T> {
    pub embeddings: Vec<Matrix<T>>,
    pub logits: Vec<Matrix<T>>,
}

/// `weights.triplet · triplet + weights.cross_entropy · CE`, with gradients.
pub fn combined_loss<T: Scalar>(
    embeddings: &[Matrix<T>],
    logits: &[Matrix<T>],
    labels: &[usize],
    margin: T,
    weights: LossWeights,
    want_grad: bool,
) -> Result<(LossReport, Option<LossGrads<T>>)> {
    let trip = triplet_loss(embeddings, labels, margin, want_grad)?;
    let (ce, ce_grad) = cross_entropy_loss(logits, labels, want_grad)?;
    let (wt, wc) = (T::lit(weights.triplet), T::lit(weights.cross_entropy));
    let report = LossReport {
        triplet: trip.loss.as_f64(),
        cross_entropy: ce.as_f64(),
        total: (wt * trip.loss + wc * ce).as_f64(),
        nonzero_triplet_fraction: trip.nonzero_fraction,
    };
    let grads = match (trip.grad, ce_grad) {
        (Some(mut ge), Some(mut gl)) => {
            for m in &mut ge {
                m.as_mut_slice().iter_mut().for_each(|v| *v *= wt);
            }
            for m in &mut gl {
                m.as_mut_slice().iter_mut().for_each(|v| *v *= wc);
            }
            Some(LossGrads { embeddings: ge, logits: gl })
        }
        _ => None,
    };
    Ok((report, grads))
}
