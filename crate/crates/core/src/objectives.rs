//! NT-Xent contrastive loss, cross-entropy, and their sum, with analytic
//! gradients. All computations run in f64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub batch_pairs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.05,
            batch_pairs: 32,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_pairs == 0 {
            return Err(Error::config("batch_pairs must be at least 1"));
        }
        Ok(())
    }

    /// Number of views per batch.
    pub fn total_views(&self) -> usize {
        2 * self.batch_pairs
    }
}

/// Loss value and its gradient with respect to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn partner(i: usize) -> usize {
    i ^ 1
}

/// NT-Xent over `2|B|` embeddings of width `dim`, rows `(2i, 2i+1)` forming
/// positive pairs. The loss is summed over every view acting as anchor.
pub fn nt_xent(embeddings: &[f64], dim: usize, temperature: f64) -> Result<LossGrad> {
    if dim == 0 || embeddings.len() % dim != 0 {
        return Err(Error::input("embedding buffer is not a whole number of rows"));
    }
    let n = embeddings.len() / dim;
    if n < 2 || n % 2 != 0 {
        return Err(Error::input(format!(
            "NT-Xent needs an even number (>= 2) of views, got {n}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    let mut norms = Vec::with_capacity(n);
    let mut unit = vec![0.0; n * dim];
    for i in 0..n {
        let row = &embeddings[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::input(format!(
                "embedding {i} has norm {norm}; cosine similarity undefined"
            )));
        }
        for (u, v) in unit[i * dim..(i + 1) * dim].iter_mut().zip(row) {
            *u = v / norm;
        }
        norms.push(norm);
    }
    let u = |i: usize| &unit[i * dim..(i + 1) * dim];
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let s = u(i).iter().zip(u(k)).map(|(a, b)| a * b).sum::<f64>() / temperature;
            sim[i * n + k] = s;
            sim[k * n + i] = s;
        }
    }
    // dL/ds_ik, before symmetrization
    let mut ds = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let mut arg = if i == 0 { 1 } else { 0 };
        for k in (0..n).filter(|&k| k != i) {
            if row[k] > row[arg] {
                arg = k;
            }
        }
        let max = row[arg];
        let rest: f64 = (0..n)
            .filter(|&k| k != i && k != arg)
            .map(|k| (row[k] - max).exp())
            .sum();
        let denom = 1.0 + rest;
        let p = partner(i);
        loss += -(row[p] - max) + rest.ln_1p();
        for k in (0..n).filter(|&k| k != i) {
            ds[i * n + k] = (row[k] - max).exp() / denom;
        }
        ds[i * n + p] -= 1.0;
    }
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        let mut du = vec![0.0; dim];
        for k in (0..n).filter(|&k| k != i) {
            let coef = (ds[i * n + k] + ds[k * n + i]) / temperature;
            for (d, v) in du.iter_mut().zip(u(k)) {
                *d += coef * v;
            }
        }
        let ui = u(i);
        let dot: f64 = ui.iter().zip(&du).map(|(a, b)| a * b).sum();
        for ((g, d), v) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&du).zip(ui) {
            *g = (d - v * dot) / norms[i];
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Summed cross-entropy of softmax outputs `probs` (`[batch, classes]`)
/// against integer labels. The gradient is taken at the logits.
pub fn cross_entropy(probs: &[f64], labels: &[usize], classes: usize) -> Result<LossGrad> {
    if classes == 0 || probs.len() != labels.len() * classes {
        return Err(Error::input(format!(
            "probabilities hold {} values, expected {} x {classes}",
            probs.len(),
            labels.len()
        )));
    }
    let mut grad = probs.to_vec();
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::input(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let p = probs[b * classes + y];
        loss -= p.max(f64::MIN_POSITIVE).ln();
        grad[b * classes + y] -= 1.0;
    }
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub contrastive: f64,
    pub cross_entropy: f64,
    pub grad_embeddings: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// `L = L_cl + L_ce`.
pub fn combined_loss(
    embeddings: &[f64],
    dim: usize,
    probs: &[f64],
    labels: &[usize],
    classes: usize,
    temperature: f64,
) -> Result<CombinedLoss> {
    let cl = nt_xent(embeddings, dim, temperature)?;
    let ce = cross_entropy(probs, labels, classes)?;
    Ok(CombinedLoss {
        total: cl.loss + ce.loss,
        contrastive: cl.loss,
        cross_entropy: ce.loss,
        grad_embeddings: cl.grad,
        grad_logits: ce.grad,
    })
}
