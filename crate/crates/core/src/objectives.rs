//! Loss functions and metrics: target-task cross-entropy, negative-entropy
//! budget cost, worst-case ensemble selection, L1 reconstruction, multi-label
//! sigmoid loss, accuracy and class-based mean average precision.
//!
//! Everything here is a pure function; gradients are returned alongside values
//! where the trainer needs them.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewD};

use crate::error::{Error, Result};

/// Floor for probabilities entering a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

fn clamped_ln(p: f64) -> (f64, bool) {
    if p < LOG_CLAMP {
        (LOG_CLAMP.ln(), true)
    } else {
        (p.ln(), false)
    }
}

/// A composite loss with its logged sub-terms. The total must equal the
/// weighted sum of components within 1e-6; `check` verifies that.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub components: BTreeMap<&'static str, f64>,
}

impl LossValue {
    /// Recompute the total from `(weight, component)` pairs and compare.
    pub fn check(&self, weighted: &[(f64, &'static str)]) -> bool {
        let sum: f64 = weighted
            .iter()
            .map(|(w, name)| w * self.components.get(name).copied().unwrap_or(0.0))
            .sum();
        (sum - self.value).abs() <= 1e-6
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.components.values().all(|v| v.is_finite())
    }
}

/// Cross-entropy `-log p[label]` of a probability vector against a class
/// index. Returns the loss and whether the log had to be clamped.
pub fn target_loss(probs: ArrayView1<f64>, label: usize) -> (f64, bool) {
    let (ln, clamped) = clamped_ln(probs[label]);
    (-ln, clamped)
}

/// Gradient of `target_loss` w.r.t. the probability vector.
pub fn target_loss_grad(probs: ArrayView1<f64>, label: usize) -> Array1<f64> {
    let mut g = Array1::zeros(probs.len());
    g[label] = -1.0 / probs[label].max(LOG_CLAMP);
    g
}

/// Negative entropy `sum_k p_k log p_k`, with the `0 log 0 = 0` convention.
/// Minimized (at `-log K`) by the uniform vector.
pub fn neg_entropy(probs: ArrayView1<f64>) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum()
}

/// Gradient of `neg_entropy`: `log p + 1` (clamped near zero).
pub fn neg_entropy_grad(probs: ArrayView1<f64>) -> Array1<f64> {
    probs.mapv(|p| p.max(LOG_CLAMP).ln() + 1.0)
}

/// Worst-case selection over per-model budget costs: maximum value and its
/// index, ties broken by lowest index.
pub fn ensemble_budget_cost(costs: &[f64]) -> Result<(f64, usize)> {
    if costs.is_empty() {
        return Err(Error::validation("costs", "ensemble cost vector is empty"));
    }
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate().skip(1) {
        if c > costs[best] {
            best = i;
        }
    }
    Ok((costs[best], best))
}

/// Mean absolute elementwise difference.
pub fn l1_reconstruction(fd_x: ArrayViewD<f64>, x: ArrayViewD<f64>) -> Result<f64> {
    if fd_x.shape() != x.shape() {
        return Err(Error::validation(
            "shape",
            format!("{:?} vs {:?}", fd_x.shape(), x.shape()),
        ));
    }
    let n = fd_x.len() as f64;
    let sum: f64 = fd_x
        .iter()
        .zip(x.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n)
}

/// Gradient of `l1_reconstruction` w.r.t. its first argument.
pub fn l1_reconstruction_grad(fd_x: ArrayViewD<f64>, x: ArrayViewD<f64>) -> ndarray::ArrayD<f64> {
    let n = fd_x.len() as f64;
    let mut g = ndarray::ArrayD::zeros(fd_x.raw_dim());
    for ((a, b), gv) in fd_x.iter().zip(x.iter()).zip(g.iter_mut()) {
        *gv = (a - b).signum() / n;
    }
    g
}

/// Binary cross-entropy between `sigmoid(logit)` and a binary label, summed
/// over attributes, in the numerically stable log-sum-exp form. Summing (not
/// averaging) keeps the gradient scale on par with the K-way cross-entropy
/// used in identity mode, so both modes train at comparable rates under the
/// same learning rate.
pub fn multilabel_sigmoid_loss(logits: ArrayView1<f64>, labels: &[u8]) -> f64 {
    assert_eq!(logits.len(), labels.len());
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
}

/// Gradient of `multilabel_sigmoid_loss` w.r.t. the logits.
pub fn multilabel_sigmoid_grad(logits: ArrayView1<f64>, labels: &[u8]) -> Array1<f64> {
    Array1::from_iter(
        logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| sigmoid(z) - y as f64),
    )
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-attribute binary negative entropy, summed over attributes:
/// `sum_k [ p log p + (1-p) log(1-p) ]`, minimized at p = 0.5 everywhere.
/// Summed for the same gradient-scale parity as the identity-mode
/// `neg_entropy`, which sums over classes.
pub fn attribute_neg_entropy(probs: ArrayView1<f64>) -> f64 {
    probs
        .iter()
        .map(|&p| {
            let a = if p > 0.0 { p * p.ln() } else { 0.0 };
            let q = 1.0 - p;
            let b = if q > 0.0 { q * q.ln() } else { 0.0 };
            a + b
        })
        .sum::<f64>()
}

/// Gradient of `attribute_neg_entropy` w.r.t. the per-attribute probabilities.
pub fn attribute_neg_entropy_grad(probs: ArrayView1<f64>) -> Array1<f64> {
    probs.mapv(|p| p.max(LOG_CLAMP).ln() - (1.0 - p).max(LOG_CLAMP).ln())
}

/// Argmax with ties broken by lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(predictions: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(predictions.nrows(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Class-based mean average precision over an `S x K` score matrix against
/// binary labels. Attributes without any positive are excluded from the mean;
/// the excluded column indices are reported. Ranking is by descending score,
/// ties by ascending sample index.
pub fn class_mean_ap(scores: &Array2<f64>, labels: &Array2<u8>) -> Result<(f64, Vec<usize>)> {
    if scores.dim() != (labels.nrows(), labels.ncols()) {
        return Err(Error::validation(
            "labels",
            format!("{:?} vs {:?}", scores.dim(), labels.dim()),
        ));
    }
    let (s, k) = scores.dim();
    let mut excluded = Vec::new();
    let mut ap_sum = 0.0;
    let mut included = 0usize;
    for col in 0..k {
        let positives = (0..s).filter(|&i| labels[[i, col]] != 0).count();
        if positives == 0 {
            excluded.push(col);
            continue;
        }
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| {
            scores[[b, col]]
                .partial_cmp(&scores[[a, col]])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut prec_sum = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            if labels[[idx, col]] != 0 {
                hits += 1;
                prec_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += prec_sum / positives as f64;
        included += 1;
    }
    if included == 0 {
        return Err(Error::UndefinedMetric(
            "every attribute column is positive-free".into(),
        ));
    }
    Ok((ap_sum / included as f64, excluded))
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward through a row-wise softmax: given dL/dp and p, return dL/dz.
pub fn softmax_rows_backward(dprobs: &Array2<f64>, probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(dprobs.raw_dim());
    for (mut orow, (drow, prow)) in out
        .rows_mut()
        .into_iter()
        .zip(dprobs.rows().into_iter().zip(probs.rows()))
    {
        let dot: f64 = drow.iter().zip(prow.iter()).map(|(d, p)| d * p).sum();
        for ((o, &d), &p) in orow.iter_mut().zip(drow.iter()).zip(prow.iter()) {
            *o = p * (d - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn target_loss_examples() {
        let one_hot = array![0.0, 1.0, 0.0];
        assert_abs_diff_eq!(target_loss(one_hot.view(), 1).0, 0.0, epsilon = 1e-12);

        let uniform = Array1::from_elem(8, 0.125);
        assert_abs_diff_eq!(
            target_loss(uniform.view(), 3).0,
            (8.0f64).ln(),
            epsilon = 1e-12
        );

        let p = array![0.7, 0.2, 0.1];
        assert_abs_diff_eq!(target_loss(p.view(), 0).0, 0.35667, epsilon = 1e-5);
    }

    #[test]
    fn target_loss_clamps_degenerate_mass() {
        let p = array![0.0, 1.0];
        let (v, clamped) = target_loss(p.view(), 0);
        assert!(clamped);
        assert!(v.is_finite());
    }

    #[test]
    fn neg_entropy_examples() {
        let uniform = Array1::from_elem(13, 1.0 / 13.0);
        assert_abs_diff_eq!(
            neg_entropy(uniform.view()),
            -(13.0f64).ln(),
            epsilon = 1e-12
        );

        let one_hot = array![0.0, 0.0, 1.0];
        assert_abs_diff_eq!(neg_entropy(one_hot.view()), 0.0, epsilon = 1e-12);

        let two_point = array![0.5, 0.5, 0.0, 0.0];
        assert_abs_diff_eq!(
            neg_entropy(two_point.view()),
            -(2.0f64).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ensemble_cost_examples() {
        assert_eq!(ensemble_budget_cost(&[0.3, 0.9, 0.5]).unwrap(), (0.9, 1));
        assert_eq!(ensemble_budget_cost(&[0.42]).unwrap(), (0.42, 0));
        assert!(ensemble_budget_cost(&[]).is_err());
        // argmax shift-invariance
        let base = [0.1, 0.8, 0.3, 0.8];
        let (_, i0) = ensemble_budget_cost(&base).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 5.0).collect();
        let (_, i1) = ensemble_budget_cost(&shifted).unwrap();
        assert_eq!(i0, i1);
        assert_eq!(i0, 1, "ties break to lowest index");
    }

    #[test]
    fn l1_examples() {
        let a = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[2, 3]), 0.5);
        let b = ndarray::ArrayD::zeros(ndarray::IxDyn(&[2, 3]));
        assert_abs_diff_eq!(
            l1_reconstruction(a.view(), b.view()).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            l1_reconstruction(a.view(), a.view()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let c = ndarray::ArrayD::zeros(ndarray::IxDyn(&[2, 4]));
        assert!(l1_reconstruction(a.view(), c.view()).is_err());
    }

    #[test]
    fn multilabel_examples() {
        let zeros = Array1::zeros(5);
        let labels = [1u8, 0, 1, 0, 1];
        assert_abs_diff_eq!(
            multilabel_sigmoid_loss(zeros.view(), &labels),
            5.0 * (2.0f64).ln(),
            epsilon = 1e-12
        );
        let hot = array![50.0];
        assert!(multilabel_sigmoid_loss(hot.view(), &[1]) < 1e-6);
    }

    #[test]
    fn attribute_neg_entropy_examples() {
        let half = Array1::from_elem(7, 0.5);
        assert_abs_diff_eq!(
            attribute_neg_entropy(half.view()),
            -7.0 * (2.0f64).ln(),
            epsilon = 1e-12
        );
        let extreme = array![0.0, 1.0, 1.0, 0.0];
        assert_abs_diff_eq!(attribute_neg_entropy(extreme.view()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let p = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        assert_abs_diff_eq!(accuracy(&p, &[0, 1, 0, 1]), 1.0);
        assert_abs_diff_eq!(accuracy(&p, &[1, 0, 1, 0]), 0.0);
        assert_abs_diff_eq!(accuracy(&p, &[0, 1, 0, 0]), 0.75);
    }

    #[test]
    fn cmap_examples() {
        // perfect ranking
        let scores = array![[0.9, 0.8], [0.5, 0.9], [0.1, 0.2]];
        let labels = array![[1u8, 0], [1, 1], [0, 0]];
        let (map, excl) = class_mean_ap(&scores, &labels).unwrap();
        assert!(excl.is_empty());
        assert_abs_diff_eq!(map, 1.0, epsilon = 1e-12);

        // single attribute, AP = 0.5
        let scores = array![[0.9], [0.8], [0.7]];
        let labels = array![[0u8], [1], [0]];
        let (map, _) = class_mean_ap(&scores, &labels).unwrap();
        assert_abs_diff_eq!(map, 0.5, epsilon = 1e-12);

        // all columns positive-free -> error
        let labels = array![[0u8], [0], [0]];
        assert!(class_mean_ap(&scores, &labels).is_err());
    }

    #[test]
    fn cmap_monotone_transform_invariance() {
        let scores = array![[0.9, 0.2], [0.5, 0.7], [0.1, 0.4], [0.7, 0.3]];
        let labels = array![[1u8, 0], [0, 1], [1, 0], [0, 1]];
        let (m1, _) = class_mean_ap(&scores, &labels).unwrap();
        let transformed = scores.mapv(|v| (3.0 * v + 1.0).exp());
        let (m2, _) = class_mean_ap(&transformed, &labels).unwrap();
        assert_abs_diff_eq!(m1, m2, epsilon = 1e-12);
    }

    #[test]
    fn loss_value_decomposition_check() {
        let mut components = BTreeMap::new();
        components.insert("utility", 0.7);
        components.insert("budget", -1.2);
        components.insert("reconstruction", 0.05);
        let lv = LossValue {
            value: 0.7 + 2.0 * -1.2 + 1.0 * 0.05,
            components,
        };
        assert!(lv.check(&[(1.0, "utility"), (2.0, "budget"), (1.0, "reconstruction")]));
    }
}
