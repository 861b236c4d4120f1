//! Negative-sampling objective: loss and analytic gradients.
//!
//! One prediction scores a combined input vector `h` against the output row
//! of the true target word and the rows of a few sampled noise words:
//!
//! ```text
//! L = softplus(-h.t) + sum_n softplus(h.o_n)
//! ```
//!
//! which is the usual `-ln sigma(h.t) - sum_n ln sigma(-h.o_n)` written in a
//! form that stays finite for large scores. The gradient wrt each dot
//! product is `sigma(x) - label`, and the input gradient is the
//! label-weighted sum of output rows. Everything here is pure math on
//! slices; row bookkeeping lives in the parent module.

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Loss of one prediction given the combined input and output rows.
pub fn ns_loss(h: &[f64], target_out: &[f64], negative_outs: &[&[f64]]) -> f64 {
    let mut loss = softplus(-dot(h, target_out));
    for neg in negative_outs {
        loss += softplus(dot(h, neg));
    }
    loss
}

/// Gradients of [`ns_loss`] wrt the combined input and every output row.
#[derive(Debug, Clone, PartialEq)]
pub struct NsGradients {
    /// dL/dh; callers divide by the number of contributing input rows.
    pub d_input: Vec<f64>,
    /// dL/d(target output row).
    pub d_target: Vec<f64>,
    /// dL/d(negative output row), in sample order.
    pub d_negatives: Vec<Vec<f64>>,
}

pub fn ns_gradients(h: &[f64], target_out: &[f64], negative_outs: &[&[f64]]) -> NsGradients {
    let dim = h.len();
    let mut d_input = vec![0.0; dim];

    let g_target = sigmoid(dot(h, target_out)) - 1.0;
    let d_target: Vec<f64> = h.iter().map(|&hj| g_target * hj).collect();
    for (di, &tj) in d_input.iter_mut().zip(target_out) {
        *di += g_target * tj;
    }

    let mut d_negatives = Vec::with_capacity(negative_outs.len());
    for neg in negative_outs {
        let g = sigmoid(dot(h, neg));
        d_negatives.push(h.iter().map(|&hj| g * hj).collect());
        for (di, &nj) in d_input.iter_mut().zip(*neg) {
            *di += g * nj;
        }
    }

    NsGradients {
        d_input,
        d_target,
        d_negatives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!(softplus(-800.0) == 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_decomposes_into_target_and_noise_terms() {
        let h = [0.3, -0.2];
        let t = [0.5, 0.1];
        let n = [-0.4, 0.2];
        let expected = -sigmoid(dot(&h, &t)).ln() - sigmoid(-dot(&h, &n)).ln();
        let got = ns_loss(&h, &t, &[&n]);
        assert!((got - expected).abs() < 1e-12);
    }

    /// Central finite differences over every coordinate of `h`, the target
    /// row, and the negative rows.
    #[test]
    fn gradients_match_finite_differences() {
        let h = vec![0.31, -0.17, 0.05, 0.4];
        let t = vec![-0.2, 0.12, 0.33, -0.41];
        let n1 = vec![0.07, -0.3, 0.21, 0.1];
        let n2 = vec![-0.11, 0.02, -0.23, 0.35];
        let eps = 1e-6;

        let grads = ns_gradients(&h, &t, &[&n1, &n2]);
        let check = |analytic: f64, mut lo: Vec<f64>, mut hi: Vec<f64>, j: usize, which: &str| {
            lo[j] -= eps;
            hi[j] += eps;
            let (lo, hi): (&[f64], &[f64]) = (&lo, &hi);
            let (f_lo, f_hi) = match which {
                "h" => (ns_loss(lo, &t, &[&n1, &n2]), ns_loss(hi, &t, &[&n1, &n2])),
                "t" => (ns_loss(&h, lo, &[&n1, &n2]), ns_loss(&h, hi, &[&n1, &n2])),
                "n1" => (ns_loss(&h, &t, &[lo, &n2]), ns_loss(&h, &t, &[hi, &n2])),
                _ => (ns_loss(&h, &t, &[&n1, lo]), ns_loss(&h, &t, &[&n1, hi])),
            };
            let numeric = (f_hi - f_lo) / (2.0 * eps);
            assert!(
                (analytic - numeric).abs() <= 1e-8 * numeric.abs().max(1.0),
                "{which}[{j}]: analytic {analytic} vs numeric {numeric}"
            );
        };

        for j in 0..4 {
            check(grads.d_input[j], h.clone(), h.clone(), j, "h");
            check(grads.d_target[j], t.clone(), t.clone(), j, "t");
            check(grads.d_negatives[0][j], n1.clone(), n1.clone(), j, "n1");
            check(grads.d_negatives[1][j], n2.clone(), n2.clone(), j, "n2");
        }
    }
}
