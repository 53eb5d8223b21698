//! Activations and losses, each paired with its gradient.

use ndarray::{Array1, ArrayView1};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(xs)))` with max subtraction. `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.mapv(|z| z - lse)
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let mut p = logits.mapv(|z| (z - max).exp());
    let s = p.sum();
    p /= s;
    p
}

/// `-w[target] * log softmax(logits)[target]`.
pub fn weighted_cross_entropy(logits: ArrayView1<f64>, target: usize, class_weights: ArrayView1<f64>) -> f64 {
    -class_weights[target] * log_softmax(logits)[target]
}

/// Loss and `dL/dlogits = w[target] * (softmax - onehot)`.
pub fn weighted_cross_entropy_grad(
    logits: ArrayView1<f64>,
    target: usize,
    class_weights: ArrayView1<f64>,
) -> (f64, Array1<f64>) {
    let logp = log_softmax(logits);
    let w = class_weights[target];
    let mut grad = logp.mapv(f64::exp);
    grad[target] -= 1.0;
    grad *= w;
    (-w * logp[target], grad)
}

/// Plain (unweighted) cross-entropy, `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: ArrayView1<f64>, target: usize) -> f64 {
    -log_softmax(logits)[target]
}

/// Binary cross-entropy on a logit: `max(z,0) - z*t + ln(1 + e^{-|z|})`.
pub fn binary_cross_entropy(logit: f64, target: bool) -> f64 {
    let t = if target { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p()
}

/// Loss and `dL/dz = sigmoid(z) - t`.
pub fn binary_cross_entropy_grad(logit: f64, target: bool) -> (f64, f64) {
    let t = if target { 1.0 } else { 0.0 };
    (binary_cross_entropy(logit, target), sigmoid(logit) - t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(array![0.0, 3f64.ln()].view());
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        let u = softmax(Array1::from_elem(5, 2.5).view());
        u.iter().for_each(|&x| assert_abs_diff_eq!(x, 0.2, epsilon = 1e-15));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(array![1000.0, 1000.0, -1000.0].view());
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn wce_closed_forms() {
        let logits = Array1::zeros(7);
        let mut w = Array1::ones(7);
        w[3] = 2.0;
        assert_abs_diff_eq!(
            weighted_cross_entropy(logits.view(), 3, w.view()),
            2.0 * 7f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(2.0 * 7f64.ln(), 3.8918, epsilon = 1e-4);

        let mut peaked = Array1::zeros(4);
        peaked[1] = 60.0;
        assert!(weighted_cross_entropy(peaked.view(), 1, Array1::ones(4).view()) < 1e-20);
    }

    #[test]
    fn bce_closed_forms() {
        assert_abs_diff_eq!(binary_cross_entropy(0.0, true), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(binary_cross_entropy(0.0, false), 2f64.ln(), epsilon = 1e-15);
        assert!(binary_cross_entropy(50.0, true) < 1e-20);
        assert_abs_diff_eq!(
            binary_cross_entropy(2.0, false),
            2.0 + (-2f64).exp().ln_1p(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(binary_cross_entropy(2.0, false), 2.1269, epsilon = 1e-4);
        assert!(binary_cross_entropy(-800.0, true).is_finite());
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let a = Array1::from(v);
            let p = softmax(a.view());
            prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let q = softmax(a.mapv(|x| x + c).view());
            for (x, y) in p.iter().zip(q.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn unit_weights_give_plain_ce(v in proptest::collection::vec(-20.0f64..20.0, 2..9), t in 0usize..8) {
            let a = Array1::from(v);
            let t = t % a.len();
            let w = Array1::ones(a.len());
            prop_assert_eq!(weighted_cross_entropy(a.view(), t, w.view()), cross_entropy(a.view(), t));
        }

        #[test]
        fn bce_logit_symmetry(z in -40.0f64..40.0) {
            prop_assert!((binary_cross_entropy(z, true) - binary_cross_entropy(-z, false)).abs() < 1e-14);
            prop_assert!(binary_cross_entropy(z, true) >= 0.0);
        }
    }
}
