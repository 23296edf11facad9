/// Binary cross-entropy on a logit, in the stable form
/// `max(z, 0) - z * y + ln(1 + exp(-|z|))`. Returns the loss and its
/// derivative with respect to the logit.
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - label)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over a batch and per-logit gradients of that mean.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grads = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let (l, g) = bce_with_logit(z, y);
            total += l;
            g / n
        })
        .collect();
    (total / n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_costs_ln2() {
        let (l, g) = bce_with_logit(0.0, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g + 0.5).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logit_costs_nothing() {
        assert!(bce_with_logit(800.0, 1.0).0 < 1e-300);
        assert!(bce_with_logit(-800.0, 0.0).0 < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0).0 - 800.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let h = 1e-6;
        for &z in &[-3.0, -0.4, 0.0, 0.7, 5.0] {
            for &y in &[0.0, 1.0] {
                let (_, g) = bce_with_logit(z, y);
                let fd = (bce_with_logit(z + h, y).0 - bce_with_logit(z - h, y).0) / (2.0 * h);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-12);
                assert!(rel < 1e-6, "z={z} y={y}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn loss_is_non_negative() {
        for i in -50..50 {
            let z = i as f64 * 0.37;
            assert!(bce_with_logit(z, 0.0).0 >= 0.0);
            assert!(bce_with_logit(z, 1.0).0 >= 0.0);
        }
    }
}
