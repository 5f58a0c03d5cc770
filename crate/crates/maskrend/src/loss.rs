//! Focal losses with analytic gradients and the composite detector loss.

use crate::mask::{BinaryMask, ProbabilityMask};
use crate::{Error, Result};

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before the log; the
/// loss is singular at 0.
pub const CLAMP: f64 = 1e-7;

/// Focal loss parameters: per-class weights and the focusing exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalLossParams {
    /// Per-class weights, indexed by class id. Missing entries default to 1.
    pub alpha: Vec<f64>,
    /// Focusing exponent; 0 reduces the loss to plain cross-entropy.
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self {
            alpha: Vec::new(),
            gamma: 2.0,
        }
    }
}

impl FocalLossParams {
    pub fn new(alpha: Vec<f64>, gamma: f64) -> Result<Self> {
        if alpha.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
            return Err(Error::InvalidParameter(
                "focal alpha weights must be positive and finite".into(),
            ));
        }
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "focal gamma must be non-negative, got {gamma}"
            )));
        }
        Ok(Self { alpha, gamma })
    }

    /// Weight for `class`, defaulting to 1 when unset.
    pub fn alpha_for(&self, class: usize) -> f64 {
        self.alpha.get(class).copied().unwrap_or(1.0)
    }
}

/// Weights of the composite loss: classification, box regression, mask and
/// mask-point terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLossWeights {
    pub w_cls: f64,
    pub w_box: f64,
    pub w_mask: f64,
    pub w_point: f64,
}

impl Default for CompositeLossWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_box: 1.0,
            w_mask: 1.1,
            w_point: 1.0,
        }
    }
}

fn focal_term(p_t: f64, alpha: f64, gamma: f64) -> f64 {
    let p_t = p_t.clamp(CLAMP, 1.0 - CLAMP);
    -alpha * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// Binary focal loss of predicting foreground probability `p` against a
/// 0/1 target.
pub fn focal_binary(p: f64, target: bool, params: &FocalLossParams) -> f64 {
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    let p_t = if target { p } else { 1.0 - p };
    focal_term(p_t, params.alpha_for(target as usize), params.gamma)
}

/// Analytic derivative of [`focal_binary`] with respect to `p`.
pub fn focal_binary_grad(p: f64, target: bool, params: &FocalLossParams) -> f64 {
    // Outside the clamp interval the loss is constant in p.
    if !(CLAMP..=1.0 - CLAMP).contains(&p) {
        return 0.0;
    }
    let p_t = if target { p } else { 1.0 - p };
    let alpha = params.alpha_for(target as usize);
    let gamma = params.gamma;
    let one_minus = 1.0 - p_t;
    let mut d = -alpha * one_minus.powf(gamma) / p_t;
    if gamma > 0.0 {
        d += alpha * gamma * one_minus.powf(gamma - 1.0) * p_t.ln();
    }
    if target {
        d
    } else {
        -d
    }
}

/// Multi-class focal loss over a probability simplex.
pub fn focal_multiclass(probs: &[f64], target: usize, params: &FocalLossParams) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {}",
            probs.len()
        )));
    }
    if target >= probs.len() {
        return Err(Error::InvalidParameter(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidParameter(
            "class probabilities must be non-negative and finite".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "class probabilities sum to {sum}, not a simplex"
        )));
    }
    Ok(focal_term(
        probs[target],
        params.alpha_for(target),
        params.gamma,
    ))
}

/// Mean per-pixel binary focal loss of a probability mask against a binary
/// ground truth of equal dimensions.
pub fn focal_mask(
    pred: &ProbabilityMask,
    gt: &BinaryMask,
    params: &FocalLossParams,
) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected: (gt.width(), gt.height()),
            got: (pred.width(), pred.height()),
        });
    }
    let total: f64 = pred
        .values()
        .iter()
        .zip(gt.bits())
        .map(|(&p, &t)| focal_binary(p, t == 1, params))
        .sum();
    Ok(total / pred.values().len() as f64)
}

/// Weighted sum of the four loss components.
pub fn composite_loss(
    l_cls: f64,
    l_box: f64,
    l_mask: f64,
    l_point: f64,
    w: &CompositeLossWeights,
) -> f64 {
    w.w_cls * l_cls + w.w_box * l_box + w.w_mask * l_mask + w.w_point * l_point
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(gamma: f64) -> FocalLossParams {
        FocalLossParams::new(Vec::new(), gamma).unwrap()
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let p = params(0.0);
        let mut state = 1u64;
        for _ in 0..1000 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let x = 0.001 + 0.998 * ((state >> 11) as f64 / (1u64 << 53) as f64);
            for target in [false, true] {
                let p_t = if target { x } else { 1.0 - x };
                let ce = -p_t.ln();
                assert!((focal_binary(x, target, &p) - ce).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_value_at_half() {
        // p_t = 0.5, gamma = 2: 0.25 * ln 2.
        let expected = 0.25 * std::f64::consts::LN_2;
        assert!((focal_binary(0.5, true, &params(2.0)) - expected).abs() < 1e-12);
        assert!((focal_binary(0.5, false, &params(2.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_limit() {
        let p = params(2.0);
        assert!(focal_binary(1.0, true, &p) < 1e-12);
        assert!(focal_binary(0.0, false, &p) < 1e-12);
    }

    #[test]
    fn focal_never_exceeds_cross_entropy_and_stays_non_negative() {
        let p2 = params(2.0);
        for i in 1..100 {
            let x = i as f64 / 100.0;
            let ce = -x.ln();
            let loss = focal_binary(x, true, &p2);
            assert!(loss <= ce + 1e-15);
            assert!(loss >= 0.0);
            assert!(focal_binary(x, false, &p2) >= 0.0);
        }
    }

    #[test]
    fn monotone_decreasing_in_p_t() {
        let p = params(2.0);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let x = i as f64 / 200.0;
            let l = focal_binary(x, true, &p);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn grad_gamma_zero_is_inverse_p() {
        let p = params(0.0);
        for x in [0.1, 0.25, 0.5, 0.9] {
            assert!((focal_binary_grad(x, true, &p) + 1.0 / x).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut state = 42u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let eps = 1e-6;
        for _ in 0..1000 {
            let x = 0.01 + 0.98 * next();
            let target = next() > 0.5;
            for gamma in [0.0, 1.0, 2.0] {
                let prm = params(gamma);
                let analytic = focal_binary_grad(x, target, &prm);
                let fd = (focal_binary(x + eps, target, &prm)
                    - focal_binary(x - eps, target, &prm))
                    / (2.0 * eps);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-9);
                assert!(
                    rel < 1e-6,
                    "rel err {rel} at p={x}, target={target}, gamma={gamma}"
                );
            }
        }
    }

    #[test]
    fn grad_vanishes_at_confident_correct_prediction() {
        for gamma in [1.0, 2.0] {
            let g = focal_binary_grad(1.0 - CLAMP, true, &params(gamma));
            assert!(g.abs() < 1e-6);
        }
    }

    #[test]
    fn multiclass_reduces_to_cross_entropy_and_binary() {
        let p0 = params(0.0);
        let probs = [0.2, 0.3, 0.5];
        let ce = -(0.3f64.ln());
        assert!((focal_multiclass(&probs, 1, &p0).unwrap() - ce).abs() < 1e-12);

        // K = 2 consistency with the binary form.
        let p2 = params(2.0);
        let two = [0.3, 0.7];
        assert!(
            (focal_multiclass(&two, 1, &p2).unwrap() - focal_binary(0.7, true, &p2)).abs() < 1e-12
        );
        assert!(
            (focal_multiclass(&two, 0, &p2).unwrap() - focal_binary(0.7, false, &p2)).abs() < 1e-12
        );
    }

    #[test]
    fn multiclass_hand_value() {
        let probs = [0.2, 0.3, 0.5];
        let expected = 0.25 * std::f64::consts::LN_2;
        assert!((focal_multiclass(&probs, 2, &params(2.0)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn multiclass_rejects_bad_inputs() {
        let p = params(2.0);
        assert!(focal_multiclass(&[1.0], 0, &p).is_err());
        assert!(focal_multiclass(&[0.5, 0.4], 0, &p).is_err());
        assert!(focal_multiclass(&[0.5, 0.5], 2, &p).is_err());
    }

    #[test]
    fn mask_loss_matches_per_pixel_loop() {
        let mut state = 7u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let prm = params(2.0);
        for _ in 0..20 {
            let probs: Vec<f64> = (0..64).map(|_| next()).collect();
            let bits: Vec<u8> = (0..64).map(|_| (next() > 0.5) as u8).collect();
            let pred = ProbabilityMask::new(8, 8, probs.clone()).unwrap();
            let gt = BinaryMask::new(8, 8, bits.clone()).unwrap();

            let mut brute = 0.0;
            for i in 0..64 {
                brute += focal_binary(probs[i], bits[i] == 1, &prm);
            }
            brute /= 64.0;
            assert!((focal_mask(&pred, &gt, &prm).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_loss_constant_half() {
        let pred = ProbabilityMask::constant(5, 4, 0.5).unwrap();
        let gt = BinaryMask::new(5, 4, (0..20).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let expected = 0.25 * std::f64::consts::LN_2;
        assert!((focal_mask(&pred, &gt, &params(2.0)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mask_loss_of_perfect_prediction_is_near_zero() {
        let bits: Vec<u8> = (0..36).map(|i| (i % 5 < 2) as u8).collect();
        let gt = BinaryMask::new(6, 6, bits.clone()).unwrap();
        let pred = ProbabilityMask::new(6, 6, bits.iter().map(|&b| b as f64).collect()).unwrap();
        let prm = params(2.0);
        let loss = focal_mask(&pred, &gt, &prm).unwrap();
        assert!(loss <= focal_binary(1.0 - CLAMP, true, &prm));
        assert!(loss < 1e-12);
    }

    #[test]
    fn mask_loss_dimension_mismatch() {
        let pred = ProbabilityMask::constant(4, 4, 0.5).unwrap();
        let gt = BinaryMask::zeros(5, 4).unwrap();
        assert!(focal_mask(&pred, &gt, &params(2.0)).is_err());
    }

    #[test]
    fn composite_weighting() {
        let w = CompositeLossWeights::default();
        assert!((composite_loss(1.0, 1.0, 1.0, 1.0, &w) - 4.1).abs() < 1e-12);

        let zero = CompositeLossWeights {
            w_cls: 0.0,
            w_box: 0.0,
            w_mask: 0.0,
            w_point: 0.0,
        };
        assert_eq!(composite_loss(3.0, 2.0, 1.0, 5.0, &zero), 0.0);

        // Linearity in a single component.
        let base = composite_loss(1.0, 0.0, 0.0, 0.0, &w);
        assert!((composite_loss(3.0, 0.0, 0.0, 0.0, &w) - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(FocalLossParams::new(vec![1.0, -1.0], 2.0).is_err());
        assert!(FocalLossParams::new(Vec::new(), -0.5).is_err());
    }
}
