//! Per-example gradient clipping.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub enabled: bool,
    pub max_norm: f64,
}

impl ClipSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            max_norm: f64::INFINITY,
        }
    }

    pub fn with_max_norm(max_norm: f64) -> Self {
        assert!(max_norm > 0.0, "clip norm must be positive");
        Self {
            enabled: true,
            max_norm,
        }
    }

    /// Rescales `grad` in place to norm `min(C_L, ||grad||)`; returns the
    /// resulting norm. Zero gradients are left alone.
    pub fn apply(&self, grad: &mut [f64]) -> f64 {
        let norm = crate::nn::norm_sq(grad).sqrt();
        if !self.enabled || norm <= self.max_norm || norm == 0.0 {
            return norm;
        }
        let scale = self.max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
        self.max_norm
    }
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self::disabled()
    }
}

/// Clips each gradient independently.
pub fn clip_per_example(gradients: &mut [Vec<f64>], spec: &ClipSpec) {
    for g in gradients {
        spec.apply(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let spec = ClipSpec::with_max_norm(1.0);
        let mut grads = vec![vec![0.3, 0.4], vec![1.2, 1.6], vec![0.0, 0.0]];
        clip_per_example(&mut grads, &spec);
        assert_eq!(grads[0], vec![0.3, 0.4]);
        assert!((crate::nn::norm_sq(&grads[1]).sqrt() - 1.0).abs() < 1e-15);
        assert!((grads[1][0] / grads[1][1] - 0.75).abs() < 1e-15);
        assert_eq!(grads[2], vec![0.0, 0.0]);
    }

    #[test]
    fn disabled_is_identity() {
        let mut g = vec![10.0, -3.0];
        ClipSpec::disabled().apply(&mut g);
        assert_eq!(g, vec![10.0, -3.0]);
    }

    proptest! {
        #[test]
        fn never_grows_and_keeps_direction(
            g in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in 0.01f64..10.0,
        ) {
            let spec = ClipSpec::with_max_norm(c);
            let before = crate::nn::norm_sq(&g).sqrt();
            let mut out = g.clone();
            let after = spec.apply(&mut out);
            prop_assert!(after <= before + 1e-12);
            prop_assert!(after <= c * (1.0 + 1e-12));
            if before > 0.0 {
                let cos = g.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() / (before * after);
                prop_assert!((cos - 1.0).abs() < 1e-9);
            }
        }
    }
}
