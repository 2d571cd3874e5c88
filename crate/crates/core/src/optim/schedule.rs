//! Step-size and noise-scale schedules.

use super::OptimError;

/// `gamma_t = max(floor, gamma0 * decay^floor(t / period))`, `sigma_t = c * gamma_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub gamma0: f64,
    pub decay: f64,
    pub period: usize,
    pub floor: f64,
    pub sigma_coupling: f64,
}

/// The noise coupling used throughout the random-label experiments.
pub const DEFAULT_SIGMA_COUPLING: f64 = 0.2 * std::f64::consts::SQRT_2;

impl Schedule {
    pub fn new(
        gamma0: f64,
        decay: f64,
        period: usize,
        floor: f64,
        sigma_coupling: f64,
    ) -> Result<Self, OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidConfig(msg));
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return bad(format!("gamma0 must be positive, got {gamma0}"));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {decay}"));
        }
        if period == 0 {
            return bad("period must be positive".into());
        }
        if !(floor >= 0.0 && floor.is_finite()) {
            return bad(format!("floor must be >= 0, got {floor}"));
        }
        if !(sigma_coupling > 0.0 && sigma_coupling.is_finite()) {
            return bad(format!(
                "sigma coupling must be positive, got {sigma_coupling}"
            ));
        }
        Ok(Self {
            gamma0,
            decay,
            period,
            floor,
            sigma_coupling,
        })
    }

    /// Constant step size, no decay.
    pub fn constant(gamma: f64, sigma_coupling: f64) -> Result<Self, OptimError> {
        Self::new(gamma, 1.0, 1, 0.0, sigma_coupling)
    }

    /// The decaying schedule of the MNIST random-label runs:
    /// `gamma0 = 0.003`, `x0.995` every 60 steps, floored at 0.0005.
    pub fn random_label_default() -> Self {
        Self::new(0.003, 0.995, 60, 0.0005, DEFAULT_SIGMA_COUPLING).expect("valid constants")
    }

    pub fn gamma(&self, t: usize) -> f64 {
        let k = (t / self.period) as i32;
        (self.gamma0 * self.decay.powi(k)).max(self.floor)
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma_coupling * self.gamma(t)
    }

    /// `(gamma_t / sigma_t)^2`, the weight of step `t` in the bound sums.
    pub fn bound_weight(&self, t: usize) -> f64 {
        let r = self.gamma(t) / self.sigma(t);
        r * r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_values() {
        let s = Schedule::random_label_default();
        assert_eq!(s.gamma(0), 0.003);
        assert_eq!(s.gamma(59), 0.003);
        assert!((s.gamma(60) - 0.003 * 0.995).abs() < 1e-18);
        assert_eq!(s.gamma(1_000_000), 0.0005);
        assert!((s.sigma(0) - 0.2 * 2f64.sqrt() * 0.003).abs() < 1e-18);
    }

    #[test]
    fn non_increasing() {
        let s = Schedule::new(0.1, 0.9, 7, 0.001, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..2000 {
            let g = s.gamma(t);
            assert!(g <= prev && s.sigma(t) > 0.0);
            prev = g;
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(Schedule::new(0.0, 0.9, 1, 0.0, 1.0).is_err());
        assert!(Schedule::new(0.1, 1.1, 1, 0.0, 1.0).is_err());
        assert!(Schedule::new(0.1, 0.9, 0, 0.0, 1.0).is_err());
        assert!(Schedule::new(0.1, 0.9, 1, -1.0, 1.0).is_err());
        assert!(Schedule::new(0.1, 0.9, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn weight_for_default_coupling() {
        let s = Schedule::random_label_default();
        assert!((s.bound_weight(10) - 12.5).abs() < 1e-12);
    }
}
