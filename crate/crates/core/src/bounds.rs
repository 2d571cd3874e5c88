//! Online accumulation of gradient-norm sums and closed-form evaluation of
//! the generalization bounds for GLD, SGLD, Entropy-SGD and the continuous
//! and discretized Langevin dynamics.

use std::collections::VecDeque;
use std::f64::consts::{LN_2, SQRT_2};

use thiserror::Error;

use crate::optim::{Schedule, RELAXED_BOUND_CONSTANT, STRICT_BOUND_CONSTANT};

/// Default moving-average window for the gradient-norm trace.
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("estimate for step {got} arrived after step {last}")]
    OutOfOrder { last: usize, got: usize },
    #[error("invalid bound parameters: {0}")]
    Invalid(String),
}

/// Which leading constant multiplies `(C / n) sqrt(sum)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantMode {
    /// 8.12, valid under `gamma_t <= sigma_t / (20 L)`.
    #[default]
    Strict812,
    /// 84.4, valid under `gamma_t <= sigma_t / (2 L)`.
    Relaxed844,
    /// `2 sqrt 2`, the full-gradient GLD constant.
    Gld2Sqrt2,
}

impl ConstantMode {
    pub fn value(self) -> f64 {
        match self {
            Self::Strict812 => STRICT_BOUND_CONSTANT,
            Self::Relaxed844 => RELAXED_BOUND_CONSTANT,
            Self::Gld2Sqrt2 => 2.0 * SQRT_2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Strict812 => "strict",
            Self::Relaxed844 => "relaxed",
            Self::Gld2Sqrt2 => "gld",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Bound on the loss (1 for 0/1 loss).
    pub c: f64,
    pub n: usize,
    pub b: usize,
    pub l: f64,
    pub mode: ConstantMode,
}

impl BoundParams {
    pub fn new(c: f64, n: usize, b: usize, l: f64, mode: ConstantMode) -> Result<Self, BoundError> {
        if !(c > 0.0) {
            return Err(BoundError::Invalid(format!("C must be positive, got {c}")));
        }
        if n == 0 || b == 0 || b > n {
            return Err(BoundError::Invalid(format!(
                "need 1 <= b <= n, got b={b}, n={n}"
            )));
        }
        Ok(Self { c, n, b, l, mode })
    }

    /// `b <= n/2`; reported rather than enforced.
    pub fn batch_condition(&self) -> bool {
        2 * self.b <= self.n
    }
}

/// One unbiased estimate of the mean squared per-example gradient norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormEstimate {
    pub t: usize,
    pub value: f64,
    pub batch_size: usize,
}

/// Running `sum_t w_t g_e(t)` plus a moving window over the raw estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAccumulator {
    running_sum: f64,
    steps: usize,
    last_t: Option<usize>,
    window: VecDeque<f64>,
    window_size: usize,
}

impl Default for BoundAccumulator {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl BoundAccumulator {
    pub fn new(window_size: usize) -> Self {
        Self {
            running_sum: 0.0,
            steps: 0,
            last_t: None,
            window: VecDeque::with_capacity(window_size),
            window_size: window_size.max(1),
        }
    }

    /// Adds `(gamma_t / sigma_t)^2 * g_e(t)`.
    pub fn record(
        &mut self,
        est: &GradNormEstimate,
        schedule: &Schedule,
    ) -> Result<(), BoundError> {
        self.record_weighted(est, schedule.bound_weight(est.t))
    }

    /// Adds `g_e` with unit weight (Entropy-SGD inner steps).
    pub fn record_unit(&mut self, est: &GradNormEstimate) -> Result<(), BoundError> {
        self.record_weighted(est, 1.0)
    }

    pub fn record_weighted(
        &mut self,
        est: &GradNormEstimate,
        weight: f64,
    ) -> Result<(), BoundError> {
        if let Some(last) = self.last_t {
            if est.t < last {
                return Err(BoundError::OutOfOrder { last, got: est.t });
            }
        }
        if !(est.value >= 0.0) {
            return Err(BoundError::Invalid(format!(
                "gradient-norm estimate must be >= 0, got {}",
                est.value
            )));
        }
        self.last_t = Some(est.t);
        self.steps += 1;
        self.running_sum += weight * est.value;
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(est.value);
        Ok(())
    }

    pub fn running_sum(&self) -> f64 {
        self.running_sum
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mean of the last `window_size` raw estimates (fewer at the start).
    pub fn moving_average(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().sum::<f64>() / self.window.len() as f64
    }
}

/// `(2 sqrt 2 C / n) sqrt(sum)`.
pub fn gld_bound(acc: &BoundAccumulator, p: &BoundParams) -> f64 {
    ConstantMode::Gld2Sqrt2.value() * p.c / p.n as f64 * acc.running_sum().sqrt()
}

/// `(k C / n) sqrt(sum)` with `k` from `p.mode` (8.12 or 84.4).
pub fn sgld_bound(acc: &BoundAccumulator, p: &BoundParams) -> f64 {
    p.mode.value() * p.c / p.n as f64 * acc.running_sum().sqrt()
}

/// Same formula as [`sgld_bound`], applied to an accumulator fed with
/// held-out gradient norms.
pub fn population_bound(acc_pop: &BoundAccumulator, p: &BoundParams) -> f64 {
    sgld_bound(acc_pop, p)
}

/// `8.12 C sqrt(eta') / (eps n) * sqrt(sum_{t,k} g_e(t,k))`.
pub fn entropy_sgd_bound(
    acc_inner: &BoundAccumulator,
    p: &BoundParams,
    inner_step: f64,
    eps: f64,
) -> f64 {
    STRICT_BOUND_CONSTANT * p.c * inner_step.sqrt() / (eps * p.n as f64)
        * acc_inner.running_sum().sqrt()
}

/// Generalization error of a 0/1 loss never exceeds 1.
pub fn capped(bound: f64) -> f64 {
    bound.min(1.0)
}

/// Parameters of the continuous Langevin bounds and their discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CldParams {
    pub beta: f64,
    pub lambda: f64,
    pub c: f64,
    pub l: f64,
    pub t: f64,
    pub n: usize,
    /// Step size of the discretized chain.
    pub eta: f64,
    /// Iterations of the discretized chain.
    pub k: usize,
    /// User-supplied discretization constant.
    pub c1: f64,
    /// Smoothness constant used by the step-size side condition.
    pub m: f64,
}

impl CldParams {
    pub fn continuous(beta: f64, lambda: f64, c: f64, l: f64, t: f64, n: usize) -> Self {
        Self {
            beta,
            lambda,
            c,
            l,
            t,
            n,
            eta: 0.0,
            k: 0,
            c1: 0.0,
            m: 0.0,
        }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

/// `(2 e^{4 beta C} C L / n) sqrt(beta/lambda (1 - exp(-lambda T / e^{8 beta C})))`,
/// assembled in log space.
pub fn cld_bound_finite_t(p: &CldParams) -> f64 {
    if p.t <= 0.0 || p.c == 0.0 || p.l == 0.0 {
        return 0.0;
    }
    let bc = p.beta * p.c;
    // x = lambda T e^{-8 beta C}; 1 - e^{-x} = -expm1(-x)
    let log_x = p.lambda.ln() + p.t.ln() - 8.0 * bc;
    let one_minus = if log_x > 700.0 {
        1.0
    } else {
        -(-log_x.exp()).exp_m1()
    };
    let log_one_minus = if one_minus > 0.0 {
        one_minus.ln()
    } else {
        log_x
    };
    let log_bound = LN_2 + 4.0 * bc + p.c.ln() + p.l.ln() - (p.n as f64).ln()
        + 0.5 * (p.beta.ln() - p.lambda.ln() + log_one_minus);
    log_bound.exp()
}

/// The `T -> infinity` value `(2 e^{4 beta C} C L / n) sqrt(beta / lambda)`.
pub fn cld_asymptote(p: &CldParams) -> f64 {
    let bc = p.beta * p.c;
    (LN_2 + 4.0 * bc + p.c.ln() + p.l.ln() - (p.n as f64).ln()
        + 0.5 * (p.beta.ln() - p.lambda.ln()))
    .exp()
}

/// `(2 e^{4 beta C} C L / n) sqrt(beta T e^{-8 beta C})`, the linearized
/// (`1 - e^{-x} <= x`) envelope growing like `sqrt T / n`.
pub fn cld_sqrt_t_envelope(p: &CldParams) -> f64 {
    if p.t <= 0.0 {
        return 0.0;
    }
    // the e^{4 beta C} prefactor cancels against sqrt(e^{-8 beta C})
    (LN_2 + p.c.ln() + p.l.ln() - (p.n as f64).ln() + 0.5 * (p.beta.ln() + p.t.ln())).exp()
}

/// Gibbs-regime bound `8 beta C^2 / n + 4 C exp(-lambda T / e^{4 beta C}) sqrt(beta C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsBound {
    pub value: f64,
    /// `n > 8 beta C`.
    pub precondition: bool,
}

pub fn cld_bound_gibbs(p: &CldParams) -> GibbsBound {
    let bc = p.beta * p.c;
    let n = p.n as f64;
    let decay = (-(p.lambda * p.t.max(0.0)) * (-4.0 * bc).exp()).exp();
    GibbsBound {
        value: 8.0 * bc * p.c / n + 4.0 * p.c * decay * bc.sqrt(),
        precondition: n > 8.0 * bc,
    }
}

/// Smallest `T` in `(0, t_max]` at which the Gibbs bound drops below the
/// finite-`T` bound, located by bisection on the sign change.
pub fn gibbs_crossover(p: &CldParams, t_max: f64) -> Option<f64> {
    let diff =
        |t: f64| cld_bound_gibbs(&p.with_time(t)).value - cld_bound_finite_t(&p.with_time(t));
    if diff(t_max) >= 0.0 {
        return None;
    }
    // scan for a bracket, then bisect
    let steps = 4096;
    let mut lo = 0.0;
    let mut hi = t_max;
    for i in 1..=steps {
        let t = t_max * i as f64 / steps as f64;
        if diff(t) < 0.0 {
            hi = t;
            lo = t_max * (i - 1) as f64 / steps as f64;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diff(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Discretized (GLD with l2) bound and its side conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GldL2Bound {
    pub value: f64,
    pub discretization: f64,
    pub continuous: f64,
    /// `lambda beta > 2`.
    pub dissipativity: bool,
    /// `eta < min(1, lambda / (8 M^2))`.
    pub step_size: bool,
}

/// `2 C sqrt(2 K C1 eta^2) + cld_bound_finite_t(T = eta K)`.
pub fn gld_l2_bound(p: &CldParams) -> GldL2Bound {
    let discretization = 2.0 * p.c * (2.0 * p.k as f64 * p.c1 * p.eta * p.eta).max(0.0).sqrt();
    let continuous = cld_bound_finite_t(&p.with_time(p.eta * p.k as f64));
    let step_cap = if p.m > 0.0 {
        1f64.min(p.lambda / (8.0 * p.m * p.m))
    } else {
        1.0
    };
    GldL2Bound {
        value: discretization + continuous,
        discretization,
        continuous,
        dissipativity: p.lambda * p.beta > 2.0,
        step_size: p.eta >= 0.0 && p.eta < step_cap,
    }
}

/// KL constant for log-Lipschitz noise:
/// `2 ln2 L^2 e^L b^2 beta^2 / n^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLipschitzKl {
    pub value: f64,
    /// `beta L <= 1`.
    pub shift_condition: bool,
}

pub fn log_lipschitz_kl_constant(
    l_noise: f64,
    b: usize,
    n: usize,
    beta_shift: f64,
) -> LogLipschitzKl {
    let ratio = b as f64 / n as f64;
    LogLipschitzKl {
        value: 2.0
            * LN_2
            * l_noise
            * l_noise
            * l_noise.exp()
            * ratio
            * ratio
            * beta_shift
            * beta_shift,
        shift_condition: beta_shift * l_noise <= 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mode: ConstantMode) -> BoundParams {
        BoundParams::new(1.0, 10_000, 100, 1.0, mode).unwrap()
    }

    fn filled(value: f64, steps: usize, schedule: &Schedule) -> BoundAccumulator {
        let mut acc = BoundAccumulator::default();
        for t in 1..=steps {
            acc.record(
                &GradNormEstimate {
                    t,
                    value,
                    batch_size: 200,
                },
                schedule,
            )
            .unwrap();
        }
        acc
    }

    #[test]
    fn zero_norms_give_zero_bounds() {
        let s = Schedule::random_label_default();
        let acc = filled(0.0, 50, &s);
        assert_eq!(acc.running_sum(), 0.0);
        assert_eq!(gld_bound(&acc, &params(ConstantMode::Gld2Sqrt2)), 0.0);
        assert_eq!(sgld_bound(&acc, &params(ConstantMode::Strict812)), 0.0);
        assert_eq!(
            population_bound(&acc, &params(ConstantMode::Strict812)),
            0.0
        );
        assert_eq!(
            entropy_sgd_bound(&acc, &params(ConstantMode::Strict812), 0.1, 0.1),
            0.0
        );
    }

    #[test]
    fn running_sum_arithmetic() {
        let s = Schedule::constant(0.1, 0.5).unwrap();
        let acc = filled(3.0, 40, &s);
        let r2 = (0.1f64 / 0.05).powi(2);
        assert!((acc.running_sum() - 40.0 * r2 * 3.0).abs() < 1e-9);
        assert!((Schedule::random_label_default().bound_weight(7) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn gld_example_and_scaling() {
        let s = Schedule::constant(1.0, 1.0).unwrap();
        let acc = filled(1.0, 1, &s);
        let p = params(ConstantMode::Gld2Sqrt2);
        assert!((gld_bound(&acc, &p) - 2.0 * SQRT_2 / 1e4).abs() < 1e-15);
        let acc4 = filled(4.0, 1, &s);
        assert!((gld_bound(&acc4, &p) - 2.0 * gld_bound(&acc, &p)).abs() < 1e-15);
    }

    #[test]
    fn constant_ratios() {
        let s = Schedule::constant(0.2, 0.7).unwrap();
        let acc = filled(2.5, 17, &s);
        let strict = sgld_bound(&acc, &params(ConstantMode::Strict812));
        let gld = gld_bound(&acc, &params(ConstantMode::Gld2Sqrt2));
        assert!((strict / gld - 8.12 / (2.0 * SQRT_2)).abs() < 1e-12);
        let relaxed = sgld_bound(&acc, &params(ConstantMode::Relaxed844));
        assert!((relaxed / strict - 84.4 / 8.12).abs() < 1e-12);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let s = Schedule::constant(0.1, 1.0).unwrap();
        let mut acc = BoundAccumulator::default();
        acc.record(
            &GradNormEstimate {
                t: 5,
                value: 1.0,
                batch_size: 1,
            },
            &s,
        )
        .unwrap();
        let err = acc.record(
            &GradNormEstimate {
                t: 4,
                value: 1.0,
                batch_size: 1,
            },
            &s,
        );
        assert_eq!(err, Err(BoundError::OutOfOrder { last: 5, got: 4 }));
        // repeated index is fine: Entropy-SGD records several inner steps per t
        acc.record_unit(&GradNormEstimate {
            t: 5,
            value: 1.0,
            batch_size: 1,
        })
        .unwrap();
    }

    #[test]
    fn moving_average_window() {
        let mut acc = BoundAccumulator::new(3);
        for (t, v) in [1.0, 2.0, 3.0, 10.0].into_iter().enumerate() {
            acc.record_unit(&GradNormEstimate {
                t,
                value: v,
                batch_size: 1,
            })
            .unwrap();
        }
        assert!((acc.moving_average() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_sgd_cap_and_homogeneity() {
        let (c, eta, eps, l, t, k) = (1.0, 0.01, 0.1, 2.0, 30usize, 5usize);
        let p = BoundParams::new(c, 1000, 10, l, ConstantMode::Strict812).unwrap();
        let mut acc = BoundAccumulator::default();
        for step in 0..t * k {
            acc.record_unit(&GradNormEstimate {
                t: step / k,
                value: l * l,
                batch_size: 10,
            })
            .unwrap();
        }
        let b = entropy_sgd_bound(&acc, &p, eta, eps);
        let cap = 8.12 * c * eta.sqrt() * l * ((t * k) as f64).sqrt() / (eps * 1000.0);
        assert!(b <= cap * (1.0 + 1e-12));
        assert!((entropy_sgd_bound(&acc, &p, eta, 2.0 * eps) - b / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cld_finite_t_limits() {
        let p = CldParams::continuous(1.0, 1.0, 1.0, 1.0, 0.0, 100);
        assert_eq!(cld_bound_finite_t(&p), 0.0);
        let asym = cld_asymptote(&p);
        assert!((asym - 2.0 * 4f64.exp() / 100.0).abs() < 1e-12);
        let at1 = cld_bound_finite_t(&p.with_time(1.0));
        assert!(at1 > 0.0 && at1 < asym);
        let far = cld_bound_finite_t(&p.with_time(1e9));
        assert!(((far - asym) / asym).abs() < 1e-9);
    }

    #[test]
    fn cld_large_beta_c_is_finite() {
        let p = CldParams::continuous(50.0, 1.0, 5.0, 1.0, 1e3, 10);
        let v = cld_bound_finite_t(&p);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn gibbs_limits_and_crossover() {
        let p = CldParams::continuous(1.0, 1.0, 0.1, 1.0, 0.0, 1000);
        let g0 = cld_bound_gibbs(&p);
        assert!((g0.value - (0.8 * 0.1 / 1000.0 + 0.4 * 0.1f64.sqrt())).abs() < 1e-15);
        assert!(g0.precondition);
        let far = cld_bound_gibbs(&p.with_time(1e9)).value;
        assert!((far / (8.0 * 0.01 / 1000.0) - 1.0).abs() < 1e-9);
        let t_star = gibbs_crossover(&p, 100.0).unwrap();
        // root of the two formulas, computed independently with a bracketing solver
        assert!((t_star - 9.504_986_678_322_31).abs() < 1e-8, "{t_star}");
        assert!(
            !cld_bound_gibbs(&CldParams::continuous(100.0, 1.0, 1.0, 1.0, 0.0, 800)).precondition
        );
    }

    #[test]
    fn gld_l2_structure() {
        let mut p = CldParams::continuous(4.0, 1.0, 0.5, 1.0, 0.0, 200);
        p.eta = 0.01;
        p.k = 300;
        p.c1 = 0.0;
        p.m = 0.1;
        let b = gld_l2_bound(&p);
        assert_eq!(b.value, cld_bound_finite_t(&p.with_time(3.0)));
        assert!(b.dissipativity && b.step_size);
        p.k = 0;
        assert_eq!(gld_l2_bound(&p).value, 0.0);
        p.k = 300;
        p.c1 = 2.0;
        p.eta = 2.0;
        let flagged = gld_l2_bound(&p);
        assert!(!flagged.step_size && flagged.value > 0.0);
        // eta -> 0 at fixed T: discretization term shrinks like sqrt(eta)
        let mut q = p;
        q.eta = 1e-8;
        q.k = 300_000_000;
        let lim = gld_l2_bound(&q);
        assert!(lim.discretization < 2e-3);
        assert!((lim.continuous - cld_bound_finite_t(&q.with_time(3.0))).abs() < 1e-12);
    }

    #[test]
    fn log_lipschitz_examples() {
        assert_eq!(log_lipschitz_kl_constant(1.0, 5, 10, 0.0).value, 0.0);
        let v = log_lipschitz_kl_constant(1.0, 10, 10, 1.0);
        assert!((v.value - 3.768_338_770_727_44).abs() < 1e-12);
        assert!(v.shift_condition);
        let half = log_lipschitz_kl_constant(1.0, 10, 20, 1.0).value;
        assert!((half - v.value / 4.0).abs() < 1e-15);
    }

    #[test]
    fn finite_t_below_sqrt_t_envelope() {
        for &beta in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            for &lambda in &[0.1, 1.0, 10.0, 100.0] {
                for &t in &[1e-3, 1.0, 1e3, 1e6, 1e9] {
                    let p = CldParams::continuous(beta, lambda, 0.7, 1.3, t, 50);
                    let b = cld_bound_finite_t(&p);
                    assert!(b <= cld_sqrt_t_envelope(&p) * (1.0 + 1e-12));
                    assert!(b <= cld_asymptote(&p) * (1.0 + 1e-12));
                }
            }
        }
    }
}
