//! Numerical checks of the divergence inequalities: Gaussian KL in closed
//! form, Monte Carlo KL for mixtures, the mini-batch mixture lemma, the
//! quadrature constant behind it, the chain rule, Pinsker and the
//! triangular-discrimination series.

mod finite;
mod mixture;
mod quadrature;

pub use finite::{
    chain_rule_check, dtd_bound_check, kl_discrete, pinsker_check, random_chain,
    random_distribution, ChainRuleReport, DtdReport, FiniteChain, PinskerReport,
};
pub use mixture::{
    enumerate_batches, verify_minibatch_lemma, LemmaConfig, LemmaReport, MeansGenerator,
    MixturePair, MixtureSpec, MIXTURE_CONSTANT,
};
pub use quadrature::{
    gauss_kronrod_adaptive, phi, phi_limit, quadrature_phi_constant, scan_phi_bound, PhiScan,
    QuadratureReport, PUBLISHED_QUADRATURE_CONSTANT,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KlError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("log density ratio is not finite ({value}) at sample {sample:?}")]
    NonFinite { value: f64, sample: Vec<f64> },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("quadrature did not converge: error {achieved:e} > tolerance {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },
}

/// A distribution that can be sampled and whose log density can be evaluated.
pub trait Density {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

/// `N(mean, v I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self, KlError> {
        if !(variance > 0.0 && variance.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(KlError::Precondition(format!(
                "need finite mean and variance > 0, got variance {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// `N(mu, sigma^2/2 I)`, the noise law of one Langevin step.
    pub fn langevin(mean: Vec<f64>, sigma: f64) -> Result<Self, KlError> {
        Self::new(mean, sigma * sigma / 2.0)
    }
}

impl Density for GaussianSpec {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let sq: f64 = x
            .iter()
            .zip(&self.mean)
            .map(|(a, m)| (a - m) * (a - m))
            .sum();
        -0.5 * sq / self.variance - 0.5 * d * (2.0 * std::f64::consts::PI * self.variance).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let sd = self.variance.sqrt();
        for (o, m) in out.iter_mut().zip(&self.mean) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + sd * z;
        }
    }
}

/// Closed-form `KL(p || q)` for isotropic Gaussians:
/// `d/2 (v1/v2 - 1 + ln(v2/v1)) + ||mu1 - mu2||^2 / (2 v2)`.
pub fn kl_gaussian(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64, KlError> {
    if p.dim() != q.dim() {
        return Err(KlError::DimensionMismatch(p.dim(), q.dim()));
    }
    let d = p.dim() as f64;
    let ratio = p.variance / q.variance;
    let sq: f64 = p
        .mean
        .iter()
        .zip(&q.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * d * (ratio - 1.0 - ratio.ln()) + sq / (2.0 * q.variance))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn finish(&self) -> KlEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        KlEstimate {
            estimate: self.mean,
            std_error: (var / self.n.max(1) as f64).sqrt(),
            samples: self.n,
        }
    }
}

/// Mean of `ln p(X) - ln q(X)` over `num_samples` draws `X ~ p`.
pub fn kl_monte_carlo<P: Density + ?Sized, Q: Density + ?Sized>(
    p: &P,
    q: &Q,
    num_samples: usize,
    seed: u64,
) -> Result<KlEstimate, KlError> {
    if p.dim() != q.dim() {
        return Err(KlError::DimensionMismatch(p.dim(), q.dim()));
    }
    if num_samples == 0 {
        return Err(KlError::Precondition("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; p.dim()];
    let mut m = Moments::default();
    for _ in 0..num_samples {
        p.sample(&mut rng, &mut x);
        let r = p.log_density(&x) - q.log_density(&x);
        if !r.is_finite() {
            return Err(KlError::NonFinite {
                value: r,
                sample: x.clone(),
            });
        }
        m.push(r);
    }
    Ok(m.finish())
}

/// One row of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub lemma: String,
    pub seed: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

pub const REPORT_HEADER: &[&str] = &["lemma", "seed", "estimate", "stderr", "bound", "pass"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let a = GaussianSpec::new(vec![0.0], 1.0).unwrap();
        assert_eq!(kl_gaussian(&a, &a).unwrap(), 0.0);
        let b = GaussianSpec::new(vec![1.0], 1.0).unwrap();
        assert!((kl_gaussian(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        let c = GaussianSpec::new(vec![0.0], 2.0).unwrap();
        assert!((kl_gaussian(&a, &c).unwrap() - 0.096_573_590_279_972_64).abs() < 1e-15);
        let d = GaussianSpec::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(kl_gaussian(&a, &d), Err(KlError::DimensionMismatch(1, 2)));
        assert!(GaussianSpec::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn equal_variance_reduces_to_scaled_distance() {
        let sigma: f64 = 0.7;
        let p = GaussianSpec::langevin(vec![0.1, -0.2, 0.3], sigma).unwrap();
        let q = GaussianSpec::langevin(vec![0.0, 0.1, 0.2], sigma).unwrap();
        let sq = 0.01 + 0.09 + 0.01;
        assert!((kl_gaussian(&p, &q).unwrap() - sq / (sigma * sigma)).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let p = GaussianSpec::new(vec![0.3, -0.1], 0.8).unwrap();
        let q = GaussianSpec::new(vec![0.0, 0.2], 1.1).unwrap();
        let est = kl_monte_carlo(&p, &q, 200_000, 4).unwrap();
        let exact = kl_gaussian(&p, &q).unwrap();
        assert!(
            (est.estimate - exact).abs() < 3.0 * est.std_error,
            "{est:?} vs {exact}"
        );
        assert_eq!(est, kl_monte_carlo(&p, &q, 200_000, 4).unwrap());
    }

    #[test]
    fn self_divergence_is_zero() {
        let p = GaussianSpec::new(vec![1.0; 3], 0.5).unwrap();
        let est = kl_monte_carlo(&p, &p, 1000, 0).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn non_finite_ratio_is_diagnosed() {
        struct Empty;
        impl Density for Empty {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
            fn sample(&self, _: &mut ChaCha8Rng, _: &mut [f64]) {}
        }
        let p = GaussianSpec::new(vec![0.0], 1.0).unwrap();
        assert!(matches!(
            kl_monte_carlo(&p, &Empty, 10, 0),
            Err(KlError::NonFinite { .. })
        ));
    }
}
