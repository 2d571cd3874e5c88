//! Equal-weight Gaussian mixtures indexed by mini-batches, and the Monte
//! Carlo check of the mixture KL bound `8.23 b^2 beta^2 / (sigma^2 n^2)`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Density, KlError, Moments, ReportRow};

/// Constant of the mixture bound.
pub const MIXTURE_CONSTANT: f64 = 8.23;
/// Largest `n` whose batches are enumerated.
pub const MAX_ENUMERATED_N: usize = 12;

/// All size-`b` subsets of `0..n` in lexicographic order.
pub fn enumerate_batches(n: usize, b: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(b);
    fn rec(start: usize, n: usize, b: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == b {
            out.push(cur.clone());
            return;
        }
        for i in start..=n - (b - cur.len()) {
            cur.push(i);
            rec(i + 1, n, b, cur, out);
            cur.pop();
        }
    }
    if b <= n {
        rec(0, n, b, &mut cur, &mut out);
    }
    out
}

/// `(1/|G|) sum_B N(mu_B, sigma^2/2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self, KlError> {
        let d = means
            .first()
            .map(Vec::len)
            .ok_or_else(|| KlError::Precondition("empty mixture".into()))?;
        if let Some(m) = means.iter().find(|m| m.len() != d) {
            return Err(KlError::DimensionMismatch(d, m.len()));
        }
        if !(sigma > 0.0) {
            return Err(KlError::Precondition(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { means, sigma })
    }
}

impl Density for MixtureSpec {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let v = self.sigma * self.sigma / 2.0;
        let logs: Vec<f64> = self
            .means
            .iter()
            .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * v))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let d = x.len() as f64;
        top + (s / self.means.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let m = self.means.choose(rng).expect("non-empty");
        let sd = self.sigma / std::f64::consts::SQRT_2;
        for (o, c) in out.iter_mut().zip(m) {
            let z: f64 = rng.sample(StandardNormal);
            *o = c + sd * z;
        }
    }
}

/// Two mixtures over the same batches that differ only on batches
/// containing the last index. The log-density ratio is evaluated by
/// summing the shared components once.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePair {
    pub n: usize,
    pub b: usize,
    pub sigma: f64,
    pub batches: Vec<Vec<usize>>,
    pub means: Vec<Vec<f64>>,
    pub means_prime: Vec<Vec<f64>>,
}

impl MixturePair {
    fn in_gn(&self, i: usize) -> bool {
        self.batches[i].last() == Some(&(self.n - 1))
    }

    /// `max_{B in G_n} ||mu_B - mu'_B||`.
    pub fn beta(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.means_prime)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max)
    }

    /// Diameter of the union of both mean collections.
    pub fn diameter(&self) -> f64 {
        let all: Vec<&Vec<f64>> = self.means.iter().chain(self.means_prime.iter()).collect();
        let mut d: f64 = 0.0;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                d = d.max(dist(all[i], all[j]));
            }
        }
        d
    }

    /// Checks every hypothesis of the bound.
    pub fn check_conditions(&self) -> Result<(), KlError> {
        let fail = |m: String| Err(KlError::Precondition(m));
        if 2 * self.b > self.n {
            return fail(format!(
                "b = {} exceeds n/2 = {}",
                self.b,
                self.n as f64 / 2.0
            ));
        }
        for (i, (a, b)) in self.means.iter().zip(&self.means_prime).enumerate() {
            if !self.in_gn(i) && a != b {
                return fail(format!(
                    "batch {:?} excludes the last index but its mean moved",
                    self.batches[i]
                ));
            }
        }
        let beta = self.beta();
        if beta > self.sigma {
            return fail(format!("beta = {beta} exceeds sigma = {}", self.sigma));
        }
        let diam = self.diameter();
        if diam > self.sigma / 10.0 * (1.0 + 1e-12) {
            return fail(format!(
                "diameter {diam} exceeds sigma/10 = {}",
                self.sigma / 10.0
            ));
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        let r = self.b as f64 * self.beta() / (self.sigma * self.n as f64);
        MIXTURE_CONSTANT * r * r
    }

    /// Monte Carlo `KL(P || P')` with draws from `P`.
    pub fn kl_monte_carlo(
        &self,
        num_samples: usize,
        seed: u64,
    ) -> Result<super::KlEstimate, KlError> {
        let d = self.means[0].len();
        let s2 = self.sigma * self.sigma;
        // log component weight relative to exp(-||x||^2 / sigma^2):
        // (2 x.mu - ||mu||^2) / sigma^2
        let prep = |ms: &[Vec<f64>]| -> Vec<(Vec<f64>, f64)> {
            ms.iter()
                .map(|m| {
                    (
                        m.iter().map(|v| 2.0 * v / s2).collect(),
                        -m.iter().map(|v| v * v).sum::<f64>() / s2,
                    )
                })
                .collect()
        };
        let shared: Vec<(Vec<f64>, f64)> = prep(
            &(0..self.batches.len())
                .filter(|&i| !self.in_gn(i))
                .map(|i| self.means[i].clone())
                .collect::<Vec<_>>(),
        );
        let gn: Vec<usize> = (0..self.batches.len()).filter(|&i| self.in_gn(i)).collect();
        let own = prep(
            &gn.iter()
                .map(|&i| self.means[i].clone())
                .collect::<Vec<_>>(),
        );
        let other = prep(
            &gn.iter()
                .map(|&i| self.means_prime[i].clone())
                .collect::<Vec<_>>(),
        );
        let sum = |x: &[f64], comps: &[(Vec<f64>, f64)]| -> f64 {
            comps
                .iter()
                .map(|(w, c)| (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c).exp())
                .sum()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = self.sigma / std::f64::consts::SQRT_2;
        let mut x = vec![0.0; d];
        let mut m = Moments::default();
        for _ in 0..num_samples {
            let k = rng.random_range(0..self.means.len());
            for (xi, c) in x.iter_mut().zip(&self.means[k]) {
                let z: f64 = rng.sample(StandardNormal);
                *xi = c + sd * z;
            }
            let base = sum(&x, &shared);
            let r = (base + sum(&x, &own)).ln() - (base + sum(&x, &other)).ln();
            if !r.is_finite() {
                return Err(KlError::NonFinite {
                    value: r,
                    sample: x,
                });
            }
            m.push(r);
        }
        Ok(m.finish())
    }

    pub fn mixtures(&self) -> (MixtureSpec, MixtureSpec) {
        (
            MixtureSpec {
                means: self.means.clone(),
                sigma: self.sigma,
            },
            MixtureSpec {
                means: self.means_prime.clone(),
                sigma: self.sigma,
            },
        )
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// How instance means are produced. All generators keep both collections
/// inside a ball of radius `sigma/20`, so the diameter condition holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeansGenerator {
    /// `mu' = mu` everywhere.
    Identical,
    /// Uniform points in the ball; batches containing the last index get an
    /// independent uniform point for `mu'`.
    Random,
    /// Every `mu_B` at one pole, every moved `mu'_B` at the opposite pole:
    /// the largest displacement the diameter condition allows.
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConfig {
    pub n: usize,
    pub b: usize,
    pub sigma: f64,
    pub dim: usize,
    pub generator: MeansGenerator,
    pub seed: u64,
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|a| *a *= r / norm);
    v
}

impl LemmaConfig {
    pub fn generate(&self) -> Result<MixturePair, KlError> {
        if self.n > MAX_ENUMERATED_N || self.n < 2 || self.b == 0 {
            return Err(KlError::Precondition(format!(
                "need 2 <= n <= {MAX_ENUMERATED_N} and b >= 1, got n={}, b={}",
                self.n, self.b
            )));
        }
        if self.dim == 0 {
            return Err(KlError::Precondition("dimension must be >= 1".into()));
        }
        let batches = enumerate_batches(self.n, self.b);
        let radius = self.sigma / 20.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let last = self.n - 1;
        let (means, means_prime): (Vec<_>, Vec<_>) = batches
            .iter()
            .map(|batch| {
                let moved = batch.contains(&last);
                match self.generator {
                    MeansGenerator::Identical => {
                        let m = uniform_in_ball(&mut rng, self.dim, radius);
                        (m.clone(), m)
                    }
                    MeansGenerator::Random => {
                        let m = uniform_in_ball(&mut rng, self.dim, radius);
                        let mp = if moved {
                            uniform_in_ball(&mut rng, self.dim, radius)
                        } else {
                            m.clone()
                        };
                        (m, mp)
                    }
                    MeansGenerator::WorstCase => {
                        let mut pole = vec![0.0; self.dim];
                        pole[0] = -radius;
                        let mut opposite = pole.clone();
                        if moved {
                            opposite[0] = radius;
                        }
                        (pole, opposite)
                    }
                }
            })
            .unzip();
        let pair = MixturePair {
            n: self.n,
            b: self.b,
            sigma: self.sigma,
            batches,
            means,
            means_prime,
        };
        pair.check_conditions()?;
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub config: LemmaConfig,
    pub beta: f64,
    pub diameter: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl LemmaReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            lemma: "mixture".into(),
            seed: self.config.seed,
            estimate: self.estimate,
            stderr: self.std_error,
            bound: self.bound,
            pass: self.pass,
        }
    }
}

/// Generates an admissible instance and compares its Monte Carlo KL with the
/// bound; passes iff `estimate - 3 stderr <= bound`.
pub fn verify_minibatch_lemma(
    config: &LemmaConfig,
    num_samples: usize,
) -> Result<LemmaReport, KlError> {
    let pair = config.generate()?;
    let est = pair.kl_monte_carlo(num_samples, config.seed.wrapping_add(1))?;
    let bound = pair.bound();
    Ok(LemmaReport {
        config: *config,
        beta: pair.beta(),
        diameter: pair.diameter(),
        estimate: est.estimate,
        std_error: est.std_error,
        bound,
        pass: est.estimate - 3.0 * est.std_error <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kl_lab::kl_monte_carlo;

    #[test]
    fn batch_enumeration() {
        assert_eq!(enumerate_batches(4, 2).len(), 6);
        assert_eq!(enumerate_batches(12, 6).len(), 924);
        assert_eq!(
            enumerate_batches(3, 2),
            vec![vec![0, 1], vec![0, 2], vec![1, 2]]
        );
    }

    #[test]
    fn identical_means_give_zero() {
        let cfg = LemmaConfig {
            n: 6,
            b: 3,
            sigma: 1.0,
            dim: 2,
            generator: MeansGenerator::Identical,
            seed: 3,
        };
        let r = verify_minibatch_lemma(&cfg, 1000).unwrap();
        assert_eq!((r.beta, r.bound, r.estimate), (0.0, 0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn fast_ratio_matches_generic_mixture_density() {
        let cfg = LemmaConfig {
            n: 5,
            b: 2,
            sigma: 0.8,
            dim: 3,
            generator: MeansGenerator::Random,
            seed: 11,
        };
        let pair = cfg.generate().unwrap();
        let (p, q) = pair.mixtures();
        let fast = pair.kl_monte_carlo(20_000, 5).unwrap();
        let slow = kl_monte_carlo(&p, &q, 20_000, 5).unwrap();
        // same estimator, different sampling order: agree statistically
        let tol = 4.0 * (fast.std_error.powi(2) + slow.std_error.powi(2)).sqrt();
        assert!(
            (fast.estimate - slow.estimate).abs() < tol,
            "{fast:?} {slow:?}"
        );
    }

    #[test]
    fn worst_case_small_instance() {
        let cfg = LemmaConfig {
            n: 4,
            b: 2,
            sigma: 1.0,
            dim: 2,
            generator: MeansGenerator::WorstCase,
            seed: 0,
        };
        let pair = cfg.generate().unwrap();
        assert!((pair.beta() - 0.1).abs() < 1e-15);
        let r = verify_minibatch_lemma(&cfg, 100_000).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn violations_are_reported() {
        let cfg = LemmaConfig {
            n: 4,
            b: 3,
            sigma: 1.0,
            dim: 2,
            generator: MeansGenerator::Random,
            seed: 0,
        };
        assert!(matches!(cfg.generate(), Err(KlError::Precondition(_))));
        let cfg = LemmaConfig { n: 13, b: 2, ..cfg };
        assert!(cfg.generate().is_err());
    }
}
