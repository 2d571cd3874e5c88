//! Certification suites over the KL lab, reported as CSV rows.
//!
//! Every randomized instance is a pure function of its own seed (the value
//! in the `seed` column), so a failing row can be replayed alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::KvConfig;
use super::csv::{write_atomic, CsvRow};
use super::HarnessError;
use crate::kl_lab::{
    chain_rule_check, dtd_bound_check, kl_gaussian, kl_monte_carlo, pinsker_check,
    quadrature_phi_constant, random_chain, random_distribution, scan_phi_bound,
    verify_minibatch_lemma, GaussianSpec, KlError, LemmaConfig, MeansGenerator, ReportRow,
    MIXTURE_CONSTANT, PUBLISHED_QUADRATURE_CONSTANT, REPORT_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    ChainRule,
    PhiScan,
    Mixture,
    Gaussian,
    Pinsker,
    Dtd,
    Quadrature,
}

impl Suite {
    pub const ALL: &'static [(&'static str, Suite)] = &[
        ("chain-rule", Suite::ChainRule),
        ("phi-scan", Suite::PhiScan),
        ("mixture", Suite::Mixture),
        ("gaussian", Suite::Gaussian),
        ("pinsker", Suite::Pinsker),
        ("dtd", Suite::Dtd),
        ("quadrature", Suite::Quadrature),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(_, s)| *s == self)
            .expect("listed")
            .0
    }

    /// Parses a selector; `all` expands to every suite.
    pub fn parse_selector(s: &str) -> Result<Vec<Suite>, HarnessError> {
        if s == "all" {
            return Ok(Self::ALL.iter().map(|(_, s)| *s).collect());
        }
        Self::ALL
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, suite)| vec![*suite])
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|(n, _)| *n).collect();
                HarnessError::Usage(format!(
                    "unknown suite `{s}`; expected all or one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Instance counts and sample sizes for the randomized suites.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub chains: usize,
    pub mixture_instances: usize,
    pub mixture_samples: usize,
    pub gaussian_pairs: usize,
    pub gaussian_samples: usize,
    pub pinsker_pairs: usize,
    pub dtd_pairs: usize,
    pub dtd_terms: usize,
    pub phi_y_points: usize,
    pub phi_delta_points: usize,
    /// Run only the instance with this seed.
    pub replay: Option<u64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            chains: 100,
            mixture_instances: 50,
            mixture_samples: 1_000_000,
            gaussian_pairs: 20,
            gaussian_samples: 100_000,
            pinsker_pairs: 1000,
            dtd_pairs: 200,
            dtd_terms: 40,
            phi_y_points: 2001,
            phi_delta_points: 500,
            replay: None,
        }
    }
}

const SUITE_KEYS: &[&str] = &[
    "seed",
    "replay",
    "output",
    "chains",
    "mixture.instances",
    "mixture.samples",
    "gaussian.pairs",
    "gaussian.samples",
    "pinsker.pairs",
    "dtd.pairs",
    "dtd.terms",
    "phi.y_points",
    "phi.delta_points",
];

impl SuiteOptions {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, HarnessError> {
        kv.check_known(SUITE_KEYS)?;
        let d = Self::default();
        let opts = Self {
            seed: kv.get("seed", d.seed)?,
            chains: kv.get("chains", d.chains)?,
            mixture_instances: kv.get("mixture.instances", d.mixture_instances)?,
            mixture_samples: kv.get("mixture.samples", d.mixture_samples)?,
            gaussian_pairs: kv.get("gaussian.pairs", d.gaussian_pairs)?,
            gaussian_samples: kv.get("gaussian.samples", d.gaussian_samples)?,
            pinsker_pairs: kv.get("pinsker.pairs", d.pinsker_pairs)?,
            dtd_pairs: kv.get("dtd.pairs", d.dtd_pairs)?,
            dtd_terms: kv.get("dtd.terms", d.dtd_terms)?,
            phi_y_points: kv.get("phi.y_points", d.phi_y_points)?,
            phi_delta_points: kv.get("phi.delta_points", d.phi_delta_points)?,
            replay: kv.get_opt("replay")?,
        };
        if opts.phi_y_points < 2
            || opts.phi_delta_points < 2
            || opts.mixture_samples == 0
            || opts.gaussian_samples < 2
        {
            return Err(HarnessError::Usage(
                "phi grids need >= 2 points and sample counts must be positive".into(),
            ));
        }
        Ok(opts)
    }

    fn instance_seeds(&self, count: usize) -> Vec<u64> {
        match self.replay {
            Some(s) => vec![s],
            None => (0..count as u64)
                .map(|i| {
                    self.seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add(i)
                })
                .collect(),
        }
    }
}

/// Chain-rule tolerance on `|joint - decomposed|`.
pub const CHAIN_RULE_TOLERANCE: f64 = 1e-12;

fn kl_err(e: KlError) -> HarnessError {
    HarnessError::Verification(e.to_string())
}

fn row(lemma: &str, seed: u64, estimate: f64, stderr: f64, bound: f64, pass: bool) -> ReportRow {
    ReportRow {
        lemma: lemma.into(),
        seed,
        estimate,
        stderr,
        bound,
        pass,
    }
}

/// Up to 4 states and 4 steps, two chains from the same seed.
pub fn chain_rule_instance(seed: u64) -> Result<ReportRow, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = rng.random_range(2..=4);
    let steps = rng.random_range(1..=4);
    let p = random_chain(rng.random(), states, steps);
    let q = random_chain(rng.random(), states, steps);
    let r = chain_rule_check(&p, &q, CHAIN_RULE_TOLERANCE).map_err(kl_err)?;
    Ok(row(
        "chain-rule",
        seed,
        r.joint,
        r.abs_error,
        r.decomposed,
        r.abs_error < CHAIN_RULE_TOLERANCE,
    ))
}

/// A random admissible mixture instance: `4 <= n <= 8`, `b <= n/2`,
/// dimension 2 or 3. Every tenth instance uses the extreme placement.
pub fn mixture_instance(seed: u64) -> LemmaConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=8);
    let b = rng.random_range(1..=n / 2);
    let dim = rng.random_range(2..=3);
    let sigma = rng.random_range(0.5..2.0);
    let generator = if seed % 10 == 9 {
        MeansGenerator::WorstCase
    } else {
        MeansGenerator::Random
    };
    LemmaConfig {
        n,
        b,
        sigma,
        dim,
        generator,
        seed,
    }
}

fn gaussian_pair(seed: u64) -> (GaussianSpec, GaussianSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=4);
    let spec = |rng: &mut ChaCha8Rng| {
        let mean = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        GaussianSpec::new(mean, rng.random_range(0.5..2.0)).expect("valid draw")
    };
    let p = spec(&mut rng);
    let q = spec(&mut rng);
    (p, q)
}

/// Monte Carlo KL within 3 standard errors of the closed form, and the
/// standard error ratio between `4N` and `N` samples within 20% of 1/2.
/// Emits two rows per pair.
pub fn gaussian_instance(seed: u64, samples: usize) -> Result<Vec<ReportRow>, HarnessError> {
    let (p, q) = gaussian_pair(seed);
    let exact = kl_gaussian(&p, &q).map_err(kl_err)?;
    let small = kl_monte_carlo(&p, &q, samples, seed).map_err(kl_err)?;
    let large = kl_monte_carlo(&p, &q, 4 * samples, seed.wrapping_add(1)).map_err(kl_err)?;
    let ratio = large.std_error / small.std_error;
    Ok(vec![
        row(
            "gaussian",
            seed,
            small.estimate,
            small.std_error,
            exact,
            (small.estimate - exact).abs() <= 3.0 * small.std_error,
        ),
        row(
            "gaussian-stderr-ratio",
            seed,
            ratio,
            0.0,
            0.5,
            (ratio - 0.5).abs() <= 0.1,
        ),
    ])
}

fn random_pair(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(2..=8);
    let p = random_distribution(&mut rng, len, 0.01);
    let q = random_distribution(&mut rng, len, 0.01);
    (p, q)
}

pub fn pinsker_instance(seed: u64) -> Result<ReportRow, HarnessError> {
    let (p, q) = random_pair(seed);
    let r = pinsker_check(&p, &q).map_err(kl_err)?;
    Ok(row(
        "pinsker",
        seed,
        r.total_variation,
        0.0,
        r.bound,
        r.pass,
    ))
}

pub fn dtd_instance(seed: u64, terms: usize) -> Result<ReportRow, HarnessError> {
    let (p, q) = random_pair(seed);
    let r = dtd_bound_check(&p, &q, terms).map_err(kl_err)?;
    Ok(row(
        "dtd",
        seed,
        r.kl,
        0.0,
        std::f64::consts::LN_2 * (r.partial + r.tail_bound),
        r.pass,
    ))
}

/// Runs one suite and returns its rows.
pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    match suite {
        Suite::ChainRule => {
            for s in opts.instance_seeds(opts.chains) {
                rows.push(chain_rule_instance(s)?);
            }
        }
        Suite::PhiScan => {
            let scan = scan_phi_bound(opts.phi_y_points, 10.0, opts.phi_delta_points, 1e-8, 10.0);
            let located = (scan.argmax_y - std::f64::consts::FRAC_1_SQRT_2).abs() <= scan.y_step
                && scan.argmax_delta.is_none_or(|d| d <= scan.y_step);
            rows.push(row(
                "phi-scan",
                opts.seed,
                scan.max,
                0.0,
                2.0 / std::f64::consts::E,
                scan.pass && located,
            ));
        }
        Suite::Mixture => {
            for s in opts.instance_seeds(opts.mixture_instances) {
                let r = verify_minibatch_lemma(&mixture_instance(s), opts.mixture_samples)
                    .map_err(kl_err)?;
                rows.push(r.row());
            }
        }
        Suite::Gaussian => {
            for s in opts.instance_seeds(opts.gaussian_pairs) {
                rows.extend(gaussian_instance(s, opts.gaussian_samples)?);
            }
        }
        Suite::Pinsker => {
            for s in opts.instance_seeds(opts.pinsker_pairs) {
                rows.push(pinsker_instance(s)?);
            }
        }
        Suite::Dtd => {
            let r = dtd_bound_check(&[0.9, 0.1], &[0.5, 0.5], opts.dtd_terms).map_err(kl_err)?;
            rows.push(row(
                "dtd",
                opts.seed,
                r.kl,
                0.0,
                std::f64::consts::LN_2 * (r.partial + r.tail_bound),
                r.pass,
            ));
            for s in opts.instance_seeds(opts.dtd_pairs) {
                rows.push(dtd_instance(s, opts.dtd_terms)?);
            }
        }
        Suite::Quadrature => {
            let a = quadrature_phi_constant(1e-10).map_err(kl_err)?;
            let b = quadrature_phi_constant(1e-12).map_err(kl_err)?;
            let drift = ((a.value - b.value) / b.value).abs();
            rows.push(row(
                "quadrature",
                opts.seed,
                b.value,
                drift.max(b.error_estimate + b.tail_bound),
                PUBLISHED_QUADRATURE_CONSTANT,
                b.within_published_value,
            ));
            rows.push(row(
                "quadrature-constant",
                opts.seed,
                b.implied_constant,
                0.0,
                MIXTURE_CONSTANT,
                b.within_mixture_constant && drift < 5e-7,
            ));
        }
    }
    Ok(rows)
}

pub fn report_rows(rows: &[ReportRow]) -> Vec<CsvRow> {
    rows.iter()
        .map(|r| {
            let mut row = CsvRow::default();
            row.text(&r.lemma);
            row.0.push(r.seed.to_string());
            row.float(r.estimate);
            row.float(r.stderr);
            row.float(r.bound);
            row.0.push(r.pass.to_string());
            row
        })
        .collect()
}

/// Runs the selected suites. The report is written to `output` when given;
/// any failing row yields a verification error naming the failing instances.
pub fn verify_lemmas(
    suites: &[Suite],
    opts: &SuiteOptions,
    output: Option<&std::path::Path>,
) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    for &suite in suites {
        rows.extend(run_suite(suite, opts)?);
    }
    if let Some(path) = output {
        write_atomic(path, REPORT_HEADER, report_rows(&rows))?;
    }
    Ok(rows)
}

/// Failing rows as `lemma@seed` (replay with `--replay=<seed>`).
pub fn failures(rows: &[ReportRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}@{}", r.lemma, r.seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteOptions {
        SuiteOptions {
            chains: 20,
            mixture_instances: 3,
            mixture_samples: 2000,
            gaussian_pairs: 3,
            gaussian_samples: 20_000,
            pinsker_pairs: 50,
            dtd_pairs: 20,
            phi_y_points: 201,
            phi_delta_points: 20,
            ..SuiteOptions::default()
        }
    }

    #[test]
    fn selectors() {
        assert_eq!(
            Suite::parse_selector("chain-rule").unwrap(),
            vec![Suite::ChainRule]
        );
        assert_eq!(Suite::parse_selector("all").unwrap().len(), 7);
        assert!(matches!(
            Suite::parse_selector("bogus"),
            Err(HarnessError::Usage(_))
        ));
        assert_eq!(Suite::Dtd.name(), "dtd");
    }

    #[test]
    fn chain_rule_suite_passes() {
        let rows = run_suite(Suite::ChainRule, &quick()).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(failures(&rows).is_empty());
    }

    #[test]
    fn phi_scan_suite_passes() {
        let rows = run_suite(Suite::PhiScan, &quick()).unwrap();
        assert!(rows[0].pass, "{:?}", rows[0]);
    }

    #[test]
    fn small_suites_pass() {
        for suite in [Suite::Mixture, Suite::Pinsker, Suite::Dtd, Suite::Gaussian] {
            let rows = run_suite(suite, &quick()).unwrap();
            assert!(
                failures(&rows).is_empty(),
                "{suite:?}: {:?}",
                failures(&rows)
            );
        }
    }

    #[test]
    fn instances_are_admissible() {
        for s in 0..200 {
            let cfg = mixture_instance(s);
            assert!(cfg.b * 2 <= cfg.n && cfg.n <= 12);
            cfg.generate().unwrap();
        }
    }

    #[test]
    fn replay_runs_one_instance() {
        let mut opts = quick();
        let rows = run_suite(Suite::Pinsker, &opts).unwrap();
        opts.replay = Some(rows[7].seed);
        let again = run_suite(Suite::Pinsker, &opts).unwrap();
        assert_eq!(again, vec![rows[7].clone()]);
    }

    #[test]
    fn options_from_keys() {
        let mut kv = KvConfig::default();
        kv.apply_overrides(&["--chains=7", "--replay=42", "--output=x.csv"])
            .unwrap();
        let o = SuiteOptions::from_kv(&kv).unwrap();
        assert_eq!((o.chains, o.replay), (7, Some(42)));
        kv.apply_overrides(&["--phi.y_points=1"]).unwrap();
        assert!(SuiteOptions::from_kv(&kv).is_err());
    }

    #[test]
    fn report_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows = verify_lemmas(&[Suite::ChainRule], &quick(), Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert!(text.starts_with("lemma,seed,estimate,stderr,bound,pass\n"));
    }
}
