//! Twin-chain stability: full-batch Langevin dynamics on two datasets that
//! differ in one example, compared against the stability bounds.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::KvConfig;
use super::csv::{fmt_float, write_atomic, CsvRow};
use super::HarnessError;
use crate::bounds::{cld_bound_finite_t, cld_bound_gibbs, CldParams};
use crate::data::{synthetic_gaussian_blobs, Dataset};
use crate::kl_lab::Moments;
use crate::nn::{zero_one_loss, GradientWorkspace, ModelSpec, ParamVector};
use crate::optim::{
    mean_gradient, step_gld, ClipSpec, LossKind, MlpObjective, NoiseKind, Objective, Schedule,
    StepContext, StepRngs,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    /// Range of the bounded training loss.
    pub c: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub steps: usize,
    pub num_seeds: usize,
    pub probes: usize,
    /// Run both chains on the same dataset.
    pub identical: bool,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            n: 50,
            dim: 2,
            classes: 2,
            separation: 2.0,
            c: 1.0,
            lambda: 0.5,
            gamma: 0.05,
            // inverse temperature 1
            sigma: 0.2f64.sqrt(),
            steps: 200,
            num_seeds: 200,
            probes: 64,
            identical: false,
            seed: 0,
            output: None,
        }
    }
}

const TWIN_KEYS: &[&str] = &[
    "twin.n",
    "twin.dim",
    "twin.classes",
    "twin.separation",
    "twin.c",
    "twin.lambda",
    "twin.gamma",
    "twin.sigma",
    "twin.steps",
    "twin.seeds",
    "twin.probes",
    "twin.identical",
    "seed",
    "output",
];

impl TwinConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, HarnessError> {
        kv.check_known(TWIN_KEYS)?;
        let d = Self::default();
        let cfg = Self {
            n: kv.get("twin.n", d.n)?,
            dim: kv.get("twin.dim", d.dim)?,
            classes: kv.get("twin.classes", d.classes)?,
            separation: kv.get("twin.separation", d.separation)?,
            c: kv.get("twin.c", d.c)?,
            lambda: kv.get("twin.lambda", d.lambda)?,
            gamma: kv.get("twin.gamma", d.gamma)?,
            sigma: kv.get("twin.sigma", d.sigma)?,
            steps: kv.get("twin.steps", d.steps)?,
            num_seeds: kv.get("twin.seeds", d.num_seeds)?,
            probes: kv.get("twin.probes", d.probes)?,
            identical: kv.get("twin.identical", d.identical)?,
            seed: kv.get("seed", d.seed)?,
            output: kv.raw("output").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Usage(m));
        if self.n < 2
            || self.classes < 2
            || self.dim == 0
            || self.probes == 0
            || self.num_seeds == 0
        {
            return bad(
                "twin.n, twin.classes >= 2 and twin.dim, twin.probes, twin.seeds >= 1".into(),
            );
        }
        for (name, v) in [
            ("c", self.c),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("twin.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Inverse temperature of the continuous dynamics the chain discretizes:
    /// noise `sigma/sqrt 2` per coordinate matches `sqrt(2 gamma / beta)`.
    pub fn beta(&self) -> f64 {
        4.0 * self.gamma / (self.sigma * self.sigma)
    }

    /// Continuous time covered by the chain.
    pub fn horizon(&self) -> f64 {
        self.gamma * self.steps as f64
    }
}

/// Loss gap at one probe, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGap {
    pub loss_a: f64,
    pub loss_b: f64,
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinReport {
    pub probes: Vec<ProbeGap>,
    pub max_gap: f64,
    pub argmax_probe: usize,
    /// Standard error of the gap at the maximizing probe.
    pub mc_error: f64,
    pub beta: f64,
    pub lipschitz: f64,
    /// Mean over seeds of the path KL between the two chains.
    pub kl: f64,
    pub kl_stderr: f64,
    /// `sqrt(KL / 2)`, a bound on the gap of any `[0, 1]`-valued loss.
    pub kl_pinsker_bound: f64,
    pub cld_bound: f64,
    pub gibbs_bound: f64,
    pub gibbs_precondition: bool,
    pub num_seeds: usize,
    pub sufficient_samples: bool,
}

impl TwinReport {
    pub fn within_cld_bound(&self) -> bool {
        self.max_gap <= self.cld_bound
    }

    pub fn within_kl_bound(&self) -> bool {
        self.max_gap <= self.kl_pinsker_bound
    }

    pub fn summary_rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("max_gap", fmt_float(self.max_gap)),
            ("argmax_probe", self.argmax_probe.to_string()),
            ("mc_error", fmt_float(self.mc_error)),
            ("beta", fmt_float(self.beta)),
            ("lipschitz", fmt_float(self.lipschitz)),
            ("kl", fmt_float(self.kl)),
            ("kl_stderr", fmt_float(self.kl_stderr)),
            ("kl_pinsker_bound", fmt_float(self.kl_pinsker_bound)),
            ("cld_bound", fmt_float(self.cld_bound)),
            ("gibbs_bound", fmt_float(self.gibbs_bound)),
            ("gibbs_precondition", self.gibbs_precondition.to_string()),
            ("num_seeds", self.num_seeds.to_string()),
            ("sufficient_samples", self.sufficient_samples.to_string()),
            ("within_cld_bound", self.within_cld_bound().to_string()),
            ("within_kl_bound", self.within_kl_bound().to_string()),
        ]
    }
}

pub const PROBE_HEADER: &[&str] = &["probe", "loss_a", "loss_b", "gap", "stderr"];

/// Datasets `S`, `S'` (last example replaced) and the probe set.
fn twin_data(cfg: &TwinConfig) -> Result<(Dataset, Dataset, Dataset), HarnessError> {
    let pool = synthetic_gaussian_blobs(
        cfg.classes,
        cfg.dim,
        cfg.n + 1 + cfg.probes,
        cfg.separation,
        cfg.seed,
    )?;
    let mut ex = pool.examples;
    let probes = ex.split_off(cfg.n + 1);
    let replacement = ex.pop().expect("pool holds n + 1 examples");
    let a = Dataset::new("twin-a", ex.clone(), cfg.classes)?;
    if !cfg.identical {
        *ex.last_mut().expect("n >= 2") = replacement;
    }
    let b = Dataset::new("twin-b", ex, cfg.classes)?;
    let probes = Dataset::new("twin-probes", probes, cfg.classes)?;
    Ok((a, b, probes))
}

/// Lipschitz constant of `c (1 - p_y)` in the weights of a softmax
/// regression: `p_y ||p - e_y|| <= sqrt 2 p_y (1 - p_y) <= sqrt 2 / 4`,
/// times the norm of the bias-augmented input.
fn lipschitz_constant(c: f64, sets: &[&Dataset]) -> f64 {
    let max_norm = sets
        .iter()
        .flat_map(|d| d.examples.iter())
        .map(|e| (1.0 + e.features.iter().map(|x| x * x).sum::<f64>()).sqrt())
        .fold(0.0, f64::max);
    c * std::f64::consts::SQRT_2 / 4.0 * max_norm
}

/// `P(margin + N(0, scale^2) < 0)` for a two-class softmax regression whose
/// logits carry the final step's Gaussian noise: the logit difference has
/// variance `sigma^2 (||x||^2 + 1)`.
fn smoothed_error(logits: &[f64], label: usize, scale: f64) -> f64 {
    let margin = logits[label] - logits[1 - label];
    0.5 * libm::erfc(margin / (scale * std::f64::consts::SQRT_2))
}

/// Runs both chains under `num_seeds` seeds. Within a seed the chains share
/// the initialization (drawn from the regularizer's Gibbs law) and the
/// noise sequence. With two classes the expected 0/1 probe loss over the
/// final step's noise is computed in closed form instead of sampled.
pub fn run_twin_chain(cfg: &TwinConfig) -> Result<TwinReport, HarnessError> {
    cfg.validate()?;
    let (data_a, data_b, probes) = twin_data(cfg)?;
    let spec = ModelSpec::new(vec![cfg.dim, cfg.classes])?;
    let schedule = Schedule::constant(cfg.gamma, cfg.sigma / cfg.gamma)?;
    let loss = LossKind::BoundedLikelihood { scale: cfg.c };
    let mut obj_a = MlpObjective::new(&spec, &data_a)
        .with_loss(loss)
        .with_l2(cfg.lambda);
    let mut obj_b = MlpObjective::new(&spec, &data_b)
        .with_loss(loss)
        .with_l2(cfg.lambda);
    let beta = cfg.beta();
    let init_sd = (1.0 / (cfg.lambda * beta)).sqrt();
    let last = cfg.n - 1;
    let n = cfg.n as f64;
    let kl_scale = cfg.gamma * cfg.gamma / (cfg.sigma * cfg.sigma * n * n);
    let smooth = cfg.classes == 2;

    let mut gaps: Vec<Moments> = vec![Moments::default(); probes.len()];
    let mut loss_a = vec![0.0; probes.len()];
    let mut loss_b = vec![0.0; probes.len()];
    let mut kl = Moments::default();
    let mut ws = GradientWorkspace::new(&spec);
    let (mut ga, mut gb) = (vec![0.0; spec.num_params()], vec![0.0; spec.num_params()]);

    for s in 0..cfg.num_seeds as u64 {
        let run_seed = cfg.seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(s);
        let mut init_rng = ChaCha8Rng::seed_from_u64(run_seed);
        init_rng.set_stream(2);
        let init = ParamVector(
            (0..spec.num_params())
                .map(|_| init_sd * init_rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        let (mut wa, mut wb) = (init.clone(), init);
        let mut rngs_a = StepRngs::from_seed(run_seed);
        let mut rngs_b = StepRngs::from_seed(run_seed);
        let mut path_kl = 0.0;
        for t in 0..cfg.steps.saturating_sub(smooth as usize) {
            obj_a.example_gradient(wa.as_slice(), last, &mut ga);
            obj_b.example_gradient(wa.as_slice(), last, &mut gb);
            path_kl += kl_scale
                * ga.iter()
                    .zip(&gb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
            let ctx = StepContext {
                schedule: &schedule,
                noise: NoiseKind::Gaussian,
                clip: ClipSpec::disabled(),
                t,
            };
            step_gld(&mut wa, &mut obj_a, &ctx, &mut rngs_a);
            step_gld(&mut wb, &mut obj_b, &ctx, &mut rngs_b);
        }
        if smooth && cfg.steps > 0 {
            // last step without its noise; the probe loss integrates it out
            obj_a.example_gradient(wa.as_slice(), last, &mut ga);
            obj_b.example_gradient(wa.as_slice(), last, &mut gb);
            path_kl += kl_scale
                * ga.iter()
                    .zip(&gb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
            for (w, obj) in [(&mut wa, &mut obj_a), (&mut wb, &mut obj_b)] {
                let pass = mean_gradient(obj, w.as_slice(), None, &ClipSpec::disabled());
                w.as_mut_slice()
                    .iter_mut()
                    .zip(&pass.mean)
                    .for_each(|(x, g)| *x -= cfg.gamma * g);
            }
        }
        if !wa.is_finite() || !wb.is_finite() {
            return Err(HarnessError::Diverged {
                step: cfg.steps,
                records: Box::default(),
            });
        }
        kl.push(path_kl);
        for (i, ex) in probes.examples.iter().enumerate() {
            let (la, lb) = if smooth {
                let scale =
                    cfg.sigma * (1.0 + ex.features.iter().map(|x| x * x).sum::<f64>()).sqrt();
                (
                    smoothed_error(ws.logits(wa.as_slice(), &ex.features)?, ex.label, scale),
                    smoothed_error(ws.logits(wb.as_slice(), &ex.features)?, ex.label, scale),
                )
            } else {
                (
                    zero_one_loss(ws.logits(wa.as_slice(), &ex.features)?, ex.label),
                    zero_one_loss(ws.logits(wb.as_slice(), &ex.features)?, ex.label),
                )
            };
            loss_a[i] += la;
            loss_b[i] += lb;
            gaps[i].push(la - lb);
        }
    }

    let seeds = cfg.num_seeds as f64;
    let probe_gaps: Vec<ProbeGap> = gaps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let e = m.finish();
            ProbeGap {
                loss_a: loss_a[i] / seeds,
                loss_b: loss_b[i] / seeds,
                gap: e.estimate.abs(),
                stderr: e.std_error,
            }
        })
        .collect();
    let (argmax_probe, worst) = probe_gaps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.gap.total_cmp(&b.1.gap))
        .expect("at least one probe");
    let lipschitz = lipschitz_constant(cfg.c, &[&data_a, &data_b]);
    let cld = CldParams::continuous(beta, cfg.lambda, cfg.c, lipschitz, cfg.horizon(), cfg.n);
    let gibbs = cld_bound_gibbs(&cld);
    let kl = kl.finish();
    Ok(TwinReport {
        max_gap: worst.gap,
        argmax_probe,
        mc_error: worst.stderr,
        beta,
        lipschitz,
        kl: kl.estimate,
        kl_stderr: kl.std_error,
        kl_pinsker_bound: (kl.estimate / 2.0).sqrt(),
        cld_bound: cld_bound_finite_t(&cld),
        gibbs_bound: gibbs.value,
        gibbs_precondition: gibbs.precondition,
        num_seeds: cfg.num_seeds,
        sufficient_samples: cfg.num_seeds >= 2,
        probes: probe_gaps,
    })
}

/// Writes the per-probe table to `path`.
pub fn write_probe_table(path: &std::path::Path, report: &TwinReport) -> Result<(), HarnessError> {
    let rows = report.probes.iter().enumerate().map(|(i, p)| {
        let mut row = CsvRow::default();
        row.int(i);
        row.float(p.loss_a);
        row.float(p.loss_b);
        row.float(p.gap);
        row.float(p.stderr);
        row
    });
    write_atomic(path, PROBE_HEADER, rows)
}
