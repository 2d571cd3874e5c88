//! Noisy first-order optimizers: GLD, mini-batch SGLD, noisy momentum,
//! noisy Nesterov (NAG) and Entropy-SGD.
//!
//! Randomness comes from two independent ChaCha streams derived from one
//! seed: one for mini-batch indices, one for noise. Within a step the batch
//! is drawn first, then the noise, one draw per coordinate in parameter
//! order. Keeping the streams separate means that, for instance, SGLD with
//! `b = n` consumes exactly the same noise as GLD.

mod clip;
mod noise;
mod objective;
mod schedule;

pub use clip::{clip_per_example, ClipSpec};
pub use noise::NoiseKind;
pub use objective::{LossKind, MlpObjective, Objective, QuadraticObjective};
pub use schedule::{Schedule, DEFAULT_SIGMA_COUPLING};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::ParamVector;

/// Constant of the SGLD bound when `gamma_t <= sigma_t / (20 L)`.
pub const STRICT_BOUND_CONSTANT: f64 = 8.12;
/// Constant of the SGLD bound when only `gamma_t <= sigma_t / (2 L)` holds.
pub const RELAXED_BOUND_CONSTANT: f64 = 84.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("batch size {batch} exceeds dataset size {n}")]
    BatchTooLarge { batch: usize, n: usize },
}

/// Independent batch and noise streams.
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub batch: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl StepRngs {
    pub fn from_seed(seed: u64) -> Self {
        let noise = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = ChaCha8Rng::seed_from_u64(seed);
        batch.set_stream(1);
        Self { batch, noise }
    }
}

/// Everything a step needs besides the state and the objective.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub schedule: &'a Schedule,
    pub noise: NoiseKind,
    pub clip: ClipSpec,
    /// 1-based step index used to read the schedule.
    pub t: usize,
}

/// Gradient statistics gathered while stepping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    /// Indices of every mini-batch used, in evaluation order (empty entry
    /// for a full-data gradient).
    pub batches: Vec<Vec<usize>>,
    /// Mean squared per-example gradient norm (after clipping) over the
    /// update batch of each gradient evaluation.
    pub batch_sq_norms: Vec<f64>,
    /// Largest per-example gradient norm seen during the step (after clipping).
    pub max_norm: f64,
}

/// Mean of per-example gradients, with per-example clipping applied.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPass {
    pub mean: Vec<f64>,
    pub sq_norm_mean: f64,
    pub max_norm: f64,
}

/// Averages clipped per-example gradients over `indices` (all examples when
/// `None`), summing in the given order.
pub fn mean_gradient<O: Objective + ?Sized>(
    obj: &mut O,
    params: &[f64],
    indices: Option<&[usize]>,
    clip: &ClipSpec,
) -> GradientPass {
    let d = obj.dim();
    let n = obj.num_examples();
    let mut buf = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut sq = 0.0;
    let mut max_norm: f64 = 0.0;
    let all: Vec<usize>;
    let idx = match indices {
        Some(idx) => idx,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    for &i in idx {
        obj.example_gradient(params, i, &mut buf);
        let norm = clip.apply(&mut buf);
        sq += norm * norm;
        max_norm = max_norm.max(norm);
        mean.iter_mut().zip(&buf).for_each(|(m, g)| *m += g);
    }
    let count = idx.len();
    let inv = 1.0 / count as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    GradientPass {
        mean,
        sq_norm_mean: sq * inv,
        max_norm,
    }
}

/// Mean squared (clipped) per-example gradient norm and the max norm over `indices`.
pub fn squared_norm_estimate<O: Objective + ?Sized>(
    obj: &mut O,
    params: &[f64],
    indices: &[usize],
    clip: &ClipSpec,
) -> (f64, f64) {
    let mut buf = vec![0.0; obj.dim()];
    let mut sq = 0.0;
    let mut max_norm: f64 = 0.0;
    for &i in indices {
        obj.example_gradient(params, i, &mut buf);
        let norm = clip.apply(&mut buf);
        sq += norm * norm;
        max_norm = max_norm.max(norm);
    }
    (sq / indices.len() as f64, max_norm)
}

/// `size` distinct indices from `0..n`, uniformly, sorted ascending.
pub fn sample_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Result<Vec<usize>, OptimError> {
    if size > n {
        return Err(OptimError::BatchTooLarge { batch: size, n });
    }
    if size == 0 {
        return Err(OptimError::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut idx = index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn apply_update(params: &mut [f64], direction: &[f64], rate: f64) {
    params
        .iter_mut()
        .zip(direction)
        .for_each(|(w, g)| *w -= rate * g);
}

/// One GLD step: `W_t = W_{t-1} - gamma_t grad F(W_{t-1}, S) + noise`.
pub fn step_gld<O: Objective + ?Sized>(
    params: &mut ParamVector,
    obj: &mut O,
    ctx: &StepContext<'_>,
    rngs: &mut StepRngs,
) -> StepStats {
    let pass = mean_gradient(obj, params.as_slice(), None, &ctx.clip);
    apply_update(params.as_mut_slice(), &pass.mean, ctx.schedule.gamma(ctx.t));
    ctx.noise.add_noise(
        ctx.schedule.sigma(ctx.t),
        &mut rngs.noise,
        params.as_mut_slice(),
    );
    StepStats {
        batches: vec![Vec::new()],
        batch_sq_norms: vec![pass.sq_norm_mean],
        max_norm: pass.max_norm,
    }
}

/// One SGLD step on a uniformly drawn mini-batch of size `batch_size`.
pub fn step_sgld<O: Objective + ?Sized>(
    params: &mut ParamVector,
    batch_size: usize,
    obj: &mut O,
    ctx: &StepContext<'_>,
    rngs: &mut StepRngs,
) -> Result<StepStats, OptimError> {
    let batch = sample_batch(&mut rngs.batch, obj.num_examples(), batch_size)?;
    let pass = mean_gradient(obj, params.as_slice(), Some(&batch), &ctx.clip);
    apply_update(params.as_mut_slice(), &pass.mean, ctx.schedule.gamma(ctx.t));
    ctx.noise.add_noise(
        ctx.schedule.sigma(ctx.t),
        &mut rngs.noise,
        params.as_mut_slice(),
    );
    Ok(StepStats {
        batches: vec![batch],
        batch_sq_norms: vec![pass.sq_norm_mean],
        max_norm: pass.max_norm,
    })
}

fn momentum_like<O: Objective + ?Sized>(
    params: &mut ParamVector,
    velocity: &mut [f64],
    coefficient: f64,
    batch_size: usize,
    lookahead: bool,
    obj: &mut O,
    ctx: &StepContext<'_>,
    rngs: &mut StepRngs,
) -> Result<StepStats, OptimError> {
    let batch = sample_batch(&mut rngs.batch, obj.num_examples(), batch_size)?;
    let pass = if lookahead {
        let point: Vec<f64> = params
            .as_slice()
            .iter()
            .zip(velocity.iter())
            .map(|(w, v)| w + coefficient * v)
            .collect();
        mean_gradient(obj, &point, Some(&batch), &ctx.clip)
    } else {
        mean_gradient(obj, params.as_slice(), Some(&batch), &ctx.clip)
    };
    let gamma = ctx.schedule.gamma(ctx.t);
    for (v, g) in velocity.iter_mut().zip(&pass.mean) {
        *v = coefficient * *v - gamma * g;
    }
    ctx.noise
        .add_noise(ctx.schedule.sigma(ctx.t), &mut rngs.noise, velocity);
    params
        .as_mut_slice()
        .iter_mut()
        .zip(velocity.iter())
        .for_each(|(w, v)| *w += v);
    Ok(StepStats {
        batches: vec![batch],
        batch_sq_norms: vec![pass.sq_norm_mean],
        max_norm: pass.max_norm,
    })
}

/// Noisy momentum: `V_t = eta V_{t-1} - gamma_t grad F(W_{t-1}, S_B) + zeta_t`,
/// `W_t = W_{t-1} + V_t`.
pub fn step_momentum<O: Objective + ?Sized>(
    params: &mut ParamVector,
    velocity: &mut [f64],
    coefficient: f64,
    batch_size: usize,
    obj: &mut O,
    ctx: &StepContext<'_>,
    rngs: &mut StepRngs,
) -> Result<StepStats, OptimError> {
    momentum_like(
        params,
        velocity,
        coefficient,
        batch_size,
        false,
        obj,
        ctx,
        rngs,
    )
}

/// Noisy NAG: as momentum, with the gradient taken at `W_{t-1} + eta V_{t-1}`.
pub fn step_nag<O: Objective + ?Sized>(
    params: &mut ParamVector,
    velocity: &mut [f64],
    coefficient: f64,
    batch_size: usize,
    obj: &mut O,
    ctx: &StepContext<'_>,
    rngs: &mut StepRngs,
) -> Result<StepStats, OptimError> {
    momentum_like(
        params,
        velocity,
        coefficient,
        batch_size,
        true,
        obj,
        ctx,
        rngs,
    )
}

/// Hyperparameters of Entropy-SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySgdConfig {
    /// Scope `gamma` of the local-entropy coupling.
    pub scope: f64,
    /// Inner SGLD step `eta'`.
    pub inner_step: f64,
    /// Number of inner iterations `K`.
    pub inner_steps: usize,
    /// Exponential averaging weight `alpha`.
    pub averaging: f64,
    /// Thermal noise `epsilon`; inner noise is `sqrt(eta') epsilon N(0, I/2)`.
    pub thermal_noise: f64,
    /// Outer learning rate `eta`.
    pub outer_rate: f64,
    pub batch_size: usize,
}

impl EntropySgdConfig {
    pub const DEFAULT_AVERAGING: f64 = 0.75;

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(format!("entropy-sgd: {m}")));
        if self.inner_steps == 0 {
            return bad("K must be >= 1");
        }
        if !(self.averaging > 0.0 && self.averaging <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.inner_step > 0.0) || !(self.thermal_noise > 0.0) || !(self.outer_rate > 0.0) {
            return bad("eta', epsilon and eta must be positive");
        }
        if !(self.scope >= 0.0) {
            return bad("scope must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        Ok(())
    }

    /// Noise scale passed to [`NoiseKind::add_noise`] for inner steps.
    pub fn inner_sigma(&self) -> f64 {
        self.inner_step.sqrt() * self.thermal_noise
    }
}

/// One outer iteration of Entropy-SGD: `K` inner Langevin steps pulled
/// toward the anchor `W_{t-1,K+1}`, exponential averaging of the inner
/// iterates, then the outer step `W_{t,K} - eta gamma (W_{t,K} - mu_{t,K})`.
pub fn step_entropy_sgd<O: Objective + ?Sized>(
    params: &mut ParamVector,
    cfg: &EntropySgdConfig,
    obj: &mut O,
    noise: NoiseKind,
    clip: &ClipSpec,
    rngs: &mut StepRngs,
) -> Result<StepStats, OptimError> {
    cfg.validate()?;
    let anchor = params.as_slice().to_vec();
    let mut w = anchor.clone();
    let mut mu = anchor.clone();
    let mut stats = StepStats::default();
    let sigma = cfg.inner_sigma();
    for _ in 0..cfg.inner_steps {
        let batch = sample_batch(&mut rngs.batch, obj.num_examples(), cfg.batch_size)?;
        let pass = mean_gradient(obj, &w, Some(&batch), clip);
        for (m, x) in mu.iter_mut().zip(&w) {
            *m = (1.0 - cfg.averaging) * *m + cfg.averaging * x;
        }
        for ((x, g), a) in w.iter_mut().zip(&pass.mean).zip(&anchor) {
            *x = *x - cfg.inner_step * g + cfg.inner_step * cfg.scope * (a - *x);
        }
        noise.add_noise(sigma, &mut rngs.noise, &mut w);
        stats.batches.push(batch);
        stats.batch_sq_norms.push(pass.sq_norm_mean);
        stats.max_norm = stats.max_norm.max(pass.max_norm);
    }
    let pull = cfg.outer_rate * cfg.scope;
    for ((p, x), m) in params.as_mut_slice().iter_mut().zip(&w).zip(&mu) {
        *p = x - pull * (x - m);
    }
    Ok(stats)
}

/// Optimizer variant together with its persistent state.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Gld {
        params: ParamVector,
    },
    Sgld {
        params: ParamVector,
        batch_size: usize,
    },
    Momentum {
        params: ParamVector,
        velocity: Vec<f64>,
        coefficient: f64,
        batch_size: usize,
    },
    Nag {
        params: ParamVector,
        velocity: Vec<f64>,
        coefficient: f64,
        batch_size: usize,
    },
    EntropySgd {
        params: ParamVector,
        config: EntropySgdConfig,
    },
}

impl OptimizerState {
    pub fn momentum(params: ParamVector, coefficient: f64, batch_size: usize) -> Self {
        let velocity = vec![0.0; params.len()];
        Self::Momentum {
            params,
            velocity,
            coefficient,
            batch_size,
        }
    }

    pub fn nag(params: ParamVector, coefficient: f64, batch_size: usize) -> Self {
        let velocity = vec![0.0; params.len()];
        Self::Nag {
            params,
            velocity,
            coefficient,
            batch_size,
        }
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            Self::Gld { params }
            | Self::Sgld { params, .. }
            | Self::Momentum { params, .. }
            | Self::Nag { params, .. }
            | Self::EntropySgd { params, .. } => params,
        }
    }

    /// Batch size, or `None` for full-gradient GLD.
    pub fn batch_size(&self) -> Option<usize> {
        match self {
            Self::Gld { .. } => None,
            Self::Sgld { batch_size, .. }
            | Self::Momentum { batch_size, .. }
            | Self::Nag { batch_size, .. } => Some(*batch_size),
            Self::EntropySgd { config, .. } => Some(config.batch_size),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match self {
            Self::Momentum { coefficient, .. } | Self::Nag { coefficient, .. }
                if !(0.0..=1.0).contains(coefficient) =>
            {
                Err(OptimError::InvalidConfig(format!(
                    "momentum coefficient {coefficient} not in [0, 1]"
                )))
            }
            Self::EntropySgd { config, .. } => config.validate(),
            _ => Ok(()),
        }
    }

    pub fn step<O: Objective + ?Sized>(
        &mut self,
        obj: &mut O,
        ctx: &StepContext<'_>,
        rngs: &mut StepRngs,
    ) -> Result<StepStats, OptimError> {
        match self {
            Self::Gld { params } => Ok(step_gld(params, obj, ctx, rngs)),
            Self::Sgld { params, batch_size } => step_sgld(params, *batch_size, obj, ctx, rngs),
            Self::Momentum {
                params,
                velocity,
                coefficient,
                batch_size,
            } => step_momentum(params, velocity, *coefficient, *batch_size, obj, ctx, rngs),
            Self::Nag {
                params,
                velocity,
                coefficient,
                batch_size,
            } => step_nag(params, velocity, *coefficient, *batch_size, obj, ctx, rngs),
            Self::EntropySgd { params, config } => {
                step_entropy_sgd(params, config, obj, ctx.noise, &ctx.clip, rngs)
            }
        }
    }
}

/// Outcome of checking `gamma_t <= sigma_t / (k L)` for `k = 20` and `k = 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCondition {
    pub strict: bool,
    pub relaxed: bool,
    /// `sigma_t / (gamma_t L)`; the condition at `k` holds iff this is `>= k`.
    pub ratio: f64,
    /// Bound constant licensed by the condition, if any.
    pub constant: Option<f64>,
}

pub fn check_step_condition(schedule: &Schedule, l_estimate: f64, t: usize) -> StepCondition {
    let gamma = schedule.gamma(t);
    let sigma = schedule.sigma(t);
    let strict = 20.0 * l_estimate * gamma <= sigma;
    let relaxed = 2.0 * l_estimate * gamma <= sigma;
    let constant = if strict {
        Some(STRICT_BOUND_CONSTANT)
    } else if relaxed {
        Some(RELAXED_BOUND_CONSTANT)
    } else {
        None
    };
    StepCondition {
        strict,
        relaxed,
        ratio: sigma / (gamma * l_estimate),
        constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_quadratic(
        mut state: OptimizerState,
        obj: &mut QuadraticObjective,
        schedule: &Schedule,
        noise: NoiseKind,
        steps: usize,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        let mut rngs = StepRngs::from_seed(seed);
        let mut traj = Vec::new();
        for t in 1..=steps {
            let ctx = StepContext {
                schedule,
                noise,
                clip: ClipSpec::disabled(),
                t,
            };
            state.step(obj, &ctx, &mut rngs).unwrap();
            traj.push(state.params().as_slice().to_vec());
        }
        traj
    }

    #[test]
    fn gld_zero_noise_quadratic_contracts() {
        let schedule = Schedule::constant(0.1, 1.0).unwrap();
        let mut obj = QuadraticObjective::centered(3, 4);
        let w0 = vec![1.0, -2.0, 0.5];
        let traj = run_quadratic(
            OptimizerState::Gld {
                params: w0.clone().into(),
            },
            &mut obj,
            &schedule,
            NoiseKind::Off,
            5,
            0,
        );
        let mut expect = w0;
        for w in traj {
            expect.iter_mut().for_each(|v| *v *= 0.9);
            for (a, b) in w.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gld_is_deterministic() {
        let schedule = Schedule::constant(0.05, 2.0).unwrap();
        let mut obj = QuadraticObjective::new(vec![vec![1.0, 0.0], vec![0.0, 3.0]]);
        let s = || OptimizerState::Gld {
            params: vec![0.0, 0.0].into(),
        };
        let a = run_quadratic(s(), &mut obj, &schedule, NoiseKind::Gaussian, 20, 5);
        let b = run_quadratic(s(), &mut obj, &schedule, NoiseKind::Gaussian, 20, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn sgld_batch_rules() {
        let schedule = Schedule::constant(0.05, 1.0).unwrap();
        let mut obj = QuadraticObjective::new((0..4).map(|i| vec![i as f64]).collect());
        let mut rngs = StepRngs::from_seed(3);
        let ctx = StepContext {
            schedule: &schedule,
            noise: NoiseKind::Off,
            clip: ClipSpec::disabled(),
            t: 1,
        };
        let mut p: ParamVector = vec![0.0].into();
        let stats = step_sgld(&mut p, 1, &mut obj, &ctx, &mut rngs).unwrap();
        assert_eq!(stats.batches[0].len(), 1);
        // one example's gradient: w - c_i = -i
        let i = stats.batches[0][0] as f64;
        assert!((p.as_slice()[0] - 0.05 * i).abs() < 1e-15);

        let draw = |seed| {
            let mut r = StepRngs::from_seed(seed);
            let mut p: ParamVector = vec![0.0].into();
            step_sgld(&mut p, 2, &mut obj.clone(), &ctx, &mut r)
                .unwrap()
                .batches
        };
        assert_eq!(draw(11), draw(11));

        assert_eq!(
            step_sgld(&mut p, 5, &mut obj, &ctx, &mut rngs),
            Err(OptimError::BatchTooLarge { batch: 5, n: 4 })
        );
    }

    #[test]
    fn momentum_ballistic_motion() {
        let schedule = Schedule::constant(0.1, 1.0).unwrap();
        // constant objective: zero gradient everywhere
        struct Flat;
        impl Objective for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn num_examples(&self) -> usize {
                3
            }
            fn example_gradient(&mut self, _: &[f64], _: usize, g: &mut [f64]) -> f64 {
                g.fill(0.0);
                0.0
            }
        }
        let mut state = OptimizerState::Momentum {
            params: vec![1.0, 2.0].into(),
            velocity: vec![0.5, -0.25],
            coefficient: 1.0,
            batch_size: 2,
        };
        let mut rngs = StepRngs::from_seed(0);
        for t in 1..=10 {
            let ctx = StepContext {
                schedule: &schedule,
                noise: NoiseKind::Off,
                clip: ClipSpec::disabled(),
                t,
            };
            state.step(&mut Flat, &ctx, &mut rngs).unwrap();
            let w = state.params().as_slice();
            assert!((w[0] - (1.0 + 0.5 * t as f64)).abs() < 1e-12);
            assert!((w[1] - (2.0 - 0.25 * t as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_momentum_and_nag_steps_equal_sgld() {
        let schedule = Schedule::constant(0.07, 1.5).unwrap();
        let mut obj =
            QuadraticObjective::new((0..6).map(|i| vec![i as f64, -(i as f64)]).collect());
        let w0 = vec![0.3, -0.1];
        let one = |state| {
            run_quadratic(
                state,
                &mut obj.clone(),
                &schedule,
                NoiseKind::Gaussian,
                1,
                9,
            )
        };
        let sgld = one(OptimizerState::Sgld {
            params: w0.clone().into(),
            batch_size: 3,
        });
        let mom = one(OptimizerState::momentum(w0.clone().into(), 0.9, 3));
        let nag = one(OptimizerState::nag(w0.clone().into(), 0.9, 3));
        for (a, b) in sgld[0].iter().zip(&mom[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mom, nag);
        let _ = &mut obj;
    }

    #[test]
    fn nag_two_step_recursion_on_1d_quadratic() {
        // F(w) = w^2 / 2, zero noise, eta = 0.5, gamma = 0.1, w0 = 1:
        // V1 = -0.1 * 1 = -0.1,              W1 = 0.9
        // V2 = 0.5 * -0.1 - 0.1 * (0.9 - 0.05) = -0.135,  W2 = 0.765
        let schedule = Schedule::constant(0.1, 1.0).unwrap();
        let mut obj = QuadraticObjective::centered(1, 2);
        let traj = run_quadratic(
            OptimizerState::nag(vec![1.0].into(), 0.5, 1),
            &mut obj,
            &schedule,
            NoiseKind::Off,
            2,
            0,
        );
        assert!((traj[0][0] - 0.9).abs() < 1e-15);
        assert!((traj[1][0] - 0.765).abs() < 1e-15);
    }

    #[test]
    fn entropy_sgd_k1_alpha1_is_proximal_pull() {
        let cfg = EntropySgdConfig {
            scope: 0.5,
            inner_step: 0.1,
            inner_steps: 1,
            averaging: 1.0,
            thermal_noise: 0.3,
            outer_rate: 0.4,
            batch_size: 2,
        };
        let mut obj =
            QuadraticObjective::new(vec![vec![1.0, -1.0], vec![2.0, 0.0], vec![0.0, 1.0]]);
        let start = vec![0.2, 0.7];
        let mut p: ParamVector = start.clone().into();
        let mut rngs = StepRngs::from_seed(21);
        step_entropy_sgd(
            &mut p,
            &cfg,
            &mut obj,
            NoiseKind::Gaussian,
            &ClipSpec::disabled(),
            &mut rngs,
        )
        .unwrap();

        // replay the single inner step to get W_{t,1}
        let mut r = StepRngs::from_seed(21);
        let batch = sample_batch(&mut r.batch, 3, 2).unwrap();
        let pass = mean_gradient(&mut obj, &start, Some(&batch), &ClipSpec::disabled());
        let mut w1: Vec<f64> = start
            .iter()
            .zip(&pass.mean)
            .map(|(w, g)| w - 0.1 * g)
            .collect();
        NoiseKind::Gaussian.add_noise(cfg.inner_sigma(), &mut r.noise, &mut w1);
        for i in 0..2 {
            let expect = w1[i] - 0.4 * 0.5 * (w1[i] - start[i]);
            assert!((p.as_slice()[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn entropy_sgd_zero_scope_is_plain_sgld() {
        let cfg = EntropySgdConfig {
            scope: 0.0,
            inner_step: 0.05,
            inner_steps: 4,
            averaging: 0.75,
            thermal_noise: 0.2,
            outer_rate: 123.0,
            batch_size: 2,
        };
        let mut obj = QuadraticObjective::new((0..5).map(|i| vec![i as f64 * 0.5]).collect());
        let mut p: ParamVector = vec![1.0].into();
        let mut rngs = StepRngs::from_seed(8);
        step_entropy_sgd(
            &mut p,
            &cfg,
            &mut obj,
            NoiseKind::Gaussian,
            &ClipSpec::disabled(),
            &mut rngs,
        )
        .unwrap();

        // SGLD with rate eta' and sigma = sqrt(eta') epsilon on the same streams
        let schedule = Schedule::constant(0.05, cfg.inner_sigma() / 0.05).unwrap();
        let mut q: ParamVector = vec![1.0].into();
        let mut r = StepRngs::from_seed(8);
        for t in 1..=4 {
            let ctx = StepContext {
                schedule: &schedule,
                noise: NoiseKind::Gaussian,
                clip: ClipSpec::disabled(),
                t,
            };
            step_sgld(&mut q, 2, &mut obj, &ctx, &mut r).unwrap();
        }
        assert!((p.as_slice()[0] - q.as_slice()[0]).abs() < 1e-12);
    }

    /// Independent scalar transcription of the Entropy-SGD loop for
    /// `F(w, z_i) = (w - c_i)^2 / 2` with full batches and no noise.
    fn entropy_sgd_scalar_oracle(
        w0: f64,
        centers: &[f64],
        gamma: f64,
        eta_inner: f64,
        k: usize,
        alpha: f64,
        eta: f64,
        outer_steps: usize,
    ) -> f64 {
        let cbar = centers.iter().sum::<f64>() / centers.len() as f64;
        let mut outer = w0;
        for _ in 0..outer_steps {
            let mut wk = outer;
            let mut muk = outer;
            for _ in 0..k {
                let w_next = wk - eta_inner * (wk - cbar) + eta_inner * gamma * (outer - wk);
                muk = (1.0 - alpha) * muk + alpha * wk;
                wk = w_next;
            }
            outer = wk - eta * gamma * (wk - muk);
        }
        outer
    }

    #[test]
    fn entropy_sgd_matches_scalar_oracle() {
        let centers = [0.5, 1.5, -0.25, 2.0];
        let cfg = EntropySgdConfig {
            scope: 0.8,
            inner_step: 0.2,
            inner_steps: 5,
            averaging: 0.75,
            thermal_noise: 1.0,
            outer_rate: 0.6,
            batch_size: 4,
        };
        let mut obj = QuadraticObjective::new(centers.iter().map(|&c| vec![c]).collect());
        let mut p: ParamVector = vec![3.0].into();
        let mut rngs = StepRngs::from_seed(0);
        for _ in 0..7 {
            step_entropy_sgd(
                &mut p,
                &cfg,
                &mut obj,
                NoiseKind::Off,
                &ClipSpec::disabled(),
                &mut rngs,
            )
            .unwrap();
        }
        let expect = entropy_sgd_scalar_oracle(3.0, &centers, 0.8, 0.2, 5, 0.75, 0.6, 7);
        assert!((p.as_slice()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn step_condition_examples() {
        let l = 0.5;
        let gamma = 0.01;
        let strict = Schedule::constant(gamma, 20.0 * l).unwrap();
        let c = check_step_condition(&strict, l, 3);
        assert!(c.strict && c.relaxed);
        assert_eq!(c.constant, Some(8.12));

        let relaxed = Schedule::constant(gamma, 2.0 * l).unwrap();
        let c = check_step_condition(&relaxed, l, 3);
        assert!(!c.strict && c.relaxed);
        assert_eq!(c.constant, Some(84.4));

        let bad = Schedule::constant(gamma, 1.9 * l).unwrap();
        let c = check_step_condition(&bad, l, 3);
        assert!(!c.relaxed && c.constant.is_none());
    }

    #[test]
    fn invalid_momentum_coefficient() {
        assert!(OptimizerState::momentum(vec![0.0].into(), 1.5, 1)
            .validate()
            .is_err());
        assert!(OptimizerState::nag(vec![0.0].into(), 0.3, 1)
            .validate()
            .is_ok());
    }
}
