//! Training runs with online bound tracking, written as one CSV row per step.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BoundModeChoice, DataSource, OptimizerChoice, RunConfig};
use super::csv::{write_atomic, CsvRow};
use super::HarnessError;
use crate::bounds::{
    capped, entropy_sgd_bound, gld_bound, population_bound, sgld_bound, BoundAccumulator,
    BoundParams, ConstantMode, GradNormEstimate,
};
use crate::data::{
    corrupt_labels, load_idx, subsample, synthetic_gaussian_blobs, CorruptionSpec, Dataset,
};
use crate::nn::{ModelSpec, ParamVector};
use crate::optim::{
    check_step_condition, sample_batch, squared_norm_estimate, MlpObjective, OptimizerState,
    StepContext, StepRngs, RELAXED_BOUND_CONSTANT, STRICT_BOUND_CONSTANT,
};

/// Offset applied to the corruption seed for the held-out pool, so the two
/// label draws are independent.
const HELD_OUT_CORRUPTION_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

pub const STEP_HEADER: &[&str] = &[
    "step",
    "gamma",
    "sigma",
    "train_acc",
    "test_acc",
    "gen_err_01",
    "avg_train_acc",
    "avg_test_acc",
    "g_e",
    "g_e_ma",
    "g_pop",
    "running_sum",
    "bound_gld",
    "bound_sgld",
    "bound_sgld_capped",
    "bound_pop",
    "bound_constant",
    "condition",
    "batch_ok",
    "l_estimate",
];

/// One row of the training log. Accuracy columns are filled only on
/// evaluation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub avg_train_acc: Option<f64>,
    pub avg_test_acc: Option<f64>,
    pub g_e: f64,
    pub g_e_ma: f64,
    pub g_pop: Option<f64>,
    pub running_sum: f64,
    pub bound_gld: Option<f64>,
    pub bound_sgld: f64,
    pub bound_pop: Option<f64>,
    pub bound_constant: f64,
    /// `strict`, `relaxed` or `violated` for this step's step-size condition.
    pub condition: &'static str,
    pub batch_ok: bool,
    pub l_estimate: f64,
}

impl StepRecord {
    pub fn gen_err_01(&self) -> Option<f64> {
        Some(self.train_acc? - self.test_acc?)
    }

    pub fn to_row(&self) -> CsvRow {
        let mut r = CsvRow::default();
        r.int(self.step);
        r.float(self.gamma);
        r.float(self.sigma);
        r.opt(self.train_acc);
        r.opt(self.test_acc);
        r.opt(self.gen_err_01());
        r.opt(self.avg_train_acc);
        r.opt(self.avg_test_acc);
        r.float(self.g_e);
        r.float(self.g_e_ma);
        r.opt(self.g_pop);
        r.float(self.running_sum);
        r.opt(self.bound_gld);
        r.float(self.bound_sgld);
        r.float(capped(self.bound_sgld));
        r.opt(self.bound_pop);
        r.float(self.bound_constant);
        r.text(self.condition);
        r.int(self.batch_ok as usize);
        r.float(self.l_estimate);
        r
    }
}

/// Training set, held-out pool and the clean labels of the held-out pool.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    /// Held-out examples with labels corrupted at the run's portion.
    pub held_out: Dataset,
    /// The same held-out examples with their original labels.
    pub held_out_clean: Dataset,
    pub num_classes: usize,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData, HarnessError> {
    let (train, test) = match &cfg.data {
        DataSource::Synthetic {
            classes,
            dim,
            separation,
        } => {
            let all = synthetic_gaussian_blobs(
                *classes,
                *dim,
                cfg.n + cfg.test_n,
                *separation,
                cfg.data_seed,
            )?;
            let mut examples = all.examples;
            let test_examples = examples.split_off(cfg.n);
            (
                Dataset::new("blobs-train", examples, *classes)?,
                Dataset::new("blobs-test", test_examples, *classes)?,
            )
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let train = subsample(&train, cfg.n, cfg.data_seed)?;
            let m = cfg.test_n.min(test.len());
            let test = subsample(&test, m, cfg.data_seed.wrapping_add(1))?;
            (train, test)
        }
    };
    let num_classes = train.num_classes.max(test.num_classes);
    let train = corrupt_labels(
        &train,
        &CorruptionSpec::new(cfg.corruption, cfg.corruption_seed)?,
    );
    let held_out = corrupt_labels(
        &test,
        &CorruptionSpec::new(
            cfg.corruption,
            cfg.corruption_seed.wrapping_add(HELD_OUT_CORRUPTION_OFFSET),
        )?,
    );
    Ok(PreparedData {
        train,
        held_out,
        held_out_clean: test,
        num_classes,
    })
}

/// Accuracies of one parameter vector on the fixed evaluation subsets.
///
/// Test error is the expected 0/1 error under the corrupted label
/// distribution: a label is resampled uniformly with probability `p`, in
/// which case a prediction is wrong with probability `(k-1)/k`.
fn evaluate(
    obj: &mut MlpObjective<'_>,
    params: &[f64],
    train_eval: &Dataset,
    test_eval: &Dataset,
    p: f64,
    k: usize,
) -> (f64, f64) {
    let train_err = obj.zero_one_error(params, train_eval);
    let clean_err = obj.zero_one_error(params, test_eval);
    let test_err = (1.0 - p) * clean_err + p * (k - 1) as f64 / k as f64;
    (1.0 - train_err, 1.0 - test_err)
}

/// Result of a run: the log, and whether it ended early.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub final_params: ParamVector,
    pub stopped_early: bool,
}

/// Trains per `cfg` and returns the per-step log. On divergence the log up
/// to and including the offending step is returned inside the error.
pub fn train(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let mut widths = vec![data.train.feature_dim()];
    widths.extend(&cfg.hidden);
    widths.push(data.num_classes);
    let spec = ModelSpec::new(widths)?;
    let n = data.train.len();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let init = spec.init_params(&mut init_rng);
    let mut state = match &cfg.optimizer {
        OptimizerChoice::Gld => OptimizerState::Gld { params: init },
        OptimizerChoice::Sgld { batch } => OptimizerState::Sgld {
            params: init,
            batch_size: *batch,
        },
        OptimizerChoice::Momentum { batch, coefficient } => {
            OptimizerState::momentum(init, *coefficient, *batch)
        }
        OptimizerChoice::Nag { batch, coefficient } => {
            OptimizerState::nag(init, *coefficient, *batch)
        }
        OptimizerChoice::EntropySgd(c) => OptimizerState::EntropySgd {
            params: init,
            config: *c,
        },
    };
    state
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    let entropy = match &cfg.optimizer {
        OptimizerChoice::EntropySgd(c) => Some(*c),
        _ => None,
    };

    let mut rngs = StepRngs::from_seed(cfg.noise_seed);
    let mut est_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    est_rng.set_stream(2);
    let mut pop_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    pop_rng.set_stream(3);

    let mut obj = MlpObjective::new(&spec, &data.train);
    let mut pop_obj = MlpObjective::new(&spec, &data.held_out);
    let mut eval_obj = MlpObjective::new(&spec, &data.train);
    let train_eval = data.train.head(cfg.eval_size);
    let test_eval = data.held_out_clean.head(cfg.eval_size);
    let m_train = cfg.estimation_batch.min(n);
    let m_pop = cfg.estimation_batch.min(data.held_out.len());

    let batch = state.batch_size().unwrap_or(n);
    let bp = BoundParams::new(cfg.bound_c, n, batch, 0.0, ConstantMode::Strict812)?;
    let mut acc = BoundAccumulator::default();
    let mut acc_pop = BoundAccumulator::default();
    let mut l_estimate: f64 = if cfg.clip.enabled {
        cfg.clip.max_norm
    } else {
        0.0
    };
    let mut needed_relaxed = false;
    let mut average = vec![0.0; spec.num_params()];
    let mut records = Vec::with_capacity(cfg.steps);
    let mut stopped_early = false;

    for t in 1..=cfg.steps {
        let ctx = StepContext {
            schedule: &cfg.schedule,
            noise: cfg.noise,
            clip: cfg.clip,
            t,
        };
        let stats = state
            .step(&mut obj, &ctx, &mut rngs)
            .map_err(|e| HarnessError::Usage(e.to_string()))?;
        let params = state.params().as_slice();
        let estimates = match entropy {
            Some(_) => None,
            None => {
                let idx = sample_batch(&mut est_rng, n, m_train)?;
                let (g_e, max_norm) = squared_norm_estimate(&mut obj, params, &idx, &cfg.clip);
                let idx = sample_batch(&mut pop_rng, data.held_out.len(), m_pop)?;
                let (g_pop, _) = squared_norm_estimate(&mut pop_obj, params, &idx, &cfg.clip);
                Some((g_e, max_norm, g_pop))
            }
        };
        let finite = state.params().is_finite()
            && stats.batch_sq_norms.iter().all(|v| v.is_finite())
            && estimates.is_none_or(|(a, b, c)| a.is_finite() && b.is_finite() && c.is_finite());
        if !finite {
            records.push(diverged_record(t, cfg, &acc, l_estimate));
            return Err(HarnessError::Diverged {
                step: t,
                records: Box::new(records),
            });
        }

        let (g_e, g_pop) = match estimates {
            None => {
                for &v in &stats.batch_sq_norms {
                    acc.record_unit(&GradNormEstimate {
                        t,
                        value: v,
                        batch_size: batch,
                    })?;
                }
                let mean =
                    stats.batch_sq_norms.iter().sum::<f64>() / stats.batch_sq_norms.len() as f64;
                (mean, None)
            }
            Some((g_e, max_norm, g_pop)) => {
                if !cfg.clip.enabled {
                    l_estimate = l_estimate.max(max_norm).max(stats.max_norm);
                }
                acc.record(
                    &GradNormEstimate {
                        t,
                        value: g_e,
                        batch_size: m_train,
                    },
                    &cfg.schedule,
                )?;
                acc_pop.record(
                    &GradNormEstimate {
                        t,
                        value: g_pop,
                        batch_size: m_pop,
                    },
                    &cfg.schedule,
                )?;
                (g_e, Some(g_pop))
            }
        };

        let cond = check_step_condition(&cfg.schedule, l_estimate.max(f64::MIN_POSITIVE), t);
        let level = if cond.strict {
            0
        } else if cond.relaxed {
            1
        } else {
            2
        };
        // Once a step needs the relaxed constant, the whole sum does. A step
        // satisfying neither condition is an override and keeps whatever
        // constant is already in force.
        needed_relaxed |= level == 1;
        let constant = match cfg.bound_mode {
            BoundModeChoice::Strict => STRICT_BOUND_CONSTANT,
            BoundModeChoice::Relaxed => RELAXED_BOUND_CONSTANT,
            BoundModeChoice::Auto if needed_relaxed => RELAXED_BOUND_CONSTANT,
            BoundModeChoice::Auto => STRICT_BOUND_CONSTANT,
        };
        let mode = if constant == RELAXED_BOUND_CONSTANT {
            ConstantMode::Relaxed844
        } else {
            ConstantMode::Strict812
        };
        let p_mode = BoundParams { mode, ..bp };

        let (bound_gld, bound_sgld, bound_pop) = match entropy {
            Some(c) => (
                None,
                entropy_sgd_bound(&acc, &p_mode, c.inner_step, c.thermal_noise),
                None,
            ),
            None => (
                Some(gld_bound(&acc, &p_mode)),
                sgld_bound(&acc, &p_mode),
                Some(population_bound(&acc_pop, &p_mode)),
            ),
        };

        let mut record = StepRecord {
            step: t,
            gamma: cfg.schedule.gamma(t),
            sigma: cfg.schedule.sigma(t),
            train_acc: None,
            test_acc: None,
            avg_train_acc: None,
            avg_test_acc: None,
            g_e,
            g_e_ma: acc.moving_average(),
            g_pop,
            running_sum: acc.running_sum(),
            bound_gld,
            bound_sgld,
            bound_pop,
            bound_constant: constant,
            condition: ["strict", "relaxed", "violated"][level as usize],
            batch_ok: bp.batch_condition(),
            l_estimate,
        };

        if cfg.trajectory_average {
            let w = 1.0 / t as f64;
            average
                .iter_mut()
                .zip(state.params().as_slice())
                .for_each(|(a, x)| *a += w * (x - *a));
        }

        if t % cfg.eval_interval == 0 || t == cfg.steps {
            let (tr, te) = evaluate(
                &mut eval_obj,
                state.params().as_slice(),
                &train_eval,
                &test_eval,
                cfg.corruption,
                data.num_classes,
            );
            record.train_acc = Some(tr);
            record.test_acc = Some(te);
            if cfg.trajectory_average {
                let (tr, te) = evaluate(
                    &mut eval_obj,
                    &average,
                    &train_eval,
                    &test_eval,
                    cfg.corruption,
                    data.num_classes,
                );
                record.avg_train_acc = Some(tr);
                record.avg_test_acc = Some(te);
            }
            if cfg.stop_train_accuracy.is_some_and(|target| tr >= target) {
                records.push(record);
                stopped_early = true;
                break;
            }
        }
        records.push(record);
    }
    Ok(RunOutput {
        records,
        final_params: state.params().clone(),
        stopped_early,
    })
}

/// Row for the step at which the parameters stopped being finite.
fn diverged_record(
    t: usize,
    cfg: &RunConfig,
    acc: &BoundAccumulator,
    l_estimate: f64,
) -> StepRecord {
    StepRecord {
        step: t,
        gamma: cfg.schedule.gamma(t),
        sigma: cfg.schedule.sigma(t),
        train_acc: None,
        test_acc: None,
        avg_train_acc: None,
        avg_test_acc: None,
        g_e: f64::NAN,
        g_e_ma: acc.moving_average(),
        g_pop: None,
        running_sum: acc.running_sum(),
        bound_gld: None,
        bound_sgld: f64::NAN,
        bound_pop: None,
        bound_constant: f64::NAN,
        condition: "diverged",
        batch_ok: false,
        l_estimate,
    }
}

pub fn write_records(path: &Path, records: &[StepRecord]) -> Result<(), HarnessError> {
    write_atomic(path, STEP_HEADER, records.iter().map(StepRecord::to_row))
}

/// Runs `cfg` and writes its CSV log to `cfg.output`, if set. A diverged
/// run still writes the rows up to the failing step before reporting.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    match train(cfg) {
        Ok(out) => {
            if let Some(path) = &cfg.output {
                write_records(path, &out.records)?;
            }
            Ok(out)
        }
        Err(HarnessError::Diverged { step, records }) => {
            if let Some(path) = &cfg.output {
                write_records(path, &records)?;
            }
            Err(HarnessError::Diverged { step, records })
        }
        Err(e) => Err(e),
    }
}
