//! Closed-form bound evaluation over parameter sweeps, printed as CSV.

use std::collections::BTreeMap;

use super::config::KvConfig;
use super::csv::{render, CsvRow};
use super::HarnessError;
use crate::bounds::{
    capped, cld_asymptote, cld_bound_finite_t, cld_bound_gibbs, cld_sqrt_t_envelope,
    gibbs_crossover, gld_l2_bound, log_lipschitz_kl_constant, CldParams, ConstantMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalcKind {
    CldFiniteT,
    Gibbs,
    GibbsCrossover,
    GldL2,
    Sgld,
    LogLipschitz,
}

impl CalcKind {
    pub const ALL: &'static [(&'static str, CalcKind)] = &[
        ("cld-finite-t", CalcKind::CldFiniteT),
        ("gibbs", CalcKind::Gibbs),
        ("gibbs-crossover", CalcKind::GibbsCrossover),
        ("gld-l2", CalcKind::GldL2),
        ("sgld", CalcKind::Sgld),
        ("log-lipschitz", CalcKind::LogLipschitz),
    ];

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        Self::ALL
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(s))
            .map(|(_, k)| *k)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|(n, _)| *n).collect();
                HarnessError::Usage(format!(
                    "unknown bound `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Self::CldFiniteT => &["bound", "asymptote", "sqrt_t_envelope"],
            Self::Gibbs => &["bound", "precondition"],
            Self::GibbsCrossover => &["crossover_t"],
            Self::GldL2 => &[
                "bound",
                "discretization",
                "continuous",
                "dissipativity",
                "step_size",
            ],
            Self::Sgld => &["bound", "capped"],
            Self::LogLipschitz => &["constant", "shift_condition"],
        }
    }
}

/// Numeric parameters and their defaults.
const PARAMS: &[(&str, f64)] = &[
    ("beta", 1.0),
    ("lambda", 1.0),
    ("c", 1.0),
    ("l", 1.0),
    ("t", 1.0),
    ("n", 1000.0),
    ("eta", 0.01),
    ("k", 100.0),
    ("c1", 1.0),
    ("m", 0.0),
    ("b", 100.0),
    ("sum", 1.0),
    ("noise_l", 1.0),
    ("shift", 1.0),
];

const INTEGER_PARAMS: &[&str] = &["n", "k", "b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

impl Sweep {
    /// `points` values from `from` to `to`, linearly or geometrically spaced.
    pub fn new(
        key: &str,
        from: f64,
        to: f64,
        points: usize,
        log: bool,
    ) -> Result<Self, HarnessError> {
        if points == 0 {
            return Err(HarnessError::Usage("sweep.points must be >= 1".into()));
        }
        if log && !(from > 0.0 && to > 0.0) {
            return Err(HarnessError::Usage(
                "logarithmic sweeps need positive endpoints".into(),
            ));
        }
        let values = (0..points)
            .map(|i| {
                let f = if points == 1 {
                    0.0
                } else {
                    i as f64 / (points - 1) as f64
                };
                if log {
                    (from.ln() + f * (to.ln() - from.ln())).exp()
                } else {
                    from + f * (to - from)
                }
            })
            .collect();
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }
}

fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = PARAMS.iter().map(|(k, _)| *k).collect();
    keys.extend([
        "mode",
        "sweep.key",
        "sweep.from",
        "sweep.to",
        "sweep.points",
        "sweep.log",
    ]);
    keys
}

fn mode_from(s: &str) -> Result<ConstantMode, HarnessError> {
    match s {
        "strict" => Ok(ConstantMode::Strict812),
        "relaxed" => Ok(ConstantMode::Relaxed844),
        "gld" => Ok(ConstantMode::Gld2Sqrt2),
        other => Err(HarnessError::Usage(format!(
            "mode must be strict, relaxed or gld, got `{other}`"
        ))),
    }
}

fn evaluate(kind: CalcKind, p: &BTreeMap<&str, f64>, mode: ConstantMode) -> Vec<String> {
    let v = |k: &str| p[k];
    let cld = CldParams {
        beta: v("beta"),
        lambda: v("lambda"),
        c: v("c"),
        l: v("l"),
        t: v("t"),
        n: v("n") as usize,
        eta: v("eta"),
        k: v("k") as usize,
        c1: v("c1"),
        m: v("m"),
    };
    let f = super::csv::fmt_float;
    match kind {
        CalcKind::CldFiniteT => vec![
            f(cld_bound_finite_t(&cld)),
            f(cld_asymptote(&cld)),
            f(cld_sqrt_t_envelope(&cld)),
        ],
        CalcKind::Gibbs => {
            let g = cld_bound_gibbs(&cld);
            vec![f(g.value), g.precondition.to_string()]
        }
        CalcKind::GibbsCrossover => vec![gibbs_crossover(&cld, v("t")).map(f).unwrap_or_default()],
        CalcKind::GldL2 => {
            let g = gld_l2_bound(&cld);
            vec![
                f(g.value),
                f(g.discretization),
                f(g.continuous),
                g.dissipativity.to_string(),
                g.step_size.to_string(),
            ]
        }
        CalcKind::Sgld => {
            let bound = mode.value() * v("c") / v("n") * v("sum").max(0.0).sqrt();
            vec![f(bound), f(capped(bound))]
        }
        CalcKind::LogLipschitz => {
            let r = log_lipschitz_kl_constant(
                v("noise_l"),
                v("b") as usize,
                v("n") as usize,
                v("shift"),
            );
            vec![f(r.value), r.shift_condition.to_string()]
        }
    }
}

/// Evaluates `kind` at the parameters in `kv`, once per sweep value, and
/// returns the CSV table.
pub fn bound_calc(kind: CalcKind, kv: &KvConfig) -> Result<String, HarnessError> {
    kv.check_known(&known_keys())?;
    let mut params = BTreeMap::new();
    for (k, d) in PARAMS {
        let value: f64 = kv.get(k, *d)?;
        if !value.is_finite() || value < 0.0 {
            return Err(HarnessError::Usage(format!(
                "`{k}` must be finite and >= 0, got {value}"
            )));
        }
        params.insert(*k, value);
    }
    let mode = mode_from(kv.raw("mode").unwrap_or("strict"))?;
    let key: String = kv.get("sweep.key", "t".to_string())?;
    if !PARAMS.iter().any(|(k, _)| *k == key) {
        return Err(HarnessError::Usage(format!(
            "cannot sweep unknown parameter `{key}`"
        )));
    }
    let sweep = match kv.get_opt::<usize>("sweep.points")? {
        None => Sweep {
            key: key.clone(),
            values: vec![params[key.as_str()]],
        },
        Some(points) => Sweep::new(
            &key,
            kv.get("sweep.from", params[key.as_str()])?,
            kv.get("sweep.to", params[key.as_str()])?,
            points,
            kv.get("sweep.log", false)?,
        )?,
    };
    let mut header = vec![sweep.key.as_str()];
    header.extend(kind.columns());
    let integer = INTEGER_PARAMS.contains(&sweep.key.as_str());
    let rows = sweep.values.iter().map(|&x| {
        let x = if integer { x.round() } else { x };
        let mut p = params.clone();
        *p.get_mut(sweep.key.as_str()).expect("validated key") = x;
        let mut row = CsvRow::default();
        row.float(x);
        row.0.extend(evaluate(kind, &p, mode));
        row
    });
    Ok(render(&header, rows))
}
