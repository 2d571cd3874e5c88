//! Finite-state checks: chain rule for Markov chains, Pinsker, and the
//! triangular-discrimination series.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::KlError;

/// `KL(p || q)` over a finite alphabet. Infinite when `p` has mass where `q` has none.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64, KlError> {
    if p.len() != q.len() {
        return Err(KlError::DimensionMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), KlError> {
    let s: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(KlError::Precondition(format!(
            "{what} is not a probability vector (sum {s})"
        )));
    }
    Ok(())
}

/// Initial law and one row-stochastic kernel per step on `S` states.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    pub init: Vec<f64>,
    /// `transitions[t][s]` is the law of `W_{t+1}` given `W_t = s`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl FiniteChain {
    pub fn new(init: Vec<f64>, transitions: Vec<Vec<Vec<f64>>>) -> Result<Self, KlError> {
        check_distribution(&init, "initial law")?;
        let s = init.len();
        for (t, k) in transitions.iter().enumerate() {
            if k.len() != s {
                return Err(KlError::DimensionMismatch(k.len(), s));
            }
            for row in k {
                if row.len() != s {
                    return Err(KlError::DimensionMismatch(row.len(), s));
                }
                check_distribution(row, &format!("kernel row at step {}", t + 1))?;
            }
        }
        Ok(Self { init, transitions })
    }

    pub fn states(&self) -> usize {
        self.init.len()
    }

    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    /// Law of `W_t`, `t = 0..=T`.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.init.clone()];
        for k in &self.transitions {
            let prev = out.last().unwrap();
            let mut next = vec![0.0; self.states()];
            for (s, &m) in prev.iter().enumerate() {
                for (j, &p) in k[s].iter().enumerate() {
                    next[j] += m * p;
                }
            }
            out.push(next);
        }
        out
    }

    /// Probability of every path `(w_0, ..., w_T)`, in lexicographic order.
    fn path_probabilities(&self) -> Vec<f64> {
        let mut probs = self.init.clone();
        let s = self.states();
        for k in &self.transitions {
            let mut next = Vec::with_capacity(probs.len() * s);
            for (idx, &p) in probs.iter().enumerate() {
                let last = idx % s;
                next.extend(k[last].iter().map(|q| p * q));
            }
            probs = next;
        }
        probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRuleReport {
    /// `KL` of the joint path laws, by enumeration.
    pub joint: f64,
    /// Initial term plus the expected per-step kernel divergences.
    pub decomposed: f64,
    pub per_step: Vec<f64>,
    pub abs_error: f64,
    pub pass: bool,
}

/// Compares `KL(P_{0:T} || Q_{0:T})` with
/// `KL(P_0 || Q_0) + sum_t E_{W_{t-1} ~ P}[KL(K_t || K'_t)]`.
pub fn chain_rule_check(
    p: &FiniteChain,
    q: &FiniteChain,
    tol: f64,
) -> Result<ChainRuleReport, KlError> {
    if p.states() != q.states() {
        return Err(KlError::DimensionMismatch(p.states(), q.states()));
    }
    if p.steps() != q.steps() {
        return Err(KlError::DimensionMismatch(p.steps(), q.steps()));
    }
    let joint = kl_discrete(&p.path_probabilities(), &q.path_probabilities())?;
    let marg = p.marginals();
    let mut per_step = Vec::with_capacity(p.steps());
    for t in 0..p.steps() {
        let mut term = 0.0;
        for s in 0..p.states() {
            if marg[t][s] > 0.0 {
                term += marg[t][s] * kl_discrete(&p.transitions[t][s], &q.transitions[t][s])?;
            }
        }
        per_step.push(term);
    }
    let decomposed = kl_discrete(&p.init, &q.init)? + per_step.iter().sum::<f64>();
    if !joint.is_finite() || !decomposed.is_finite() {
        return Err(KlError::Precondition(
            "chains have mismatched supports".into(),
        ));
    }
    let abs_error = (joint - decomposed).abs();
    Ok(ChainRuleReport {
        joint,
        decomposed,
        per_step,
        abs_error,
        pass: abs_error <= tol * joint.abs().max(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinskerReport {
    pub total_variation: f64,
    pub kl: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `TV(p, q) <= sqrt(KL(p || q) / 2)`.
pub fn pinsker_check(p: &[f64], q: &[f64]) -> Result<PinskerReport, KlError> {
    let kl = kl_discrete(p, q)?;
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let bound = (kl / 2.0).sqrt();
    Ok(PinskerReport {
        total_variation: tv,
        kl,
        bound,
        pass: tv <= bound + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtdReport {
    pub kl: f64,
    pub chi_sq: f64,
    pub terms: Vec<f64>,
    /// Sum of the first `terms.len()` terms.
    pub partial: f64,
    /// `ln2 * partial`, a lower bound on `ln2 * DTD`.
    pub ln2_partial: f64,
    /// Upper bound on the remaining terms.
    pub tail_bound: f64,
    pub pass: bool,
}

/// Checks `KL(p || q) <= ln2 * DTD(p, q)` where
/// `DTD = sum_{k >= 0} 2^k TD(2^{-k} p + (1 - 2^{-k}) q, q)` and
/// `TD(a, b) = sum (a - b)^2 / (a + b)`. Term `k` is at most `2^{-k} chi^2(p || q)`,
/// so the series truncated after `k_max` terms is short by at most `2^{1-k_max} chi^2`.
pub fn dtd_bound_check(p: &[f64], q: &[f64], k_max: usize) -> Result<DtdReport, KlError> {
    if p.len() != q.len() {
        return Err(KlError::DimensionMismatch(p.len(), q.len()));
    }
    if p.iter().zip(q).any(|(a, b)| *b <= 0.0 && *a > 0.0) {
        return Err(KlError::Precondition(
            "p is not absolutely continuous w.r.t. q".into(),
        ));
    }
    let kl = kl_discrete(p, q)?;
    let chi_sq: f64 = p
        .iter()
        .zip(q)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / b)
        .sum();
    let mut terms = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let w = 0.5f64.powi(k as i32);
        let d: f64 = p
            .iter()
            .zip(q)
            .filter(|(a, b)| **a > 0.0 || **b > 0.0)
            .map(|(a, b)| w * w * (a - b) * (a - b) / (w * a + (2.0 - w) * b))
            .sum();
        terms.push(d / w);
    }
    let partial: f64 = terms.iter().sum();
    let tail_bound = 2.0 * 0.5f64.powi(k_max as i32) * chi_sq;
    let ln2_partial = std::f64::consts::LN_2 * partial;
    Ok(DtdReport {
        kl,
        chi_sq,
        terms,
        partial,
        ln2_partial,
        tail_bound,
        pass: kl <= std::f64::consts::LN_2 * (partial + tail_bound),
    })
}

/// A strictly positive probability vector with entries at least `floor / len`.
pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + floor).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// A chain with `states` states and `steps` random kernels.
pub fn random_chain(seed: u64, states: usize, steps: usize) -> FiniteChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_distribution(&mut rng, states, 0.05);
    let transitions = (0..steps)
        .map(|_| {
            (0..states)
                .map(|_| random_distribution(&mut rng, states, 0.05))
                .collect()
        })
        .collect();
    FiniteChain { init, transitions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discrete_examples() {
        assert_eq!(kl_discrete(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let v = kl_discrete(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            kl_discrete(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert!(kl_discrete(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn chain_validation() {
        assert!(FiniteChain::new(vec![0.5, 0.6], vec![]).is_err());
        assert!(FiniteChain::new(vec![0.5, 0.5], vec![vec![vec![1.0, 0.0]]]).is_err());
        assert!(FiniteChain::new(vec![1.0], vec![vec![vec![1.0]]]).is_ok());
    }

    #[test]
    fn marginals_sum_to_one() {
        let c = random_chain(3, 4, 5);
        for m in c.marginals() {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((c.path_probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_two_state_example() {
        let p =
            FiniteChain::new(vec![1.0, 0.0], vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]]).unwrap();
        let q =
            FiniteChain::new(vec![1.0, 0.0], vec![vec![vec![0.25, 0.75], vec![0.5, 0.5]]]).unwrap();
        let r = chain_rule_check(&p, &q, 1e-12).unwrap();
        let expected = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((r.joint - expected).abs() < 1e-15);
        assert!(r.pass);
    }

    #[test]
    fn mismatched_support_is_an_error() {
        let p = FiniteChain::new(vec![0.5, 0.5], vec![]).unwrap();
        let q = FiniteChain::new(vec![1.0, 0.0], vec![]).unwrap();
        assert!(matches!(
            chain_rule_check(&p, &q, 1e-9),
            Err(KlError::Precondition(_))
        ));
    }

    #[test]
    fn dtd_series_dominates_kl() {
        let r = dtd_bound_check(&[0.9, 0.1], &[0.5, 0.5], 40).unwrap();
        assert!(r.pass);
        assert!(r.kl < r.ln2_partial, "{r:?}");
        assert!(r.tail_bound < 1e-11);
        // first term is TD(p, q) itself
        assert!((r.terms[0] - (0.16 / 1.4 + 0.16 / 0.6)).abs() < 1e-15);
        for (k, t) in r.terms.iter().enumerate() {
            assert!(*t <= 0.5f64.powi(k as i32) * r.chi_sq + 1e-15);
        }
        let same = dtd_bound_check(&[0.3, 0.7], &[0.3, 0.7], 40).unwrap();
        assert_eq!((same.kl, same.partial), (0.0, 0.0));
        assert!(same.pass);
    }

    proptest! {
        #[test]
        fn chain_rule_holds(seed in any::<u64>(), states in 2usize..5, steps in 1usize..4) {
            let p = random_chain(seed, states, steps);
            let q = random_chain(seed ^ 0x5555, states, steps);
            let r = chain_rule_check(&p, &q, 1e-10).unwrap();
            prop_assert!(r.pass, "{r:?}");
        }

        #[test]
        fn pinsker_holds(seed in any::<u64>(), len in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_distribution(&mut rng, len, 0.01);
            let q = random_distribution(&mut rng, len, 0.01);
            prop_assert!(pinsker_check(&p, &q).unwrap().pass);
        }

        #[test]
        fn dtd_sandwich_holds(seed in any::<u64>(), len in 2usize..8, k in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_distribution(&mut rng, len, 0.01);
            let q = random_distribution(&mut rng, len, 0.01);
            prop_assert!(dtd_bound_check(&p, &q, k).unwrap().pass);
        }
    }
}
