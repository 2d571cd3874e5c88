//! Noisy gradient methods (GLD, SGLD, noisy momentum, Entropy-SGD) with
//! online, data-dependent generalization bounds and a numerical lab for the
//! KL and stability inequalities behind them.

pub mod bounds;
pub mod data;
pub mod harness;
pub mod kl_lab;
pub mod nn;
pub mod optim;
