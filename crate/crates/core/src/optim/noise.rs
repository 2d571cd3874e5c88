//! Additive noise for the Langevin updates.

use rand::Rng;
use rand_distr::StandardNormal;

/// Noise family. At scale `sigma`:
///
/// * `Gaussian`: i.i.d. `N(0, sigma^2 / 2)` per coordinate.
/// * `Laplace`: i.i.d. Laplace with scale `sigma / 2` per coordinate, which
///   has the same variance `sigma^2 / 2`.
/// * `Off`: no noise; a hook for deterministic tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Laplace,
    Off,
}

impl NoiseKind {
    /// Adds one draw per coordinate to `target`, in coordinate order.
    pub fn add_noise<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R, target: &mut [f64]) {
        match self {
            NoiseKind::Gaussian => {
                let sd = sigma / std::f64::consts::SQRT_2;
                for v in target {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sd * z;
                }
            }
            NoiseKind::Laplace => {
                let scale = sigma / 2.0;
                for v in target {
                    // inverse CDF on u in (-1/2, 1/2)
                    let u: f64 = rng.random::<f64>() - 0.5;
                    *v -= scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            }
            NoiseKind::Off => {}
        }
    }

    pub fn per_coordinate_variance(&self, sigma: f64) -> f64 {
        match self {
            NoiseKind::Gaussian | NoiseKind::Laplace => sigma * sigma / 2.0,
            NoiseKind::Off => 0.0,
        }
    }

    /// Sup of `||grad ln p||` for the `dim`-dimensional product Laplace
    /// density at scale `sigma`: `2 sqrt(dim) / sigma`. `None` for the
    /// Gaussian, whose log-density gradient is unbounded.
    pub fn log_lipschitz_constant(&self, sigma: f64, dim: usize) -> Option<f64> {
        match self {
            NoiseKind::Laplace => Some(2.0 * (dim as f64).sqrt() / sigma),
            NoiseKind::Gaussian | NoiseKind::Off => None,
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "laplace" => Ok(NoiseKind::Laplace),
            "off" | "none" => Ok(NoiseKind::Off),
            other => Err(format!("unknown noise kind '{other}'")),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
            NoiseKind::Off => "off",
        })
    }
}
