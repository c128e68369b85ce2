//! The stationary law of a diffusion reflected upward at `z`: the speed
//! measure restricted to `[z, ∞)` and normalized.

use std::path::Path;

use rand::Rng;

use crate::diffusion::DiffusionModel;
use crate::error::{MfgError, Result};
use crate::quadrature::{self, TailOptions};
use crate::rng;

const TABLE_NODES: usize = 4096;
const TABLE_TAIL: f64 = 1e-9;

/// `ln x` against the cdf at the table nodes.
#[derive(Debug, Clone)]
struct Table {
    cdf: Vec<f64>,
    ln_x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TruncatedSpeedLaw {
    z: f64,
    normalizer: f64,
    ln_normalizer: f64,
    diffusion: DiffusionModel,
    /// Tail index `α` of `P(X > x) = (z/x)^α` for geometric Brownian motion.
    pareto_alpha: Option<f64>,
    table: Option<Table>,
}

impl TruncatedSpeedLaw {
    pub fn new(diffusion: &DiffusionModel, z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(MfgError::Domain(format!(
                "barrier must be positive, got {z}"
            )));
        }
        let pareto_alpha = diffusion
            .gbm_params()
            .map(|(delta, sigma)| 1.0 + 2.0 * delta / (sigma * sigma));
        let ln_normalizer = match pareto_alpha {
            Some(alpha) => diffusion.ln_speed_density(z)? + (z / alpha).ln(),
            None => diffusion.ln_speed_tail_mass(z, &TailOptions::default())?,
        };
        let mut law = Self {
            z,
            normalizer: ln_normalizer.exp(),
            ln_normalizer,
            diffusion: diffusion.clone(),
            pareto_alpha,
            table: None,
        };
        if pareto_alpha.is_none() {
            law.table = Some(law.build_table()?);
        }
        Ok(law)
    }

    pub fn barrier(&self) -> f64 {
        self.z
    }

    /// `∫_z^∞ m'`; may underflow, see [`Self::ln_normalizer`].
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn ln_normalizer(&self) -> f64 {
        self.ln_normalizer
    }

    pub fn diffusion(&self) -> &DiffusionModel {
        &self.diffusion
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < self.z {
            return 0.0;
        }
        match self.diffusion.ln_speed_density(x) {
            Ok(l) => (l - self.ln_normalizer).exp(),
            Err(_) => 0.0,
        }
    }

    /// Mass above `x`.
    pub fn survival(&self, x: f64) -> Result<f64> {
        if x <= self.z {
            return Ok(1.0);
        }
        if let Some(alpha) = self.pareto_alpha {
            return Ok((self.z / x).powf(alpha));
        }
        Ok((self
            .diffusion
            .ln_speed_tail_mass(x, &TailOptions::default())?
            - self.ln_normalizer)
            .exp()
            .min(1.0))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        Ok(1.0 - self.survival(x)?)
    }

    /// `∫ g dP`, truncating the tail once it carries a negligible fraction of
    /// the absolute mass.
    pub fn mean_of<G: Fn(f64) -> f64>(&self, g: G, opts: &TailOptions) -> Result<f64> {
        let integral = quadrature::integrate_to_infinity(|y| g(y) * self.density(y), self.z, opts)?;
        Ok(integral.value)
    }

    fn build_table(&self) -> Result<Table> {
        let mut x_max = 10.0 * self.z;
        while self.survival(x_max)? > TABLE_TAIL {
            x_max *= 10.0;
            if x_max > 1e12 * self.z {
                return Err(MfgError::Truncation {
                    what: "stationary law tail too heavy for the sampling table".into(),
                    estimate: self.survival(x_max)?,
                });
            }
        }
        let ln_x: Vec<f64> = crate::diffusion::log_grid(self.z, x_max, TABLE_NODES)
            .iter()
            .map(|x| x.ln())
            .collect();
        let mut cdf = vec![0.0; TABLE_NODES];
        for i in 1..TABLE_NODES {
            let piece = quadrature::integrate_log(
                |y| self.density(y),
                ln_x[i - 1].exp(),
                ln_x[i].exp(),
                1e-12,
            )?;
            cdf[i] = cdf[i - 1] + piece;
        }
        Ok(Table { cdf, ln_x })
    }

    /// Inverse cdf at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match (&self.table, self.pareto_alpha) {
            (None, Some(alpha)) => self.z * (1.0 - u).powf(-1.0 / alpha),
            (None, None) => unreachable!("non-Pareto laws always carry a table"),
            (Some(Table { cdf, ln_x }), _) => {
                let i = cdf.partition_point(|&c| c <= u);
                if i == 0 {
                    return self.z;
                }
                if i >= cdf.len() {
                    return ln_x[ln_x.len() - 1].exp();
                }
                let t = (u - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
                (ln_x[i - 1] + t * (ln_x[i] - ln_x[i - 1])).exp()
            }
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, 0x57A7, 0);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// Writes `x,density,cdf` at the given points.
    pub fn write_csv(&self, path: impl AsRef<Path>, xs: &[f64]) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path.as_ref())?, xs)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W, xs: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "density", "cdf"])?;
        for &x in xs {
            w.write_record(&[
                format!("{x:.12e}"),
                format!("{:.12e}", self.density(x)),
                format!("{:.12e}", self.cdf(x)?),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
