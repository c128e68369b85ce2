//! Monte Carlo engine for reflected paths and the symmetric `N`-player game.
//!
//! Every `(path, player)` pair draws from its own stream
//! [`rng::stream`]`(seed, path, player)`, and per-path results are collected
//! in path order before any reduction, so reports do not depend on the number
//! of worker threads.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{self, DiffusionModel};
use crate::error::{MfgError, Result};
use crate::profit::ProfitModel;
use crate::rng;
use crate::stationary::TruncatedSpeedLaw;

/// 97.5% standard normal quantile.
const Z95: f64 = 1.959963984540054;
const HISTOGRAM_BINS: usize = 4000;
const HISTOGRAM_DECADES: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionScheme {
    /// Log-space step with the reflection read off the sampled minimum of the
    /// Brownian bridge between grid points. Exact in law for geometric
    /// Brownian motion.
    #[default]
    Lepingle,
    /// `X ← max(X + bΔt + σΔW, z)`.
    Projection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Point mass at the diffusion's anchor.
    #[default]
    Anchor,
    Point {
        x: f64,
    },
    /// The stationary law of the reference barrier.
    Stationary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Time discarded before long-run averages are taken.
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Discount rate of the discounted payoff; zero for ergodic runs.
    pub r: f64,
    pub scheme: ReflectionScheme,
    pub initial: InitialLaw,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 2000.0,
            burn_in: 100.0,
            n_paths: 1,
            seed: 42,
            r: 0.0,
            scheme: ReflectionScheme::Lepingle,
            initial: InitialLaw::Anchor,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(MfgError::Config(format!(
                "dt and horizon must be positive (got {}, {})",
                self.dt, self.horizon
            )));
        }
        if self.dt > self.horizon / 1000.0 * (1.0 + 1e-12) {
            return Err(MfgError::Config(format!(
                "dt = {} exceeds horizon / 1000 = {}",
                self.dt,
                self.horizon / 1000.0
            )));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(MfgError::Config(format!(
                "burn_in must lie in [0, horizon), got {}",
                self.burn_in
            )));
        }
        if self.n_paths == 0 {
            return Err(MfgError::Config("n_paths must be positive".into()));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(MfgError::Config(format!(
                "r must be nonnegative, got {}",
                self.r
            )));
        }
        if let InitialLaw::Point { x } = self.initial {
            if !(x > 0.0 && x.is_finite()) {
                return Err(MfgError::Config(format!(
                    "initial point must be positive, got {x}"
                )));
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }

    fn averaging_time(&self) -> f64 {
        (self.steps() - self.burn_steps()) as f64 * self.dt
    }
}

/// Sample mean with a 95% normal half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self {
                mean,
                half_width: f64::INFINITY,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            half_width: Z95 * (var / n).sqrt(),
        }
    }

    /// Whether `target` lies within `k` half-widths.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.half_width
    }
}

/// Time-weighted occupancy on logarithmic bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub below: f64,
    pub above: f64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            edges: diffusion::log_grid(lo, hi, bins + 1),
            mass: vec![0.0; bins],
            below: 0.0,
            above: 0.0,
        }
    }

    fn for_barrier(z: f64) -> Self {
        Self::new(z, z * 10f64.powf(HISTOGRAM_DECADES), HISTOGRAM_BINS)
    }

    pub fn add(&mut self, x: f64, w: f64) {
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        if x < lo {
            self.below += w;
        } else if x >= hi {
            self.above += w;
        } else {
            let bins = self.mass.len();
            let i = ((x / lo).ln() / (hi / lo).ln() * bins as f64) as usize;
            self.mass[i.min(bins - 1)] += w;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        debug_assert_eq!(self.edges.len(), other.edges.len());
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
    }

    pub fn total(&self) -> f64 {
        self.below + self.above + self.mass.iter().sum::<f64>()
    }

    pub fn normalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= t);
            self.below /= t;
            self.above /= t;
        }
    }

    /// Empirical cdf at each edge.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let t = self.total();
        let mut acc = self.below;
        let mut out = Vec::with_capacity(self.edges.len());
        out.push(acc / t);
        for m in &self.mass {
            acc += m;
            out.push(acc / t);
        }
        out
    }

    /// Kolmogorov–Smirnov distance to `cdf`, evaluated at the bin edges.
    pub fn ks_distance(&self, cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let mut d: f64 = 0.0;
        for (x, e) in self.edges.iter().zip(self.cdf_at_edges()) {
            d = d.max((cdf(*x)? - e).abs());
        }
        Ok(d)
    }

    /// Writes `x_lo,x_hi,mass,density` and, when a law is given, its density
    /// at the bin midpoint as `stationary_density`.
    pub fn write_csv(&self, path: impl AsRef<Path>, law: Option<&TruncatedSpeedLaw>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path.as_ref())?, law)
    }

    pub fn write_csv_to<W: std::io::Write>(
        &self,
        out: W,
        law: Option<&TruncatedSpeedLaw>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x_lo", "x_hi", "mass", "density"];
        if law.is_some() {
            header.push("stationary_density");
        }
        w.write_record(&header)?;
        let t = self.total();
        for (i, m) in self.mass.iter().enumerate() {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            let mut row = vec![
                format!("{a:.12e}"),
                format!("{b:.12e}"),
                format!("{:.12e}", m / t),
                format!("{:.12e}", m / t / (b - a)),
            ];
            if let Some(law) = law {
                row.push(format!("{:.12e}", law.density((a * b).sqrt())));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One step of the reflected dynamics.
#[derive(Debug, Clone)]
struct Stepper<'a> {
    diffusion: &'a DiffusionModel,
    dt: f64,
    sqrt_dt: f64,
    scheme: ReflectionScheme,
    /// Constant log-space drift and volatility for geometric Brownian motion.
    log_coeffs: Option<(f64, f64)>,
}

impl<'a> Stepper<'a> {
    fn new(diffusion: &'a DiffusionModel, cfg: &SimConfig) -> Self {
        Self {
            diffusion,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            scheme: cfg.scheme,
            log_coeffs: diffusion
                .gbm_params()
                .map(|(delta, sigma)| (-delta - 0.5 * sigma * sigma, sigma)),
        }
    }

    /// Advances `x ≥ z` by one step; returns the new state and the control
    /// increment. Both a normal and a uniform are drawn every step so streams
    /// stay aligned across schemes and barriers.
    #[inline]
    fn step(&self, x: f64, z: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let g: f64 = rng.sample(StandardNormal);
        let u = 1.0 - rng.random::<f64>();
        match self.scheme {
            ReflectionScheme::Projection => {
                let d = self.diffusion;
                let x2 = x + d.drift(x) * self.dt + d.vol(x) * self.sqrt_dt * g;
                if x2 < z {
                    (z, z - x2)
                } else {
                    (x2, 0.0)
                }
            }
            ReflectionScheme::Lepingle => {
                let (mu, nu) = self.log_coeffs.unwrap_or_else(|| {
                    let d = self.diffusion;
                    let s = d.vol(x) / x;
                    (d.drift(x) / x - 0.5 * s * s, s)
                });
                let y = (x / z).ln().max(0.0);
                let y2 = y + mu * self.dt + nu * self.sqrt_dt * g;
                let v = nu * nu * self.dt;
                // For y, y2 > 0 the bridge dips below 0 with probability
                // exp(-2 y y2 / v).
                let dips =
                    y2 <= 0.0 || (v > 0.0 && y * y2 < 20.0 * v && u < (-2.0 * y * y2 / v).exp());
                if dips {
                    let mn = 0.5 * (y + y2 - ((y2 - y).powi(2) - 2.0 * v * u.ln()).sqrt());
                    if mn < 0.0 {
                        return (z * (y2 - mn).exp(), -z * mn);
                    }
                }
                (z * y2.exp(), 0.0)
            }
        }
    }
}

fn draw_initial(
    law: Option<&TruncatedSpeedLaw>,
    initial: InitialLaw,
    anchor: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match (initial, law) {
        (InitialLaw::Anchor, _) => anchor,
        (InitialLaw::Point { x }, _) => x,
        (InitialLaw::Stationary, Some(law)) => law.sample_one(rng),
        (InitialLaw::Stationary, None) => anchor,
    }
}

/// The initial law as a sampler, with the stationary law built at `z_ref`.
fn initial_law(
    d: &DiffusionModel,
    cfg: &SimConfig,
    z_ref: f64,
) -> Result<Option<TruncatedSpeedLaw>> {
    match cfg.initial {
        InitialLaw::Stationary => Ok(Some(TruncatedSpeedLaw::new(d, z_ref)?)),
        _ => Ok(None),
    }
}

/// `E|ξ|²` under the initial law.
fn initial_second_moment(
    d: &DiffusionModel,
    cfg: &SimConfig,
    law: Option<&TruncatedSpeedLaw>,
) -> Result<f64> {
    Ok(match (cfg.initial, law) {
        (InitialLaw::Point { x }, _) => x * x,
        (InitialLaw::Stationary, Some(law)) => law.mean_of(|x| x * x, &Default::default())?,
        _ => d.x_anchor().powi(2),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReflectedPath {
    pub terminal: f64,
    /// `ν_T`, including an initial jump up to the barrier.
    pub control_total: f64,
    /// `(ν_T - ν_{burn_in}) / (T - burn_in)`.
    pub control_rate: f64,
    /// `∫_0^T e^{-rt} dν_t`.
    pub discounted_control: f64,
    pub mean_state: f64,
    pub mean_square: f64,
    #[serde(skip)]
    pub occupancy: Histogram,
}

fn blow_up(k: usize, x: f64) -> MfgError {
    MfgError::Numerical(format!("state left the finite range at step {k} (x = {x})"))
}

/// One reflected path at barrier `z` from `x0` on stream `(seed, path, 0)`.
pub fn simulate_reflected(
    d: &DiffusionModel,
    z: f64,
    x0: f64,
    cfg: &SimConfig,
    path: u64,
) -> Result<ReflectedPath> {
    if !(z > 0.0 && z.is_finite() && x0 > 0.0 && x0.is_finite()) {
        return Err(MfgError::Domain(format!(
            "barrier and start must be positive (z = {z}, x0 = {x0})"
        )));
    }
    cfg.validate()?;
    let stepper = Stepper::new(d, cfg);
    let mut rng = rng::stream(cfg.seed, path, 0);
    run_reflected(&stepper, z, x0, cfg, &mut rng)
}

fn run_reflected(
    stepper: &Stepper,
    z: f64,
    x0: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ReflectedPath> {
    let (n, burn, dt, r) = (cfg.steps(), cfg.burn_steps(), cfg.dt, cfg.r);
    let mut hist = Histogram::for_barrier(z);
    let jump = (z - x0).max(0.0);
    let mut x = x0.max(z);
    let mut total = jump;
    let mut post = if burn == 0 { jump } else { 0.0 };
    let mut disc = jump;
    let (mut s1, mut s2) = (0.0, 0.0);
    for k in 0..n {
        if k >= burn {
            hist.add(x, dt);
            s1 += x;
            s2 += x * x;
        }
        let (x2, dnu) = stepper.step(x, z, rng);
        if !x2.is_finite() {
            return Err(blow_up(k, x2));
        }
        if dnu > 0.0 {
            total += dnu;
            if k >= burn {
                post += dnu;
            }
            if r > 0.0 {
                disc += (-r * (k as f64 + 0.5) * dt).exp() * dnu;
            } else {
                disc += dnu;
            }
        }
        x = x2;
    }
    let m = (n - burn) as f64;
    Ok(ReflectedPath {
        terminal: x,
        control_total: total,
        control_rate: post / cfg.averaging_time(),
        discounted_control: disc,
        mean_state: s1 / m,
        mean_square: s2 / m,
        occupancy: hist,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReflectedEnsemble {
    pub barrier: f64,
    pub control_rate: Estimate,
    pub mean_state: Estimate,
    /// Pooled over paths and normalized.
    #[serde(skip)]
    pub occupancy: Histogram,
}

/// `cfg.n_paths` independent reflected paths with initial states from
/// `cfg.initial` (stationary at `z` when requested).
pub fn reflected_ensemble(
    d: &DiffusionModel,
    z: f64,
    cfg: &SimConfig,
) -> Result<ReflectedEnsemble> {
    cfg.validate()?;
    let law = initial_law(d, cfg, z)?;
    let stepper = Stepper::new(d, cfg);
    let paths: Vec<ReflectedPath> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(cfg.seed, p, 0);
            let x0 = draw_initial(law.as_ref(), cfg.initial, d.x_anchor(), &mut rng);
            run_reflected(&stepper, z, x0, cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut occupancy = Histogram::for_barrier(z);
    for p in &paths {
        occupancy.merge(&p.occupancy);
    }
    occupancy.normalize();
    let rates: Vec<f64> = paths.iter().map(|p| p.control_rate).collect();
    let means: Vec<f64> = paths.iter().map(|p| p.mean_state).collect();
    Ok(ReflectedEnsemble {
        barrier: z,
        control_rate: Estimate::from_samples(&rates),
        mean_state: Estimate::from_samples(&means),
        occupancy,
    })
}

/// `-∫_z^∞ b dP` under the stationary law at `z`: the long-run rate of control.
pub fn long_run_control_rate(d: &DiffusionModel, z: f64) -> Result<f64> {
    TruncatedSpeedLaw::new(d, z)?.mean_of(|x| -d.drift(x), &Default::default())
}

/// Reflected players advanced in lockstep.
struct Cohort<'a> {
    stepper: &'a Stepper<'a>,
    barriers: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
    x: Vec<f64>,
    jumps: Vec<f64>,
}

impl<'a> Cohort<'a> {
    fn new(
        stepper: &'a Stepper<'a>,
        barriers: &[f64],
        players: impl Iterator<Item = u64>,
        seed: u64,
        path: u64,
        law: Option<&TruncatedSpeedLaw>,
        cfg: &SimConfig,
    ) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = players.map(|i| rng::stream(seed, path, i)).collect();
        let anchor = stepper.diffusion.x_anchor();
        let x0: Vec<f64> = rngs
            .iter_mut()
            .map(|g| draw_initial(law, cfg.initial, anchor, g))
            .collect();
        let jumps = x0
            .iter()
            .zip(barriers)
            .map(|(x, z)| (z - x).max(0.0))
            .collect();
        let x = x0.iter().zip(barriers).map(|(x, z)| x.max(*z)).collect();
        Self {
            stepper,
            barriers: barriers.to_vec(),
            rngs,
            x,
            jumps,
        }
    }

    /// Steps every player; `dnu[i]` receives the control increments.
    fn step(&mut self, k: usize, dnu: &mut [f64]) -> Result<()> {
        for i in 0..self.x.len() {
            let (x2, d) = self
                .stepper
                .step(self.x[i], self.barriers[i], &mut self.rngs[i]);
            if !x2.is_finite() {
                return Err(blow_up(k, x2));
            }
            self.x[i] = x2;
            dnu[i] = d;
        }
        Ok(())
    }
}

/// Payoff functional used to score a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payoff", rename_all = "snake_case")]
pub enum PayoffKind {
    /// `(∫_{burn_in}^T π dt - (ν_T - ν_{burn_in})) / (T - burn_in)`.
    Ergodic,
    /// `∫_0^T e^{-rt} π dt - ∫_0^T e^{-rt} dν`.
    Discounted { r: f64 },
}

/// Running totals of one player on one path.
#[derive(Debug, Clone, Copy, Default)]
struct Ledger {
    profit_post: f64,
    control_post: f64,
    disc_profit: f64,
    disc_control: f64,
    square_post: f64,
}

impl Ledger {
    fn start(jump: f64, burn: usize) -> Self {
        Self {
            control_post: if burn == 0 { jump } else { 0.0 },
            disc_control: jump,
            ..Default::default()
        }
    }

    #[inline]
    fn record(
        &mut self,
        k: usize,
        burn: usize,
        x: f64,
        pi: f64,
        disc_w: f64,
        disc_mid: f64,
        dnu: f64,
        dt: f64,
    ) {
        if k >= burn {
            self.profit_post += pi * dt;
            self.control_post += dnu;
            self.square_post += x * x * dt;
        }
        self.disc_profit += disc_w * pi;
        self.disc_control += disc_mid * dnu;
    }

    fn payoff(&self, kind: PayoffKind, avg_time: f64) -> f64 {
        match kind {
            PayoffKind::Ergodic => (self.profit_post - self.control_post) / avg_time,
            PayoffKind::Discounted { .. } => self.disc_profit - self.disc_control,
        }
    }
}

/// Discount weights for step `k`: the integral of `e^{-rt}` over the step
/// and the factor at its midpoint.
#[inline]
fn discount_weights(r: f64, k: usize, dt: f64) -> (f64, f64) {
    if r == 0.0 {
        return (dt, 1.0);
    }
    let t = k as f64 * dt;
    let e = (-r * t).exp();
    (e * (1.0 - (-r * dt).exp()) / r, e * (-0.5 * r * dt).exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct NPlayerReport {
    pub n_players: usize,
    pub barriers: Vec<f64>,
    /// `θ^N_{-i}` averaged over players.
    pub theta_n: Estimate,
    /// Ergodic payoff `G^i` averaged over players.
    pub payoff: Estimate,
    /// Discounted payoff `J^i` at `cfg.r`, when positive.
    pub discounted_payoff: Option<Estimate>,
    /// `(ν^i_T - ν^i_{burn_in}) / (T - burn_in)` per player, averaged over paths.
    pub control_rates: Vec<f64>,
    pub mean_square: f64,
    pub theta_divergent: bool,
    #[serde(skip)]
    pub occupancy: Histogram,
}

struct NPlayerPath {
    theta: Vec<f64>,
    ledgers: Vec<Ledger>,
    occupancy: Histogram,
}

/// Simulates the `N`-player game with each player reflecting at its own
/// barrier.
///
/// `θ^N_{-i}` is a long-run average, so a first pass computes it and a
/// second pass replays the same noise to score the payoffs.
pub fn nplayer_run(
    d: &DiffusionModel,
    profit: &ProfitModel,
    barriers: &[f64],
    cfg: &SimConfig,
) -> Result<NPlayerReport> {
    cfg.validate()?;
    let n_players = barriers.len();
    if n_players < 2 {
        return Err(MfgError::Config(format!(
            "the game needs at least two players, got {n_players}"
        )));
    }
    if barriers.iter().any(|z| !(*z > 0.0 && z.is_finite())) {
        return Err(MfgError::Config("barriers must be positive".into()));
    }
    let z_ref = barriers.iter().cloned().fold(f64::INFINITY, f64::min);
    let law = initial_law(d, cfg, z_ref)?;
    let stepper = Stepper::new(d, cfg);
    let (n, burn, dt) = (cfg.steps(), cfg.burn_steps(), cfg.dt);
    let avg_time = cfg.averaging_time();
    let inv = 1.0 / (n_players - 1) as f64;

    let paths: Vec<NPlayerPath> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<NPlayerPath> {
            let players = || 0..n_players as u64;
            let mut dnu = vec![0.0; n_players];
            let mut fx = vec![0.0; n_players];

            let mut cohort = Cohort::new(
                &stepper,
                barriers,
                players(),
                cfg.seed,
                p,
                law.as_ref(),
                cfg,
            );
            let mut theta = vec![0.0; n_players];
            for k in 0..n {
                if k >= burn {
                    fx.iter_mut()
                        .zip(&cohort.x)
                        .for_each(|(f, x)| *f = profit.weight(*x));
                    let s: f64 = fx.iter().sum();
                    for i in 0..n_players {
                        theta[i] += profit.outer((s - fx[i]) * inv) * dt;
                    }
                }
                cohort.step(k, &mut dnu)?;
            }
            theta.iter_mut().for_each(|t| *t /= avg_time);

            let mut cohort = Cohort::new(
                &stepper,
                barriers,
                players(),
                cfg.seed,
                p,
                law.as_ref(),
                cfg,
            );
            let mut ledgers: Vec<Ledger> = cohort
                .jumps
                .iter()
                .map(|j| Ledger::start(*j, burn))
                .collect();
            let mut occupancy = Histogram::for_barrier(z_ref);
            let mut xs = vec![0.0; n_players];
            for k in 0..n {
                xs.copy_from_slice(&cohort.x);
                cohort.step(k, &mut dnu)?;
                let (w, mid) = discount_weights(cfg.r, k, dt);
                for i in 0..n_players {
                    let pi = profit.pi(xs[i], theta[i]);
                    ledgers[i].record(k, burn, xs[i], pi, w, mid, dnu[i], dt);
                    if k >= burn {
                        occupancy.add(xs[i], dt);
                    }
                }
            }
            Ok(NPlayerPath {
                theta,
                ledgers,
                occupancy,
            })
        })
        .collect::<Result<_>>()?;

    let per_path = |g: &dyn Fn(&NPlayerPath) -> f64| -> Vec<f64> { paths.iter().map(g).collect() };
    let mean_over_players = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let theta_samples = per_path(&|p| mean_over_players(&p.theta));
    let theta_divergent = paths.iter().any(|p| p.theta.iter().any(|t| !t.is_finite()));
    let payoff = Estimate::from_samples(&per_path(&|p| {
        p.ledgers
            .iter()
            .map(|l| l.payoff(PayoffKind::Ergodic, avg_time))
            .sum::<f64>()
            / n_players as f64
    }));
    let discounted_payoff = (cfg.r > 0.0).then(|| {
        Estimate::from_samples(&per_path(&|p| {
            p.ledgers
                .iter()
                .map(|l| l.payoff(PayoffKind::Discounted { r: cfg.r }, avg_time))
                .sum::<f64>()
                / n_players as f64
        }))
    });
    let control_rates = (0..n_players)
        .map(|i| {
            paths
                .iter()
                .map(|p| p.ledgers[i].control_post / avg_time)
                .sum::<f64>()
                / paths.len() as f64
        })
        .collect();
    let mean_square = paths
        .iter()
        .map(|p| {
            p.ledgers.iter().map(|l| l.square_post).sum::<f64>() / (n_players as f64 * avg_time)
        })
        .sum::<f64>()
        / paths.len() as f64;
    let mut occupancy = Histogram::for_barrier(z_ref);
    for p in &paths {
        occupancy.merge(&p.occupancy);
    }
    occupancy.normalize();
    Ok(NPlayerReport {
        n_players,
        barriers: barriers.to_vec(),
        theta_n: Estimate::from_samples(&theta_samples),
        payoff,
        discounted_payoff,
        control_rates,
        mean_square,
        theta_divergent,
        occupancy,
    })
}

/// The four approximation statements for the finite game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// Ergodic barrier, ergodic payoff.
    ErgodicBarrierErgodicPayoff,
    /// Discounted barrier, ergodic payoff.
    DiscountedBarrierErgodicPayoff,
    /// Discounted barrier, discounted payoff.
    DiscountedBarrierDiscountedPayoff,
    /// Ergodic barrier, discounted payoff.
    ErgodicBarrierDiscountedPayoff,
}

impl Claim {
    pub const ALL: [Claim; 4] = [
        Claim::ErgodicBarrierErgodicPayoff,
        Claim::DiscountedBarrierErgodicPayoff,
        Claim::DiscountedBarrierDiscountedPayoff,
        Claim::ErgodicBarrierDiscountedPayoff,
    ];

    pub fn number(&self) -> u8 {
        match self {
            Claim::ErgodicBarrierErgodicPayoff => 1,
            Claim::DiscountedBarrierErgodicPayoff => 2,
            Claim::DiscountedBarrierDiscountedPayoff => 3,
            Claim::ErgodicBarrierDiscountedPayoff => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        Claim::ALL
            .into_iter()
            .find(|c| c.number() == n)
            .ok_or_else(|| MfgError::Config(format!("claims are numbered 1 to 4, got {n}")))
    }

    pub fn uses_discounted_barrier(&self) -> bool {
        matches!(
            self,
            Claim::DiscountedBarrierErgodicPayoff | Claim::DiscountedBarrierDiscountedPayoff
        )
    }

    pub fn payoff(&self, r: f64) -> PayoffKind {
        match self {
            Claim::ErgodicBarrierErgodicPayoff | Claim::DiscountedBarrierErgodicPayoff => {
                PayoffKind::Ergodic
            }
            _ => PayoffKind::Discounted { r },
        }
    }
}

/// Computable stand-in for the barrier cap:
/// `2 max(x̂_r(F(f(x*_r))), x̂_0(F(f(x*_e))), x*_r, x*_e)` at the run's own `r`.
pub fn barrier_cap(
    d: &DiffusionModel,
    profit: &ProfitModel,
    discounted: Option<(f64, f64)>,
    x_star_e: f64,
) -> Result<f64> {
    let floor = |x: f64| profit.outer(profit.weight(x));
    let mut m = profit.x_hat(d, floor(x_star_e), 0.0)?.max(x_star_e);
    if let Some((r, x_r)) = discounted {
        m = m.max(profit.x_hat(d, floor(x_r), r)?).max(x_r);
    }
    Ok(2.0 * m)
}

/// `n` barriers log-spaced in `[x*/3, 3x*]`, dropping those above `cap`.
pub fn deviation_grid(x_star: f64, cap: f64, n: usize) -> Vec<f64> {
    diffusion::log_grid(x_star / 3.0, 3.0 * x_star, n)
        .into_iter()
        .filter(|z| *z <= cap)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationSetup {
    pub n_players: usize,
    /// Barrier played by the opponents and by the reference strategy.
    pub equilibrium_barrier: f64,
    pub grid: Vec<f64>,
    pub payoff: PayoffKind,
    /// Barrier cap; also the `L̂` of the moment bound.
    pub cap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonReport {
    pub n_players: usize,
    pub payoff: PayoffKind,
    pub equilibrium_barrier: f64,
    pub grid: Vec<f64>,
    pub theta_n: Estimate,
    pub equilibrium_payoff: Estimate,
    /// Payoff gain over the equilibrium strategy, per grid barrier.
    pub gains: Vec<Estimate>,
    /// `max(0, max_g gain_g)`.
    pub epsilon: f64,
    pub epsilon_half_width: f64,
    pub best_barrier: Option<f64>,
    /// The estimate is not distinguishable from zero.
    pub below_noise_floor: bool,
    /// Largest time-averaged second moment over the grid.
    pub max_mean_square: f64,
    /// `2L̂² + E|ξ|²`.
    pub moment_bound: f64,
    pub moment_bound_ok: bool,
    pub theta_divergent: bool,
}

struct DeviationPath {
    theta: f64,
    /// Reference strategy first, then the grid.
    payoffs: Vec<f64>,
    squares: Vec<f64>,
}

/// Unilateral deviation gains against opponents pinned at the equilibrium
/// barrier.
///
/// Opponents do not react to the deviator, so on each path they are simulated
/// once; the deviator is then replayed on the same noise for the reference
/// barrier and every grid barrier.
pub fn deviation_epsilon(
    d: &DiffusionModel,
    profit: &ProfitModel,
    setup: &DeviationSetup,
    cfg: &SimConfig,
) -> Result<EpsilonReport> {
    cfg.validate()?;
    let n_players = setup.n_players;
    if n_players < 2 {
        return Err(MfgError::Config(format!(
            "the game needs at least two players, got {n_players}"
        )));
    }
    let z_eq = setup.equilibrium_barrier;
    if !(z_eq > 0.0) || setup.grid.iter().any(|z| !(*z > 0.0)) {
        return Err(MfgError::Config("barriers must be positive".into()));
    }
    let law = initial_law(d, cfg, z_eq)?;
    let stepper = Stepper::new(d, cfg);
    let (n, burn, dt) = (cfg.steps(), cfg.burn_steps(), cfg.dt);
    let avg_time = cfg.averaging_time();
    let r_disc = match setup.payoff {
        PayoffKind::Discounted { r } => r,
        PayoffKind::Ergodic => 0.0,
    };
    let inv = 1.0 / (n_players - 1) as f64;
    let strategies: Vec<f64> = std::iter::once(z_eq)
        .chain(setup.grid.iter().cloned())
        .collect();
    let weights: Vec<(f64, f64)> = (0..n).map(|k| discount_weights(r_disc, k, dt)).collect();

    let paths: Vec<DeviationPath> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<DeviationPath> {
            let opp_barriers = vec![z_eq; n_players - 1];
            let mut cohort = Cohort::new(
                &stepper,
                &opp_barriers,
                1..n_players as u64,
                cfg.seed,
                p,
                law.as_ref(),
                cfg,
            );
            let mut dnu = vec![0.0; n_players - 1];
            let mut theta = 0.0;
            for k in 0..n {
                if k >= burn {
                    let s: f64 = cohort.x.iter().map(|x| profit.weight(*x)).sum();
                    theta += profit.outer(s * inv) * dt;
                }
                cohort.step(k, &mut dnu)?;
            }
            theta /= avg_time;

            let mut payoffs = Vec::with_capacity(strategies.len());
            let mut squares = Vec::with_capacity(strategies.len());
            for &z in &strategies {
                let mut rng = rng::stream(cfg.seed, p, 0);
                let x0 = draw_initial(law.as_ref(), cfg.initial, d.x_anchor(), &mut rng);
                let mut ledger = Ledger::start((z - x0).max(0.0), burn);
                let mut x = x0.max(z);
                for (k, &(w, mid)) in weights.iter().enumerate() {
                    let (x2, dn) = stepper.step(x, z, &mut rng);
                    if !x2.is_finite() {
                        return Err(blow_up(k, x2));
                    }
                    ledger.record(k, burn, x, profit.pi(x, theta), w, mid, dn, dt);
                    x = x2;
                }
                payoffs.push(ledger.payoff(setup.payoff, avg_time));
                squares.push(ledger.square_post / avg_time);
            }
            Ok(DeviationPath {
                theta,
                payoffs,
                squares,
            })
        })
        .collect::<Result<_>>()?;

    let thetas: Vec<f64> = paths.iter().map(|p| p.theta).collect();
    let theta_divergent = thetas.iter().any(|t| !t.is_finite());
    let base: Vec<f64> = paths.iter().map(|p| p.payoffs[0]).collect();
    let gains: Vec<Estimate> = (1..strategies.len())
        .map(|g| {
            let diff: Vec<f64> = paths.iter().map(|p| p.payoffs[g] - p.payoffs[0]).collect();
            Estimate::from_samples(&diff)
        })
        .collect();
    let best = gains
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean));
    let (epsilon, epsilon_half_width, best_barrier) = match best {
        Some((g, e)) if e.mean > 0.0 => (e.mean, e.half_width, Some(setup.grid[g])),
        Some((_, e)) => (0.0, e.half_width, None),
        None => (0.0, 0.0, None),
    };
    let max_mean_square = (0..strategies.len())
        .map(|g| paths.iter().map(|p| p.squares[g]).sum::<f64>() / paths.len() as f64)
        .fold(0.0, f64::max);
    let moment_bound = 2.0 * setup.cap * setup.cap + initial_second_moment(d, cfg, law.as_ref())?;
    Ok(EpsilonReport {
        n_players,
        payoff: setup.payoff,
        equilibrium_barrier: z_eq,
        grid: setup.grid.clone(),
        theta_n: Estimate::from_samples(&thetas),
        equilibrium_payoff: Estimate::from_samples(&base),
        gains,
        epsilon,
        epsilon_half_width,
        best_barrier,
        below_noise_floor: epsilon <= epsilon_half_width,
        max_mean_square,
        moment_bound,
        moment_bound_ok: max_mean_square <= 2.0 * moment_bound,
        theta_divergent,
    })
}
