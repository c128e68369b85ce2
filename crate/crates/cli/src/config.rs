//! The experiment configuration: one JSON document, optionally patched with
//! `key.path=value` overrides, validated before anything is computed.

use std::path::{Path, PathBuf};

use mfg_core::simulator::InitialLaw;
use mfg_core::{
    DiffusionModel, EquilibriumSolver, MethodChoice, MfgError, Mode, ProfitModel, ReflectionScheme,
    Result, SimConfig, SolverConfig, TabulatedCoefficients,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    Gbm {
        delta: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_anchor: Option<f64>,
    },
    Affine {
        kappa: f64,
        lambda: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_anchor: Option<f64>,
    },
    Custom {
        grid_file: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_anchor: Option<f64>,
    },
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock::Gbm {
            delta: 2.0,
            sigma: 1.0,
            x_anchor: None,
        }
    }
}

impl ModelBlock {
    pub fn build(&self) -> Result<DiffusionModel> {
        let (d, anchor) = match self {
            ModelBlock::Gbm {
                delta,
                sigma,
                x_anchor,
            } => (DiffusionModel::gbm(*delta, *sigma)?, x_anchor),
            ModelBlock::Affine {
                kappa,
                lambda,
                sigma,
                x_anchor,
            } => (DiffusionModel::affine(*kappa, *lambda, *sigma)?, x_anchor),
            ModelBlock::Custom {
                grid_file,
                x_anchor,
            } => {
                if !grid_file.is_file() {
                    return Err(MfgError::Config(format!(
                        "grid file {} does not exist",
                        grid_file.display()
                    )));
                }
                let table = TabulatedCoefficients::from_csv_path(grid_file).map_err(|e| {
                    MfgError::Config(format!("grid file {}: {e}", grid_file.display()))
                })?;
                (DiffusionModel::custom(table), x_anchor)
            }
        };
        match anchor {
            Some(a) => d.with_anchor(*a),
            None => Ok(d),
        }
    }

    pub fn is_gbm(&self) -> bool {
        matches!(self, ModelBlock::Gbm { .. })
    }

    /// Copy with one named parameter replaced. `delta` is the mean-reversion
    /// speed `kappa` for the affine model.
    pub fn with_param(&self, param: SensitivityParam, value: f64) -> Result<Self> {
        let mut m = self.clone();
        match (&mut m, param) {
            (ModelBlock::Gbm { delta, .. }, SensitivityParam::Delta) => *delta = value,
            (ModelBlock::Gbm { sigma, .. }, SensitivityParam::Sigma) => *sigma = value,
            (ModelBlock::Affine { kappa, .. }, SensitivityParam::Delta) => *kappa = value,
            (ModelBlock::Affine { sigma, .. }, SensitivityParam::Sigma) => *sigma = value,
            (_, SensitivityParam::Beta) => {}
            (ModelBlock::Custom { .. }, p) => {
                return Err(MfgError::Config(format!(
                    "cannot vary {p:?} on a tabulated model"
                )));
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfitBlock {
    Isoelastic { beta: f64 },
}

impl Default for ProfitBlock {
    fn default() -> Self {
        ProfitBlock::Isoelastic { beta: 0.6 }
    }
}

impl ProfitBlock {
    pub fn build(&self) -> Result<ProfitModel> {
        match self {
            ProfitBlock::Isoelastic { beta } => ProfitModel::isoelastic(*beta),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            ProfitBlock::Isoelastic { beta } => *beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Discounted,
    Ergodic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub mode: ModeName,
    /// Discount rate of the discounted mode; also the rate of the discounted
    /// columns in sensitivity sweeps.
    pub r: f64,
    /// Sets both the `K` and the consistency tolerance.
    pub tol: Option<f64>,
    pub tol_bisect: Option<f64>,
    pub quad_truncation_mass: Option<f64>,
    pub max_iter: Option<usize>,
    pub method: MethodChoice,
    pub normalization_point: Option<f64>,
    pub theta_bracket: Option<(f64, f64)>,
    pub newton_refine: bool,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            mode: ModeName::Discounted,
            r: 0.5,
            tol: None,
            tol_bisect: None,
            quad_truncation_mass: None,
            max_iter: None,
            method: MethodChoice::default(),
            normalization_point: None,
            theta_bracket: None,
            newton_refine: false,
        }
    }
}

impl SolverBlock {
    pub fn solver_config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(t) = self.tol {
            c.tol_k = t;
            c.tol_q = t;
        }
        if let Some(t) = self.tol_bisect {
            c.tol_bisect = t;
        }
        if let Some(m) = self.quad_truncation_mass {
            c.quad_truncation_mass = m;
        }
        if let Some(n) = self.max_iter {
            c.max_iter = n;
        }
        c.method = self.method;
        c.normalization_point = self.normalization_point;
        c.theta_bracket = self.theta_bracket;
        c.newton_refine = self.newton_refine;
        c
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeName::Discounted => Mode::Discounted { r: self.r },
            ModeName::Ergodic => Mode::Ergodic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimBlock {
    /// Players in the equilibrium run.
    #[serde(rename = "N")]
    pub n_players: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub scheme: ReflectionScheme,
    pub initial: InitialLaw,
    /// Explicit deviation barriers. When absent, `grid_points` barriers are
    /// log-spaced in `[x*/3, 3x*]` below the cap.
    pub deviation_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Game sizes of the deviation study; empty skips it.
    pub n_list: Vec<usize>,
    pub claims: Vec<u8>,
    /// Discount rates of the claims that involve one.
    pub r_list: Vec<f64>,
}

impl Default for SimBlock {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            n_players: 50,
            dt: s.dt,
            horizon: s.horizon,
            burn_in: s.burn_in,
            seed: s.seed,
            n_paths: s.n_paths,
            scheme: s.scheme,
            initial: s.initial,
            deviation_grid: None,
            grid_points: 21,
            n_list: vec![2, 5, 20, 50],
            claims: vec![1, 2],
            r_list: vec![0.5, 0.05],
        }
    }
}

impl SimBlock {
    pub fn sim_config(&self, r: f64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            horizon: self.horizon,
            burn_in: self.burn_in,
            n_paths: self.n_paths,
            seed: self.seed,
            r,
            scheme: self.scheme,
            initial: self.initial,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub r_list: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            r_list: vec![0.5, 0.25, 0.1, 0.05, 0.01],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    Delta,
    Sigma,
    Beta,
}

impl SensitivityParam {
    pub fn name(&self) -> &'static str {
        match self {
            SensitivityParam::Delta => "delta",
            SensitivityParam::Sigma => "sigma",
            SensitivityParam::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityBlock {
    pub param: SensitivityParam,
    pub range: (f64, f64),
    pub n_points: usize,
}

impl Default for SensitivityBlock {
    fn default() -> Self {
        Self {
            param: SensitivityParam::Sigma,
            range: (0.5, 1.5),
            n_points: 20,
        }
    }
}

impl SensitivityBlock {
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = self.range;
        let n = self.n_points;
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateBlock {
    /// Replaces every row's own tolerance when set.
    pub tolerance: Option<f64>,
    pub rates: Vec<f64>,
    pub mc_paths: usize,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            tolerance: None,
            rates: vec![0.05, 0.25, 0.5, 1.0],
            mc_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub profit: ProfitBlock,
    pub solver: SolverBlock,
    pub sim: SimBlock,
    pub sweep: SweepBlock,
    pub sensitivity: SensitivityBlock,
    pub validate: ValidateBlock,
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> MfgError {
    MfgError::Config(msg.into())
}

/// Sets `path` (dot separated) in a JSON object, creating intermediate
/// objects. The value is parsed as JSON and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        config_err(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override key `{key}` is malformed")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            config_err(format!(
                "override `{key}`: `{}` is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

impl ExperimentConfig {
    /// Reads the file (if any), applies the overrides in order, and
    /// deserializes and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no numerics beyond building the models.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: MfgError| {
            if e.is_config() {
                e
            } else {
                config_err(e.to_string())
            }
        };
        self.model.build().map_err(as_config)?;
        self.profit.build().map_err(as_config)?;
        self.solver.solver_config().validate().map_err(as_config)?;
        if self.solver.mode == ModeName::Discounted
            && !(self.solver.r > 0.0 && self.solver.r.is_finite())
        {
            return Err(config_err(format!(
                "solver.r must be positive, got {}",
                self.solver.r
            )));
        }

        let sim = &self.sim;
        sim.sim_config(0.0).validate().map_err(as_config)?;
        if sim.n_players < 2 {
            return Err(config_err("sim.N must be at least 2"));
        }
        if sim.n_list.iter().any(|n| *n < 2) {
            return Err(config_err("sim.n_list entries must be at least 2"));
        }
        for c in &sim.claims {
            mfg_core::Claim::from_number(*c)?;
        }
        if sim.r_list.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(config_err("sim.r_list entries must be positive"));
        }
        if let Some(g) = &sim.deviation_grid {
            if g.is_empty() || g.iter().any(|z| !(*z > 0.0 && z.is_finite())) {
                return Err(config_err("sim.deviation_grid must hold positive barriers"));
            }
        } else if sim.grid_points < 2 {
            return Err(config_err("sim.grid_points must be at least 2"));
        }

        let r = &self.sweep.r_list;
        if r.is_empty() || r.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(config_err("sweep.r_list must hold positive rates"));
        }
        if r.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err("sweep.r_list must be strictly decreasing"));
        }

        let s = &self.sensitivity;
        if s.n_points < 2 {
            return Err(config_err("sensitivity.n_points must be at least 2"));
        }
        let (a, b) = s.range;
        if !(a < b) {
            return Err(config_err("sensitivity.range must be increasing"));
        }
        let ok = match s.param {
            SensitivityParam::Beta => a > 0.0 && b < 1.0,
            _ => a > 0.0 && b.is_finite(),
        };
        if !ok {
            return Err(config_err(format!(
                "sensitivity.range ({a}, {b}) is outside the admissible values of {}",
                s.param.name()
            )));
        }

        let v = &self.validate;
        if v.tolerance.is_some_and(|t| !(t > 0.0)) {
            return Err(config_err("validate.tolerance must be positive"));
        }
        if v.rates.iter().any(|r| !(*r > 0.0)) || v.mc_paths < 2 {
            return Err(config_err(
                "validate.rates must be positive and validate.mc_paths at least 2",
            ));
        }
        Ok(())
    }

    pub fn diffusion(&self) -> Result<DiffusionModel> {
        self.model.build()
    }

    pub fn solver(&self) -> Result<EquilibriumSolver> {
        EquilibriumSolver::new(
            self.model.build()?,
            self.profit.build()?,
            self.solver.solver_config(),
        )
    }
}
