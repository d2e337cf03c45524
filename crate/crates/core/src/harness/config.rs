use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::SamplerConfig;

/// Generative mechanism for `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `β = 0`.
    Null,
    /// `β_j` i.i.d. from `w·Laplace(b1) + (1−w)·Laplace(b2)`, redrawn per trial.
    LaplaceMixture {
        #[serde(default = "default_w")]
        w: f64,
        #[serde(default = "default_b1")]
        b1: f64,
        #[serde(default = "default_b2")]
        b2: f64,
    },
    /// `support` coordinates at random positions with `±amplitude`.
    Sparse {
        support: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_w() -> f64 {
    0.9
}
fn default_b1() -> f64 {
    0.1
}
fn default_b2() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    7.0
}
fn default_fraction() -> f64 {
    0.5
}
fn default_bootstrap() -> usize {
    2000
}
fn default_alpha() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

/// Selection procedure run in every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    /// Randomized Lasso with the design drawn once per experiment.
    LassoFixed {
        lambda: Option<f64>,
        epsilon: Option<f64>,
    },
    /// Randomized Lasso with a fresh design per trial.
    LassoRandom {
        lambda: Option<f64>,
        epsilon: Option<f64>,
    },
    /// Lasso on a random subsample, fresh design per trial.
    CarvedLasso {
        #[serde(default = "default_fraction")]
        fraction: f64,
        lambda: Option<f64>,
        epsilon: Option<f64>,
        #[serde(default = "default_bootstrap")]
        bootstrap: usize,
    },
    /// `steps` rounds of randomized forward stepwise, fixed design.
    Fs { steps: usize },
    /// Randomized marginal screening at threshold `alpha` followed by the
    /// randomized Lasso on the survivors, fixed design.
    MsLasso {
        #[serde(default = "default_alpha")]
        alpha: f64,
        lambda: Option<f64>,
        epsilon: Option<f64>,
        #[serde(default = "default_true")]
        screening: bool,
    },
}

impl QuerySpec {
    pub fn name(&self) -> &'static str {
        match self {
            QuerySpec::LassoFixed { .. } => "lasso_fixed",
            QuerySpec::LassoRandom { .. } => "lasso_random",
            QuerySpec::CarvedLasso { .. } => "carved_lasso",
            QuerySpec::Fs { .. } => "fs",
            QuerySpec::MsLasso { .. } => "ms_lasso",
        }
    }

    pub fn random_design(&self) -> bool {
        matches!(self, QuerySpec::LassoRandom { .. } | QuerySpec::CarvedLasso { .. })
    }
}

/// Normalizer choice; `auto` takes the dual when it is supported and has
/// no more variables than observations, else the reduced primal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationChoice {
    #[default]
    Auto,
    PrimalFull,
    PrimalReduced,
    Dual,
    ChernoffDual,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskAggregation {
    /// Squared error summed over selected coordinates.
    #[default]
    Sum,
    /// Squared error averaged over selected coordinates.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelSpec,
    pub query: QuerySpec,
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    /// Randomization scale, in units of the noise scale.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub formulation: FormulationChoice,
    /// Known noise scale of the generating model.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Estimate the noise scale from the selected-model residuals for
    /// inference instead of using `sigma`.
    #[serde(default)]
    pub estimate_sigma: bool,
    #[serde(default)]
    pub risk: RiskAggregation,
    #[serde(default)]
    pub sampler: SamplerSettings,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_tau() -> f64 {
    1.0
}
fn default_level() -> f64 {
    0.9
}
fn default_sigma() -> f64 {
    1.0
}

/// Chain settings shared by all trials; per-trial seeds are derived from the
/// experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub burn_in: usize,
    pub draws: usize,
    pub step_size: Option<f64>,
    pub step_scale: f64,
    pub mala: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self { burn_in: d.burn_in, draws: d.iterations - d.burn_in, step_size: d.step_size, step_scale: d.step_scale, mala: d.mala }
    }
}

impl SamplerSettings {
    pub fn config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            iterations: self.burn_in + self.draws,
            burn_in: self.burn_in,
            step_size: self.step_size,
            step_scale: self.step_scale,
            seed,
            mala: self.mala,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.p == 0 {
            return bad(format!("dimensions must be positive, got n={} p={}", self.n, self.p));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0,1), got {}", self.level));
        }
        if !(self.tau > 0.0) || !(self.sigma > 0.0) {
            return bad("tau and sigma must be positive".into());
        }
        if self.sampler.draws == 0 {
            return bad("sampler needs at least one kept draw".into());
        }
        match &self.model {
            ModelSpec::LaplaceMixture { w, b1, b2 } if !(*w > 0.0 && *w <= 1.0 && *b1 > 0.0 && *b2 > 0.0) => {
                return bad(format!("invalid Laplace mixture w={w} b1={b1} b2={b2}"));
            }
            ModelSpec::Sparse { support, .. } if *support > self.p => {
                return bad(format!("support {support} exceeds p={}", self.p));
            }
            _ => {}
        }
        match &self.query {
            QuerySpec::Fs { steps } if *steps == 0 || *steps > self.p => {
                return bad(format!("stepwise steps must lie in 1..={}", self.p));
            }
            QuerySpec::CarvedLasso { fraction, bootstrap, .. } if !(*fraction > 0.0 && *fraction <= 1.0) || *bootstrap < 2 => {
                return bad("carving needs fraction in (0,1] and at least two bootstrap resamples".into());
            }
            QuerySpec::MsLasso { alpha, .. } if !(*alpha > 0.0) => return bad("screening threshold must be positive".into()),
            _ => {}
        }
        Ok(())
    }
}
