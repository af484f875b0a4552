//! Declarative scenario description, parsed from a single JSON document.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpf::GainMode;
use crate::gain;
use crate::models::{DriftMap, ObsMap, ScalarMap, TargetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    PdaClutter,
    JpdaTwoTarget,
    #[serde(rename = "linear-1d")]
    Linear1d,
    Custom,
}

impl ScenarioKind {
    pub fn num_targets(self) -> usize {
        match self {
            ScenarioKind::JpdaTwoTarget => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::PdaClutter => "pda-clutter",
            ScenarioKind::JpdaTwoTarget => "jpda-two-target",
            ScenarioKind::Linear1d => "linear-1d",
            ScenarioKind::Custom => "custom",
        }
    }
}

/// Drift `a(·)`: a matrix `F` (so `a(x) = Fx`) or a registry map on a
/// scalar state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DriftSpec {
    Matrix {
        rows: Vec<Vec<f64>>,
    },
    Named {
        name: String,
        #[serde(default = "one")]
        scale: f64,
    },
}

/// Observation map `h(·)`: a row `H` or a registry map on a scalar state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ObsSpec {
    Row {
        h: Vec<f64>,
    },
    Named {
        name: String,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub obs: ObsSpec,
    pub sigma_b: Vec<f64>,
    pub sigma_w: f64,
}

fn named(name: &str, scale: f64) -> Result<ScalarMap> {
    let base = ScalarMap::named(name).ok_or_else(|| {
        Error::config(format!(
            "unknown map '{name}' (registry: {})",
            ScalarMap::REGISTRY.join(", ")
        ))
    })?;
    Ok(match base {
        ScalarMap::Linear(a) => ScalarMap::Linear(a * scale),
        ScalarMap::Cubic(a) => ScalarMap::Cubic(a * scale),
        ScalarMap::Constant(a) => ScalarMap::Constant(a * scale),
    })
}

impl ModelSpec {
    pub fn build(&self) -> Result<TargetModel> {
        let d = self.sigma_b.len();
        let drift = match &self.drift {
            DriftSpec::Matrix { rows } => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::config(format!("drift matrix must be {d}x{d}")));
                }
                DriftMap::Linear(DMatrix::from_fn(d, d, |r, c| rows[r][c]))
            }
            DriftSpec::Named { name, scale } => DriftMap::Scalar(named(name, *scale)?),
        };
        let obs = match &self.obs {
            ObsSpec::Row { h } => ObsMap::Linear(h.clone()),
            ObsSpec::Named { name, scale } => {
                if d != 1 {
                    return Err(Error::config("named observation maps need a scalar state"));
                }
                ObsMap::Scalar(named(name, *scale)?)
            }
        };
        TargetModel::new(drift, self.sigma_b.clone(), obs, self.sigma_w).map_err(|e| Error::config(e.to_string()))
    }
}

/// What non-target channels carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClutterSpec {
    /// Pure observation noise `σ_W dW`.
    Noise,
    /// A point `y` uniform on `[lo, hi)`, reported as the increment `y·dt`.
    Uniform { lo: f64, hi: f64 },
}

/// Truth association for single-target scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detection {
    /// Chain over `0..=M`, state 0 meaning no channel carries the target.
    Chain,
    /// Chain over `1..=M`: one channel always carries the target.
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssocMode {
    /// The initial belief is held for the whole run.
    Fixed,
    Sde,
    Bayes,
}

impl std::str::FromStr for AssocMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AssocMode::Fixed),
            "sde" => Ok(AssocMode::Sde),
            "bayes" => Ok(AssocMode::Bayes),
            _ => Err(Error::config(format!("unknown association mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    Kalman,
    Grid,
    Wonham,
}

impl std::str::FromStr for Oracle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalman" => Ok(Oracle::Kalman),
            "grid" => Ok(Oracle::Grid),
            "wonham" => Ok(Oracle::Wonham),
            _ => Err(Error::config(format!("unknown oracle '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub model: ModelSpec,
    /// Number of measurement channels `M`.
    pub channels: usize,
    /// Association jump rate `c`.
    pub rate: f64,
    #[serde(default = "default_clutter")]
    pub clutter: ClutterSpec,
    #[serde(default = "default_detection")]
    pub detection: Detection,
    pub dt: f64,
    pub horizon: f64,
    pub particles: usize,
    /// Initial truth per target; drawn from the prior when absent.
    #[serde(default)]
    pub truth_init: Option<Vec<Vec<f64>>>,
    /// Prior mean per target.
    pub prior_mean: Vec<Vec<f64>>,
    /// Prior covariance (rows), shared by all targets.
    pub prior_cov: Vec<Vec<f64>>,
    /// Initial β (length `M+1`) or π (length 2). When absent: uniform, with
    /// `β⁰ = 0` under [`Detection::Always`].
    #[serde(default)]
    pub initial_association: Option<Vec<f64>>,
    pub seed: u64,
    pub association: AssocMode,
    pub gain: GainMode,
    /// Kernel bandwidth for the integral gain; the default rule when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub oracles: Vec<Oracle>,
    #[serde(default = "default_cells")]
    pub grid_cells: usize,
    #[serde(default = "default_extent")]
    pub grid_extent_sigmas: f64,
}

fn default_clutter() -> ClutterSpec {
    ClutterSpec::Noise
}
fn default_detection() -> Detection {
    Detection::Chain
}
fn default_cells() -> usize {
    crate::reference::grid::DEFAULT_CELLS
}
fn default_extent() -> f64 {
    crate::reference::grid::DEFAULT_EXTENT_SIGMAS
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("scenario json: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn prior_cov_matrix(&self) -> DMatrix<f64> {
        let d = self.prior_cov.len();
        DMatrix::from_fn(d, d, |r, c| self.prior_cov[r][c])
    }

    /// Starting β or π.
    pub fn initial_belief(&self) -> Vec<f64> {
        match &self.initial_association {
            Some(v) => v.clone(),
            None if self.kind == ScenarioKind::JpdaTwoTarget => vec![0.5, 0.5],
            None if self.detection == Detection::Always => {
                let mut b = vec![1.0 / self.channels as f64; self.channels + 1];
                b[0] = 0.0;
                b
            }
            None => vec![1.0 / (self.channels + 1) as f64; self.channels + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be at least dt", self.horizon));
        }
        if self.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.particles));
        }
        if self.channels == 0 {
            return bad("need at least one channel".into());
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return bad(format!("rate must be >= 0, got {}", self.rate));
        }
        let model = self.model.build()?;
        let d = model.dim();
        let targets = self.kind.num_targets();
        if matches!(self.kind, ScenarioKind::PdaClutter | ScenarioKind::JpdaTwoTarget) && d != 2 {
            return bad(format!("{} needs a position/velocity state", self.kind.name()));
        }
        if self.kind == ScenarioKind::Linear1d && (d != 1 || model.linear_parts().is_none()) {
            return bad("linear-1d needs a scalar linear model".into());
        }
        if self.kind == ScenarioKind::JpdaTwoTarget && self.channels != 2 {
            return bad("jpda-two-target needs exactly 2 channels".into());
        }
        if self.prior_mean.len() != targets || self.prior_mean.iter().any(|m| m.len() != d) {
            return bad(format!("prior_mean needs {targets} vector(s) of length {d}"));
        }
        if let Some(t) = &self.truth_init {
            if t.len() != targets || t.iter().any(|m| m.len() != d) {
                return bad(format!("truth_init needs {targets} vector(s) of length {d}"));
            }
        }
        if self.prior_cov.len() != d || self.prior_cov.iter().any(|r| r.len() != d) {
            return bad(format!("prior_cov must be {d}x{d}"));
        }
        gain::check_psd(&self.prior_cov_matrix()).map_err(|e| Error::config(format!("prior_cov: {e}")))?;
        let belief = self.initial_belief();
        let want = if targets == 2 { 2 } else { self.channels + 1 };
        if belief.len() != want
            || belief.iter().any(|b| !(0.0..=1.0).contains(b))
            || (belief.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "initial_association must be a probability vector of length {want}"
            ));
        }
        if let ClutterSpec::Uniform { lo, hi } = self.clutter {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return bad("uniform clutter needs lo < hi".into());
            }
            if targets == 2 {
                return bad("uniform clutter applies to single-target scenarios".into());
            }
        }
        if self.detection == Detection::Always && self.channels == 1 && self.rate > 0.0 {
            log::debug!("one channel always detected: the truth chain has a single state");
        }
        match self.gain {
            GainMode::Linear if model.obs_map.linear_row(d).is_none() => {
                return bad("linear gain needs a linear observation map".into())
            }
            GainMode::Integral1d if d != 1 => return bad("integral-1d gain needs a scalar state".into()),
            _ => {}
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad("bandwidth must be positive".into());
            }
        }
        for o in &self.oracles {
            match o {
                Oracle::Kalman if model.linear_parts().is_none() => {
                    return bad("the kalman oracle needs a linear model".into())
                }
                Oracle::Grid if d != 1 || targets != 1 => {
                    return bad("the grid oracle needs a single scalar target".into())
                }
                _ => {}
            }
        }
        if self.oracles.contains(&Oracle::Grid) && self.grid_cells < 10 {
            return bad("grid_cells must be at least 10".into());
        }
        Ok(())
    }

    /// Sorted and deduplicated oracle list.
    pub fn oracle_set(&self) -> Vec<Oracle> {
        let mut v = self.oracles.clone();
        v.sort();
        v.dedup();
        v
    }
}
