//! Bundled scenarios. The same documents ship as JSON under `scenarios/`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fpf::GainMode;
use crate::harness::config::{
    AssocMode, ClutterSpec, Detection, DriftSpec, ModelSpec, ObsSpec, Oracle, ScenarioConfig, ScenarioKind,
};

pub const NAMES: [&str; 3] = ["pda-clutter", "jpda-two-target", "linear-1d"];

fn white_noise_acceleration(accel: f64, sigma_w: f64) -> ModelSpec {
    ModelSpec {
        drift: DriftSpec::Matrix {
            rows: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        },
        obs: ObsSpec::Row { h: vec![1.0, 0.0] },
        sigma_b: vec![0.0, accel],
        sigma_w,
    }
}

/// Single target in clutter: one channel carries the target, three carry
/// noise only.
pub fn pda_clutter() -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::PdaClutter,
        model: white_noise_acceleration(1.0, 0.06),
        channels: 4,
        rate: 1.0,
        clutter: ClutterSpec::Noise,
        detection: Detection::Always,
        dt: 0.01,
        horizon: 1.0,
        particles: 1000,
        truth_init: Some(vec![vec![0.0, 6.0]]),
        prior_mean: vec![vec![0.0, 6.0]],
        prior_cov: vec![vec![0.01, 0.0], vec![0.0, 0.25]],
        initial_association: None,
        seed: 0,
        association: AssocMode::Bayes,
        gain: GainMode::Linear,
        bandwidth: None,
        oracles: vec![Oracle::Kalman, Oracle::Wonham],
        grid_cells: crate::reference::grid::DEFAULT_CELLS,
        grid_extent_sigmas: crate::reference::grid::DEFAULT_EXTENT_SIGMAS,
    }
}

/// Two targets crossing, observed through a permutation of two channels.
pub fn jpda_two_target() -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::JpdaTwoTarget,
        model: white_noise_acceleration(2.0, 0.005),
        channels: 2,
        rate: 0.0,
        clutter: ClutterSpec::Noise,
        detection: Detection::Always,
        dt: 0.001,
        horizon: 1.0,
        particles: 1000,
        truth_init: Some(vec![vec![1.0, -3.5], vec![-1.0, 3.5]]),
        prior_mean: vec![vec![1.0, -3.5], vec![-1.0, 3.5]],
        prior_cov: vec![vec![0.0025, 0.0], vec![0.0, 0.25]],
        initial_association: Some(vec![0.5, 0.5]),
        seed: 0,
        association: AssocMode::Sde,
        gain: GainMode::Linear,
        bandwidth: None,
        oracles: vec![Oracle::Kalman, Oracle::Wonham],
        grid_cells: crate::reference::grid::DEFAULT_CELLS,
        grid_extent_sigmas: crate::reference::grid::DEFAULT_EXTENT_SIGMAS,
    }
}

/// Scalar Ornstein–Uhlenbeck target with two channels.
pub fn linear_1d() -> ScenarioConfig {
    ScenarioConfig {
        kind: ScenarioKind::Linear1d,
        model: ModelSpec {
            drift: DriftSpec::Matrix { rows: vec![vec![-0.5]] },
            obs: ObsSpec::Row { h: vec![1.0] },
            sigma_b: vec![0.3],
            sigma_w: 0.3,
        },
        channels: 2,
        rate: 1.0,
        clutter: ClutterSpec::Noise,
        detection: Detection::Chain,
        dt: 0.001,
        horizon: 2.0,
        particles: 1000,
        truth_init: None,
        prior_mean: vec![vec![0.5]],
        prior_cov: vec![vec![0.25]],
        initial_association: None,
        seed: 0,
        association: AssocMode::Sde,
        gain: GainMode::Linear,
        bandwidth: None,
        oracles: vec![Oracle::Kalman, Oracle::Grid, Oracle::Wonham],
        grid_cells: crate::reference::grid::DEFAULT_CELLS,
        grid_extent_sigmas: crate::reference::grid::DEFAULT_EXTENT_SIGMAS,
    }
}

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    match name {
        "pda-clutter" => Some(pda_clutter()),
        "jpda-two-target" => Some(jpda_two_target()),
        "linear-1d" => Some(linear_1d()),
        _ => None,
    }
}

/// Resolves `--scenario`: an existing file is parsed, otherwise the
/// argument must name a bundled scenario.
pub fn load(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return ScenarioConfig::from_json(&text);
    }
    bundled(arg).ok_or_else(|| {
        Error::config(format!(
            "'{arg}' is neither a file nor a bundled scenario ({})",
            NAMES.join(", ")
        ))
    })
}
