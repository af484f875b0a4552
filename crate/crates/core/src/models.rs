//! Ground-truth models: target state SDEs, the jump-Markov association
//! process and the multi-channel observation process.
//!
//! Everything here is a pure function of explicit state and explicit noise
//! draws. Time is discretized with Euler–Maruyama.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A named scalar map acting on the first state component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "coeff")]
pub enum ScalarMap {
    /// `x ↦ a·x`
    Linear(f64),
    /// `x ↦ a·x³`
    Cubic(f64),
    /// `x ↦ a`
    Constant(f64),
}

impl ScalarMap {
    /// Looks up a registry name: `identity`, `neg`, `cube`, `neg_cube`, `zero`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(ScalarMap::Linear(1.0)),
            "neg" => Some(ScalarMap::Linear(-1.0)),
            "cube" => Some(ScalarMap::Cubic(1.0)),
            "neg_cube" => Some(ScalarMap::Cubic(-1.0)),
            "zero" => Some(ScalarMap::Constant(0.0)),
            _ => None,
        }
    }

    pub const REGISTRY: [&'static str; 5] = ["identity", "neg", "cube", "neg_cube", "zero"];

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ScalarMap::Linear(a) => a * x,
            ScalarMap::Cubic(a) => a * x * x * x,
            ScalarMap::Constant(a) => a,
        }
    }
}

pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ObsFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Drift `a(·)` of the state SDE.
#[derive(Clone)]
pub enum DriftMap {
    /// `x ↦ F x`
    Linear(DMatrix<f64>),
    /// One-dimensional state, `x ↦ f(x)`.
    Scalar(ScalarMap),
    Custom(DriftFn),
}

impl DriftMap {
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftMap::Linear(f) => {
                let d = x.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += f[(r, c)] * x[c];
                    }
                    *o = acc;
                }
            }
            DriftMap::Scalar(map) => out[0] = map.eval(x[0]),
            DriftMap::Custom(f) => f(x, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }
}

impl fmt::Debug for DriftMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftMap::Linear(m) => f.debug_tuple("Linear").field(m).finish(),
            DriftMap::Scalar(s) => f.debug_tuple("Scalar").field(s).finish(),
            DriftMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Observation map `h(·)`.
#[derive(Clone)]
pub enum ObsMap {
    /// `x ↦ H x` for a row vector `H`.
    Linear(Vec<f64>),
    /// Acts on the first state component.
    Scalar(ScalarMap),
    Custom(ObsFn),
}

impl ObsMap {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ObsMap::Linear(row) => row.iter().zip(x).map(|(h, v)| h * v).sum(),
            ObsMap::Scalar(map) => map.eval(x[0]),
            ObsMap::Custom(f) => f(x),
        }
    }

    /// Observation row when the map is linear in the state.
    pub fn linear_row(&self, dim: usize) -> Option<Vec<f64>> {
        match self {
            ObsMap::Linear(row) => Some(row.clone()),
            ObsMap::Scalar(ScalarMap::Linear(a)) => {
                let mut row = vec![0.0; dim];
                row[0] = *a;
                Some(row)
            }
            _ => None,
        }
    }
}

impl fmt::Debug for ObsMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsMap::Linear(r) => f.debug_tuple("Linear").field(r).finish(),
            ObsMap::Scalar(s) => f.debug_tuple("Scalar").field(s).finish(),
            ObsMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// One target's state and observation SDEs:
/// `dX = a(X)dt + σ_B dB`, `dZ = h(X)dt + σ_W dW`.
#[derive(Debug, Clone)]
pub struct TargetModel {
    pub drift: DriftMap,
    /// Per-component diffusion scale σ_B.
    pub diffusion: Vec<f64>,
    pub obs_map: ObsMap,
    /// Observation noise scale σ_W.
    pub obs_noise: f64,
}

impl TargetModel {
    pub fn new(drift: DriftMap, diffusion: Vec<f64>, obs_map: ObsMap, obs_noise: f64) -> Result<Self> {
        let dim = diffusion.len();
        if dim == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if !(obs_noise > 0.0 && obs_noise.is_finite()) {
            return Err(Error::invalid(format!("obs_noise must be positive, got {obs_noise}")));
        }
        if diffusion.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("diffusion entries must be finite and >= 0"));
        }
        match &drift {
            DriftMap::Linear(f) if f.nrows() != dim || f.ncols() != dim => {
                return Err(Error::invalid(format!(
                    "drift matrix is {}x{}, state dimension is {dim}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            DriftMap::Scalar(_) if dim != 1 => {
                return Err(Error::invalid("scalar drift maps need a 1-D state"));
            }
            _ => {}
        }
        if let ObsMap::Linear(row) = &obs_map {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "observation row has {} entries, state dimension is {dim}",
                    row.len()
                )));
            }
        }
        Ok(TargetModel {
            drift,
            diffusion,
            obs_map,
            obs_noise,
        })
    }

    /// Scalar linear model `dX = αX dt + σ_B dB`, `dZ = γX dt + σ_W dW`.
    pub fn scalar_linear(alpha: f64, gamma: f64, sigma_b: f64, sigma_w: f64) -> Result<Self> {
        TargetModel::new(
            DriftMap::Scalar(ScalarMap::Linear(alpha)),
            vec![sigma_b],
            ObsMap::Scalar(ScalarMap::Linear(gamma)),
            sigma_w,
        )
    }

    /// White-noise acceleration model: position/velocity state, position observed.
    pub fn white_noise_acceleration(accel_noise: f64, sigma_w: f64) -> Result<Self> {
        TargetModel::new(
            DriftMap::Linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])),
            vec![0.0, accel_noise],
            ObsMap::Linear(vec![1.0, 0.0]),
            sigma_w,
        )
    }

    pub fn dim(&self) -> usize {
        self.diffusion.len()
    }

    /// `(F, H)` when both drift and observation are linear.
    pub fn linear_parts(&self) -> Option<(DMatrix<f64>, Vec<f64>)> {
        let d = self.dim();
        let f = match &self.drift {
            DriftMap::Linear(f) => f.clone(),
            DriftMap::Scalar(ScalarMap::Linear(a)) => DMatrix::from_element(1, 1, *a),
            _ => return None,
        };
        Some((f, self.obs_map.linear_row(d)?))
    }
}

/// Euler–Maruyama step `x + a(x)dt + σ_B ⊙ ξ √dt` for standard normal `ξ`.
pub fn step_truth(model: &TargetModel, state: &[f64], dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let d = model.dim();
    if state.len() != d || noise.len() != d {
        return Err(Error::invalid(format!(
            "state/noise length {}/{} does not match dimension {d}",
            state.len(),
            noise.len()
        )));
    }
    ensure_finite("state", state)?;
    let drift = model.drift.eval(state);
    ensure_finite("drift", &drift)?;
    let sqrt_dt = dt.sqrt();
    let next: Vec<f64> = (0..d)
        .map(|k| state[k] + drift[k] * dt + model.diffusion[k] * noise[k] * sqrt_dt)
        .collect();
    ensure_finite("propagated state", &next)?;
    Ok(next)
}

/// Continuous-time Markov chain on `{0, …, n−1}` with uniform off-diagonal
/// intensity `rate/(n−1)`.
///
/// For the single-target model `n = M+1` (state 0 is "not detected") so the
/// off-diagonal intensity is `c/M`; for the two-target model `n = 2` and it
/// is `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProcess {
    pub num_states: usize,
    pub rate: f64,
    pub current: usize,
}

impl AssociationProcess {
    pub fn new(num_states: usize, rate: f64, current: usize) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::invalid("association chain needs at least 2 states"));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("association rate must be >= 0, got {rate}")));
        }
        if current >= num_states {
            return Err(Error::invalid(format!("state {current} outside 0..{num_states}")));
        }
        Ok(AssociationProcess {
            num_states,
            rate,
            current,
        })
    }

    /// Intensity of jumping to one specific other state.
    pub fn off_diagonal_rate(&self) -> f64 {
        self.rate / (self.num_states - 1) as f64
    }

    /// Intensity matrix Λ: `−c` on the diagonal, `c/(n−1)` elsewhere.
    pub fn intensity_matrix(&self) -> DMatrix<f64> {
        intensity_matrix(self.num_states, self.rate)
    }

    /// Probability of being in a specific *other* state after `dt`.
    ///
    /// The chain is symmetric, so the transition matrix `exp(Λ dt)` has the
    /// closed form used here; it is valid for any `dt` and needs no sub-steps.
    pub fn move_probability(&self, dt: f64) -> f64 {
        transition_probabilities(self.num_states, self.rate, dt).1
    }
}

pub fn intensity_matrix(num_states: usize, rate: f64) -> DMatrix<f64> {
    let off = rate / (num_states - 1) as f64;
    DMatrix::from_fn(num_states, num_states, |r, c| if r == c { -rate } else { off })
}

/// `(stay, move-to-one-specific-other)` entries of `exp(Λ dt)`.
pub fn transition_probabilities(num_states: usize, rate: f64, dt: f64) -> (f64, f64) {
    let n = num_states as f64;
    let decay = (-rate * n / (n - 1.0) * dt).exp();
    let stay = 1.0 / n + (1.0 - 1.0 / n) * decay;
    let mv = (1.0 - decay) / n;
    (stay, mv)
}

/// Advances the association chain by `dt` using one uniform draw `u ∈ [0,1)`.
pub fn step_association(proc: &AssociationProcess, dt: f64, u: f64) -> usize {
    if proc.rate == 0.0 {
        return proc.current;
    }
    let n = proc.num_states;
    let (_, mv) = transition_probabilities(n, proc.rate, dt);
    let leave = mv * (n - 1) as f64;
    if u >= leave {
        return proc.current;
    }
    let slot = ((u / mv) as usize).min(n - 2);
    if slot >= proc.current {
        slot + 1
    } else {
        slot
    }
}

/// Ground truth at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub time: f64,
    pub targets: Vec<Vec<f64>>,
    /// Single target: `A ∈ {0, …, M}` (0 = not detected).
    /// Two targets: `A ∈ {1, 2}` (2 swaps the channels).
    pub association: usize,
}

/// Measurement increments `dZ^1 … dZ^M` over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub time: f64,
    pub channels: Vec<f64>,
}

impl MeasurementBatch {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Increment on channel `m ∈ {1, …, M}`.
    #[inline]
    pub fn channel(&self, m: usize) -> f64 {
        self.channels[m - 1]
    }
}

/// Which target's signal lands on each channel under the truth association.
///
/// Single target: channel `m` carries the target iff `A = m`.
/// Two targets: `Ψ(1)` is the identity, `Ψ(2)` swaps the channels.
pub fn channel_sources(num_targets: usize, channels: usize, association: usize) -> Vec<Option<usize>> {
    match num_targets {
        1 => (1..=channels).map(|m| (association == m).then_some(0)).collect(),
        _ => {
            if association == 2 {
                vec![Some(1), Some(0)]
            } else {
                vec![Some(0), Some(1)]
            }
        }
    }
}

/// `dZ^m = signal_m·dt + σ_W ξ_m √dt` with the signal routed by the truth
/// association (indicator model for one target, permutation for two).
pub fn emit_measurements(
    models: &[TargetModel],
    truth: &TruthState,
    channels: usize,
    dt: f64,
    noise: &[f64],
) -> Result<MeasurementBatch> {
    validate_emit(models, truth, channels, noise)?;
    let sqrt_dt = dt.sqrt();
    let sources = channel_sources(models.len(), channels, truth.association);
    let out = sources
        .iter()
        .enumerate()
        .map(|(m, src)| {
            let signal = src.map_or(0.0, |n| models[n].obs_map.eval(&truth.targets[n]));
            let sigma = models[m.min(models.len() - 1)].obs_noise;
            signal * dt + sigma * noise[m] * sqrt_dt
        })
        .collect();
    Ok(MeasurementBatch {
        time: truth.time,
        channels: out,
    })
}

/// Single-target measurements where every channel not carrying the target is
/// a clutter point drawn uniformly from `[region.0, region.1)` (in units of
/// `dZ/dt`), so its increment is `y·dt`.
pub fn emit_clutter_measurements(
    model: &TargetModel,
    truth: &TruthState,
    channels: usize,
    dt: f64,
    noise: &[f64],
    region: (f64, f64),
    uniforms: &[f64],
) -> Result<MeasurementBatch> {
    validate_emit(std::slice::from_ref(model), truth, channels, noise)?;
    if uniforms.len() != channels {
        return Err(Error::invalid("need one uniform draw per channel"));
    }
    let sqrt_dt = dt.sqrt();
    let out = (1..=channels)
        .map(|m| {
            if truth.association == m {
                model.obs_map.eval(&truth.targets[0]) * dt + model.obs_noise * noise[m - 1] * sqrt_dt
            } else {
                (region.0 + (region.1 - region.0) * uniforms[m - 1]) * dt
            }
        })
        .collect();
    Ok(MeasurementBatch {
        time: truth.time,
        channels: out,
    })
}

fn validate_emit(models: &[TargetModel], truth: &TruthState, channels: usize, noise: &[f64]) -> Result<()> {
    match models.len() {
        1 => {
            if truth.association > channels {
                return Err(Error::invalid(format!(
                    "association {} outside 0..={channels}",
                    truth.association
                )));
            }
        }
        2 => {
            if channels != 2 || !(1..=2).contains(&truth.association) {
                return Err(Error::invalid(
                    "two-target model needs 2 channels and association in {1,2}",
                ));
            }
        }
        n => return Err(Error::invalid(format!("{n} targets not supported"))),
    }
    if truth.targets.len() != models.len() {
        return Err(Error::invalid("truth/model target count mismatch"));
    }
    if noise.len() != channels {
        return Err(Error::invalid("need one noise draw per channel"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Entity, Stream};

    fn zero_model() -> TargetModel {
        TargetModel::new(
            DriftMap::Scalar(ScalarMap::Constant(0.0)),
            vec![0.0],
            ObsMap::Scalar(ScalarMap::Linear(1.0)),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let x = step_truth(&zero_model(), &[3.25], 0.01, &[1.7]).unwrap();
        assert_eq!(x, vec![3.25]);
    }

    #[test]
    fn white_noise_acceleration_deterministic_step() {
        let m = TargetModel::white_noise_acceleration(1.0, 0.06).unwrap();
        let x = step_truth(&m, &[0.0, 6.0], 0.01, &[0.0, 0.0]).unwrap();
        assert!((x[0] - 0.06).abs() < 1e-15);
        assert_eq!(x[1], 6.0);
    }

    #[test]
    fn brownian_increment_variance() {
        let m = TargetModel::new(
            DriftMap::Scalar(ScalarMap::Constant(0.0)),
            vec![1.0],
            ObsMap::Scalar(ScalarMap::Linear(1.0)),
            1.0,
        )
        .unwrap();
        let dt = 0.01;
        let mut s = Stream::new(11, Entity::Aux(0));
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| step_truth(&m, &[0.0], dt, &[s.normal()]).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / dt - 1.0).abs() < 0.05, "var/dt = {}", var / dt);
    }

    #[test]
    fn non_finite_drift_is_reported() {
        let m = TargetModel::new(
            DriftMap::Custom(Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = f64::NAN)),
            vec![0.0],
            ObsMap::Scalar(ScalarMap::Linear(1.0)),
            1.0,
        )
        .unwrap();
        match step_truth(&m, &[0.0], 0.1, &[0.0]) {
            Err(Error::NumericalDomain { context, component, .. }) => {
                assert_eq!(context, "drift");
                assert_eq!(component, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn model_validation() {
        assert!(TargetModel::scalar_linear(-1.0, 1.0, 0.3, 0.0).is_err());
        assert!(TargetModel::scalar_linear(-1.0, 1.0, -0.3, 0.3).is_err());
        assert!(TargetModel::new(
            DriftMap::Linear(DMatrix::zeros(3, 3)),
            vec![0.0, 1.0],
            ObsMap::Linear(vec![1.0, 0.0]),
            1.0
        )
        .is_err());
    }

    #[test]
    fn zero_rate_never_jumps() {
        let p = AssociationProcess::new(5, 0.0, 3).unwrap();
        for u in [0.0, 1e-9, 0.5, 0.999] {
            assert_eq!(step_association(&p, 10.0, u), 3);
        }
    }

    #[test]
    fn jump_targets_cover_every_other_state() {
        let p = AssociationProcess::new(5, 2.0, 2).unwrap();
        let (_, mv) = transition_probabilities(5, 2.0, 0.1);
        let mut seen = Vec::new();
        for k in 0..4 {
            seen.push(step_association(&p, 0.1, (k as f64 + 0.5) * mv));
        }
        assert_eq!(seen, vec![0, 1, 3, 4]);
        assert_eq!(step_association(&p, 0.1, 4.0 * mv + 1e-12), 2);
    }

    #[test]
    fn transition_rows_sum_to_one() {
        for n in [2, 3, 5] {
            for dt in [1e-4, 0.01, 1.0, 50.0] {
                let (stay, mv) = transition_probabilities(n, 1.3, dt);
                assert!((stay + (n - 1) as f64 * mv - 1.0).abs() < 1e-14);
            }
        }
        // first-order behaviour: move ≈ (c/M) dt
        let (_, mv) = transition_probabilities(5, 1.0, 1e-6);
        assert!((mv / 1e-6 - 0.25).abs() < 1e-5);
    }

    #[test]
    fn intensity_rows_sum_to_zero() {
        let l = intensity_matrix(5, 2.0);
        for r in 0..5 {
            assert!(l.row(r).sum().abs() < 1e-15);
            assert_eq!(l[(r, r)], -2.0);
        }
        assert_eq!(l[(0, 1)], 0.5);
        assert_eq!(intensity_matrix(2, 3.0)[(0, 1)], 3.0);
    }

    #[test]
    fn pda_chain_occupancy_is_uniform() {
        let mut p = AssociationProcess::new(5, 1.0, 0).unwrap();
        let mut s = Stream::new(3, Entity::Association);
        let steps = 1_000_000;
        let mut counts = [0usize; 5];
        for _ in 0..steps {
            p.current = step_association(&p, 0.5, s.uniform());
            counts[p.current] += 1;
        }
        for c in counts {
            let frac = c as f64 / steps as f64;
            assert!((frac - 0.2).abs() / 0.2 < 0.02, "occupancy {frac}");
        }
    }

    #[test]
    fn two_state_holding_time() {
        let c = 2.0;
        let dt = 1e-3;
        let mut p = AssociationProcess::new(2, c, 0).unwrap();
        let mut s = Stream::new(5, Entity::Association);
        let mut holds = Vec::new();
        let mut since = 0usize;
        while holds.len() < 20_000 {
            let next = step_association(&p, dt, s.uniform());
            since += 1;
            if next != p.current {
                holds.push(since as f64 * dt);
                since = 0;
            }
            p.current = next;
        }
        let mean = holds.iter().sum::<f64>() / holds.len() as f64;
        assert!((mean * c - 1.0).abs() < 0.05, "mean holding time {mean}");
    }

    #[test]
    fn indicator_routing_without_noise() {
        let m = TargetModel::new(
            DriftMap::Scalar(ScalarMap::Constant(0.0)),
            vec![0.0],
            ObsMap::Scalar(ScalarMap::Cubic(1.0)),
            1e-300,
        )
        .unwrap();
        let truth = TruthState {
            time: 0.0,
            targets: vec![vec![2.0]],
            association: 1,
        };
        let b = emit_measurements(&[m], &truth, 2, 0.1, &[0.0, 0.0]).unwrap();
        assert_eq!(b.channels, vec![8.0 * 0.1, 0.0]);
    }

    #[test]
    fn permutation_swaps_channels() {
        let m = TargetModel::scalar_linear(0.0, 1.0, 0.0, 1e-300).unwrap();
        let mut truth = TruthState {
            time: 0.0,
            targets: vec![vec![1.5], vec![-4.0]],
            association: 2,
        };
        let dt = 0.01;
        let b = emit_measurements(&[m.clone(), m.clone()], &truth, 2, dt, &[0.0, 0.0]).unwrap();
        assert_eq!(b.channels, vec![-4.0 * dt, 1.5 * dt]);
        truth.association = 1;
        let b = emit_measurements(&[m.clone(), m], &truth, 2, dt, &[0.0, 0.0]).unwrap();
        assert_eq!(b.channels, vec![1.5 * dt, -4.0 * dt]);
    }

    #[test]
    fn undetected_channels_are_pure_noise() {
        let m = TargetModel::scalar_linear(0.0, 1.0, 0.0, 1.0).unwrap();
        let truth = TruthState {
            time: 0.0,
            targets: vec![vec![5.0]],
            association: 0,
        };
        let dt = 0.01;
        let mut s = Stream::new(9, Entity::MeasurementNoise);
        let n = 100_000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let b = emit_measurements(std::slice::from_ref(&m), &truth, 3, dt, &s.normals(3)).unwrap();
            for k in 0..3 {
                sums[k] += b.channels[k];
                sq[k] += b.channels[k] * b.channels[k];
            }
        }
        for k in 0..3 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt());
            assert!((var / dt - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn clutter_channels_stay_in_region() {
        let m = TargetModel::white_noise_acceleration(1.0, 0.06).unwrap();
        let truth = TruthState {
            time: 0.0,
            targets: vec![vec![3.0, 6.0]],
            association: 2,
        };
        let dt = 0.01;
        let b = emit_clutter_measurements(&m, &truth, 4, dt, &[0.0; 4], (-2.0, 8.0), &[0.0, 0.5, 0.25, 0.999]).unwrap();
        assert_eq!(b.channels[1], 3.0 * dt);
        assert!((b.channels[0] / dt + 2.0).abs() < 1e-12);
        assert!((b.channels[2] / dt - 0.5).abs() < 1e-12);
        assert!(b.channels[3] / dt < 8.0);
    }

    #[test]
    fn linear_euler_is_second_order_locally() {
        // zero-diffusion white-noise acceleration: exp(F dt) x = (p + v dt, v), Euler is exact
        let m = TargetModel::white_noise_acceleration(0.0, 1.0).unwrap();
        let x = step_truth(&m, &[1.0, -2.0], 0.25, &[0.3, 0.3]).unwrap();
        assert_eq!(x, vec![0.5, -2.0]);

        // rotation dynamics: local error of one Euler step scales as dt^2
        let rot = TargetModel::new(
            DriftMap::Linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
            vec![0.0, 0.0],
            ObsMap::Linear(vec![1.0, 0.0]),
            1.0,
        )
        .unwrap();
        let err = |dt: f64| {
            let x = step_truth(&rot, &[1.0, 0.0], dt, &[0.0, 0.0]).unwrap();
            ((x[0] - dt.cos()).powi(2) + (x[1] + dt.sin()).powi(2)).sqrt()
        };
        let c1 = err(0.02) / 0.02f64.powi(2);
        let c2 = err(0.01) / 0.01f64.powi(2);
        assert!((c1 / c2 - 1.0).abs() < 0.05, "C estimates {c1} {c2}");
    }
}
