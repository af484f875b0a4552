//! Grid solver for the scalar modified Kushner–Stratonovich equation
//!
//! ```text
//! dp* = ℒ†p* dt + σ_W⁻² Σ_m βᵐ (h − ĥ)(dZᵐ − ĥ dt) p*
//! ```
//!
//! The forward operator is applied in flux form on uniform cells with
//! zero-flux walls; the measurement term as a positive multiplicative
//! factor followed by renormalization.

use serde::{Deserialize, Serialize};

use crate::association::AssociationBelief;
use crate::error::{Error, Result};
use crate::models::{MeasurementBatch, TargetModel};

/// Default cell count.
pub const DEFAULT_CELLS: usize = 400;
/// Default half-width of the grid in prior standard deviations.
pub const DEFAULT_EXTENT_SIGMAS: f64 = 8.0;
/// Mass allowed in the outermost 1% of cells on either side.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;
/// Largest explicit Courant-type number `dt(|a|/w + 2D/w²)` per sub-step.
const STABILITY: f64 = 0.9;

/// Probability mass on uniform cells `[lo + k w, lo + (k+1) w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub lo: f64,
    pub width: f64,
    pub mass: Vec<f64>,
}

impl GridDensity {
    pub fn new(lo: f64, width: f64, mass: Vec<f64>) -> Result<Self> {
        if !(width > 0.0) || mass.len() < 3 {
            return Err(Error::invalid("grid needs a positive width and at least 3 cells"));
        }
        if mass.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(Error::invalid("grid mass must be finite and non-negative"));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("grid mass is zero"));
        }
        let mass = mass.iter().map(|m| m / total).collect();
        Ok(GridDensity { lo, width, mass })
    }

    /// `N(mean, std²)` on `cells` cells spanning `mean ± extent·std`, with
    /// cell masses from the exact normal CDF.
    pub fn gaussian(mean: f64, std: f64, extent: f64, cells: usize) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::invalid("grid prior needs a positive std"));
        }
        let lo = mean - extent * std;
        let width = 2.0 * extent * std / cells as f64;
        let cdf = |x: f64| 0.5 * libm::erfc(-(x - mean) / (std * std::f64::consts::SQRT_2));
        let mass = (0..cells)
            .map(|k| cdf(lo + (k + 1) as f64 * width) - cdf(lo + k as f64 * width))
            .collect();
        GridDensity::new(lo, width, mass)
    }

    pub fn cells(&self) -> usize {
        self.mass.len()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.cells() as f64
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| m * self.center(k)).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.mass
            .iter()
            .enumerate()
            .map(|(k, m)| m * (self.center(k) - mu).powi(2))
            .sum()
    }

    /// Largest of the masses in the outermost 1% of cells on each side.
    pub fn boundary_mass(&self) -> f64 {
        let edge = (self.cells() / 100).max(1);
        let left: f64 = self.mass[..edge].iter().sum();
        let right: f64 = self.mass[self.cells() - edge..].iter().sum();
        left.max(right)
    }

    /// Bins points onto the cells; points outside fall into the end cells.
    pub fn histogram(&self, points: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut counts = vec![0.0; self.cells()];
        let mut n = 0.0;
        for x in points {
            let k = ((x - self.lo) / self.width)
                .floor()
                .clamp(0.0, (self.cells() - 1) as f64) as usize;
            counts[k] += 1.0;
            n += 1.0;
        }
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }

    /// `Σ_k |a_k − mass_k|`.
    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.mass.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Diagnostics of one grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStep {
    pub density: GridDensity,
    /// `|Σ mass − 1|` before renormalization.
    pub mass_drift: f64,
    pub substeps: usize,
}

/// One step: measurement factor with `ĥ` from the current grid, then the
/// forward operator over `dt` in as many explicit sub-steps as stability
/// requires.
pub fn ks_grid_step(
    density: &GridDensity,
    model: &TargetModel,
    beliefs: &AssociationBelief,
    batch: &MeasurementBatch,
    dt: f64,
) -> Result<GridStep> {
    if model.dim() != 1 {
        return Err(Error::invalid("the grid solver handles scalar states only"));
    }
    if beliefs.num_channels() != batch.num_channels() {
        return Err(Error::invalid("belief and batch channel counts differ"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let boundary = density.boundary_mass();
    if boundary > BOUNDARY_MASS_LIMIT {
        return Err(Error::GridTooSmall {
            boundary_mass: boundary,
            limit: BOUNDARY_MASS_LIMIT,
        });
    }

    let n = density.cells();
    let s2 = model.obs_noise * model.obs_noise;
    let hs: Vec<f64> = (0..n).map(|k| model.obs_map.eval(&[density.center(k)])).collect();
    let h_mean: f64 = density.mass.iter().zip(&hs).map(|(m, h)| m * h).sum();
    let mut mass = density.mass.clone();
    for (k, m) in mass.iter_mut().enumerate() {
        let dh = hs[k] - h_mean;
        let mut exponent = 0.0;
        for j in 1..=batch.num_channels() {
            let b = beliefs.channel(j);
            exponent += b * dh * (batch.channel(j) - h_mean * dt) / s2 - 0.5 * b * b * dh * dh * dt / s2;
        }
        *m *= exponent.exp();
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NumericalDomain {
            context: "grid measurement update",
            component: 0,
            value: total,
        });
    }
    mass.iter_mut().for_each(|m| *m /= total);

    let substeps = fokker_planck(&mut mass, density.lo, density.width, model, dt);
    let total: f64 = mass.iter().sum();
    let mass_drift = (total - 1.0).abs();
    log::trace!("grid mass drift before renormalization: {mass_drift:e}");
    mass.iter_mut().for_each(|m| *m = m.max(0.0) / total);
    Ok(GridStep {
        density: GridDensity {
            lo: density.lo,
            width: density.width,
            mass,
        },
        mass_drift,
        substeps,
    })
}

/// Explicit flux-form update of `∂p/∂t = −∂(a p)/∂x + D ∂²p/∂x²`,
/// `D = σ_B²/2`. Face values of `p` are central averages where the cell
/// Péclet number `|a| w / D` is at most 2, upwind otherwise.
fn fokker_planck(mass: &mut [f64], lo: f64, w: f64, model: &TargetModel, dt: f64) -> usize {
    let n = mass.len();
    let diff = 0.5 * model.diffusion[0] * model.diffusion[0];
    let faces: Vec<f64> = (1..n).map(|k| model.drift.eval(&[lo + k as f64 * w])[0]).collect();
    let amax = faces.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let rate = amax / w + 2.0 * diff / (w * w);
    let substeps = ((dt * rate / STABILITY).ceil() as usize).max(1);
    let h = dt / substeps as f64;
    let mut flux = vec![0.0; n - 1];
    for _ in 0..substeps {
        for (f, (k, &a)) in flux.iter_mut().zip(faces.iter().enumerate()) {
            // face between cells k and k+1; densities are mass / w
            let (pl, pr) = (mass[k] / w, mass[k + 1] / w);
            let face = if a.abs() * w <= 2.0 * diff {
                0.5 * (pl + pr)
            } else if a > 0.0 {
                pl
            } else {
                pr
            };
            *f = a * face - diff * (pr - pl) / w;
        }
        for k in 0..n {
            let out = if k < n - 1 { flux[k] } else { 0.0 };
            let inn = if k > 0 { flux[k - 1] } else { 0.0 };
            mass[k] -= h * (out - inn);
        }
    }
    substeps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DriftMap, ObsMap, ScalarMap};
    use crate::reference::kalman::{kalman_bucy_step, KalmanState};
    use crate::rng::{Entity, Stream};
    use nalgebra::DMatrix;

    fn no_measurement() -> (AssociationBelief, MeasurementBatch) {
        (
            AssociationBelief::new(vec![1.0, 0.0]).unwrap(),
            MeasurementBatch {
                time: 0.0,
                channels: vec![0.0],
            },
        )
    }

    /// Lyapunov moments of `dX = αX dt + σ dB`.
    fn lyapunov(m0: f64, v0: f64, alpha: f64, sigma: f64, t: f64) -> (f64, f64) {
        let e = (alpha * t).exp();
        (m0 * e, v0 * e * e + sigma * sigma * (e * e - 1.0) / (2.0 * alpha))
    }

    fn fp_moment_error(cells: usize, dt: f64) -> (f64, f64) {
        let (alpha, sigma, m0, s0) = (-0.5, 0.3, 0.4, 0.3);
        let model = TargetModel::scalar_linear(alpha, 1.0, sigma, 0.3).unwrap();
        let (b, z) = no_measurement();
        let mut g = GridDensity::gaussian(m0, s0, 8.0, cells).unwrap();
        let steps = (1.0 / dt).round() as usize;
        for _ in 0..steps {
            g = ks_grid_step(&g, &model, &b, &z, dt).unwrap().density;
        }
        let (m, v) = lyapunov(m0, s0 * s0, alpha, sigma, 1.0);
        (g.mean() - m, g.variance() - v)
    }

    #[test]
    fn fokker_planck_matches_lyapunov_moments() {
        let (em, ev) = fp_moment_error(400, 1e-4);
        assert!(
            em.abs() < 1e-3 && ev.abs() < 1e-3,
            "mean error {em:e}, variance error {ev:e}"
        );
    }

    #[test]
    fn fokker_planck_spatial_order() {
        // errors shrink like w² when the cell width is halved (time error kept negligible)
        let (_, coarse) = fp_moment_error(50, 2e-4);
        let (_, fine) = fp_moment_error(100, 2e-4);
        let ratio = coarse / fine;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn first_order_in_time() {
        // smooth observation path dZ = 0.2 dt; successive differences of the
        // posterior mean at T = 1 halve with dt
        let model = TargetModel::scalar_linear(-0.5, 1.0, 0.3, 0.3).unwrap();
        let beliefs = AssociationBelief::new(vec![0.0, 1.0]).unwrap();
        let mean_at = |dt: f64| {
            let mut g = GridDensity::gaussian(0.5, 0.5, 8.0, 200).unwrap();
            let batch = MeasurementBatch {
                time: 0.0,
                channels: vec![0.2 * dt],
            };
            for _ in 0..(1.0 / dt).round() as usize {
                g = ks_grid_step(&g, &model, &beliefs, &batch, dt).unwrap().density;
            }
            g.mean()
        };
        let (a, b, c) = (mean_at(0.02), mean_at(0.01), mean_at(0.005));
        let ratio = (a - b) / (b - c);
        assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn normalization_and_positivity() {
        let model = TargetModel::new(
            DriftMap::Scalar(ScalarMap::Cubic(-1.0)),
            vec![0.4],
            ObsMap::Scalar(ScalarMap::Linear(1.0)),
            0.3,
        )
        .unwrap();
        let beliefs = AssociationBelief::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut g = GridDensity::gaussian(0.5, 0.5, 8.0, 400).unwrap();
        let mut s = Stream::new(1, Entity::MeasurementNoise);
        for _ in 0..500 {
            let batch = MeasurementBatch {
                time: 0.0,
                channels: vec![0.3 * s.normal() * 0.1, 0.3 * s.normal() * 0.1],
            };
            let step = ks_grid_step(&g, &model, &beliefs, &batch, 0.01).unwrap();
            assert!(step.mass_drift < 1e-8, "drift {}", step.mass_drift);
            g = step.density;
            assert!((g.total() - 1.0).abs() < 1e-12);
            assert!(g.mass.iter().all(|m| *m >= 0.0));
        }
    }

    #[test]
    fn grid_tracks_kalman_bucy() {
        let (alpha, gamma, sb, sw) = (-0.5, 1.0, 0.3, 0.3);
        let model = TargetModel::scalar_linear(alpha, gamma, sb, sw).unwrap();
        let (m0, s0) = (0.5, 0.5);
        let mut g = GridDensity::gaussian(m0, s0, 8.0, 400).unwrap();
        let mut kb = KalmanState::new(vec![m0], DMatrix::from_element(1, 1, s0 * s0)).unwrap();
        let beliefs = AssociationBelief::new(vec![0.0, 1.0]).unwrap();
        let dt = 1e-3;
        let mut x = 0.8;
        let mut truth = Stream::new(3, Entity::TruthDynamics(0));
        let mut noise = Stream::new(3, Entity::MeasurementNoise);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let dz = gamma * x * dt + sw * dt.sqrt() * noise.normal();
            x += alpha * x * dt + sb * dt.sqrt() * truth.normal();
            let batch = MeasurementBatch {
                time: 0.0,
                channels: vec![dz],
            };
            g = ks_grid_step(&g, &model, &beliefs, &batch, dt).unwrap().density;
            kb = kalman_bucy_step(&kb, &model, Some(dz), dt).unwrap();
            worst = worst
                .max((g.mean() - kb.mean[0]).abs())
                .max((g.variance() - kb.cov[(0, 0)]).abs());
        }
        assert!(worst < 1e-2, "max moment gap {worst}");
    }

    #[test]
    fn boundary_mass_breach_is_an_error() {
        let model = TargetModel::scalar_linear(0.0, 1.0, 0.3, 0.3).unwrap();
        let (b, z) = no_measurement();
        let g = GridDensity::gaussian(0.0, 1.0, 2.0, 100).unwrap();
        assert!(matches!(
            ks_grid_step(&g, &model, &b, &z, 0.01),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn histogram_and_distance() {
        let g = GridDensity::new(0.0, 1.0, vec![0.25, 0.5, 0.25]).unwrap();
        let h = g.histogram([0.5, 1.5, 1.2, 2.9, -4.0].into_iter());
        assert_eq!(h, vec![0.4, 0.4, 0.2]);
        assert!((g.l1_distance(&h) - 0.3).abs() < 1e-15);
    }
}
