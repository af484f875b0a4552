//! The controlled particle ensemble of the PDA feedback particle filter.
//!
//! Each particle follows
//!
//! ```text
//! dXⁱ = a(Xⁱ)dt + σ_B dBⁱ + Σ_m βᵐ K(Xⁱ) dIⁱ'ᵐ + ½σ_W² Σ_m (βᵐ)² K K′(Xⁱ) dt
//! dIⁱ'ᵐ = dZᵐ − [βᵐ/2 h(Xⁱ) + (1 − βᵐ/2) ĥ] dt
//! ```
//!
//! The ensemble is unweighted and never resampled. Within a step the gain
//! and `ĥ` are frozen at their start-of-step values, so the per-particle
//! updates are independent and run in parallel.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::AssociationBelief;
use crate::error::{Error, Result};
use crate::gain::{self, GainField};
use crate::models::{MeasurementBatch, ObsMap, TargetModel};
use crate::rng::Stream;

const PAR_MIN_LEN: usize = 256;

/// `N` unweighted particles in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    states: Vec<f64>,
    dim: usize,
}

impl ParticleEnsemble {
    pub fn new(states: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "particle array length must be a multiple of the dimension",
            ));
        }
        if states.len() / dim < 2 {
            return Err(Error::invalid("an ensemble needs at least 2 particles"));
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("particle {} is not finite", i / dim)));
        }
        Ok(ParticleEnsemble { states, dim })
    }

    pub fn from_scalars(xs: Vec<f64>) -> Result<Self> {
        ParticleEnsemble::new(xs, 1)
    }

    /// `n` i.i.d. draws from `N(mean, cov)`.
    pub fn from_gaussian(mean: &[f64], cov: &DMatrix<f64>, n: usize, stream: &mut Stream) -> Result<Self> {
        let d = mean.len();
        let root = covariance_root(cov, d)?;
        let mut states = vec![0.0; n * d];
        let mut z = vec![0.0; d];
        for row in states.chunks_mut(d) {
            stream.fill_normal(&mut z);
            for r in 0..d {
                let mut acc = mean[r];
                for c in 0..d {
                    acc += root[(r, c)] * z[c];
                }
                row[r] = acc;
            }
        }
        ParticleEnsemble::new(states, d)
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, f64> {
        self.states.chunks(self.dim)
    }

    /// All values of state component `k`.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.iter().map(|x| x[k]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for x in self.iter() {
            for (a, v) in m.iter_mut().zip(x) {
                *a += v;
            }
        }
        let inv = 1.0 / self.len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for x in self.iter() {
            for r in 0..d {
                let dr = x[r] - mean[r];
                for c in r..d {
                    cov[(r, c)] += dr * (x[c] - mean[c]);
                }
            }
        }
        let inv = 1.0 / (self.len() - 1) as f64;
        for r in 0..d {
            for c in r..d {
                let v = cov[(r, c)] * inv;
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
        }
        cov
    }
}

/// Symmetric square root of a PSD covariance (tolerates singular matrices).
pub(crate) fn covariance_root(cov: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::invalid("covariance shape does not match the mean"));
    }
    gain::check_psd(cov)?;
    let eig = SymmetricEigen::new(cov.clone());
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// Sample moments of an ensemble together with `ĥ = E[h]` and `ĥ² = E[h²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub h_mean: f64,
    pub h2_mean: f64,
}

impl MomentEstimates {
    /// `ĥ² − ĥ·ĥ`, the ensemble variance of `h(X)` (biased normalization).
    pub fn h_variance(&self) -> f64 {
        self.h2_mean - self.h_mean * self.h_mean
    }
}

pub fn estimate_moments(ens: &ParticleEnsemble, obs_map: &ObsMap) -> MomentEstimates {
    let n = ens.len() as f64;
    let (hs, hs2) = ens
        .iter()
        .map(|x| obs_map.eval(x))
        .fold((0.0, 0.0), |(a, b), h| (a + h, b + h * h));
    MomentEstimates {
        mean: ens.mean(),
        cov: ens.covariance(),
        h_mean: hs / n,
        h2_mean: hs2 / n,
    }
}

/// `dZᵐ − [βᵐ/2 h(x) + (1 − βᵐ/2) ĥ] dt`.
#[inline]
pub fn innovation(x: &[f64], beta_m: f64, h_mean: f64, dz_m: f64, dt: f64, obs_map: &ObsMap) -> f64 {
    innovation_from_h(obs_map.eval(x), beta_m, h_mean, dz_m, dt)
}

#[inline]
fn innovation_from_h(h: f64, beta_m: f64, h_mean: f64, dz_m: f64, dt: f64) -> f64 {
    let half = 0.5 * beta_m;
    dz_m - (half * h + (1.0 - half) * h_mean) * dt
}

/// How the gain is recomputed from the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// `Σ Hᵀ/σ_W²` with the sample covariance (linear observations only).
    Linear,
    /// First-integral solver (scalar states only).
    #[serde(rename = "integral-1d")]
    Integral1d,
    /// `Cov(X, h(X))/σ_W²`.
    ConstantApprox,
}

impl std::str::FromStr for GainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GainMode::Linear),
            "integral-1d" => Ok(GainMode::Integral1d),
            "constant-approx" => Ok(GainMode::ConstantApprox),
            _ => Err(Error::config(format!("unknown gain mode '{s}'"))),
        }
    }
}

/// Gain for the current ensemble. `bandwidth = None` selects
/// [`gain::default_gain_bandwidth`].
pub fn compute_gain(
    ens: &ParticleEnsemble,
    moments: &MomentEstimates,
    model: &TargetModel,
    mode: GainMode,
    bandwidth: Option<f64>,
) -> Result<GainField> {
    match mode {
        GainMode::Linear => {
            let row = model
                .obs_map
                .linear_row(ens.dim())
                .ok_or_else(|| Error::config("linear gain needs a linear observation map"))?;
            gain::gain_linear(&row, &moments.cov, model.obs_noise)
        }
        GainMode::Integral1d => {
            if ens.dim() != 1 {
                return Err(Error::config("integral-1d gain needs a scalar state"));
            }
            let xs = ens.states();
            let b = match bandwidth {
                Some(b) => b,
                None => gain::default_gain_bandwidth(xs),
            };
            if b > 0.0 {
                gain::gain_integral_1d(xs, &model.obs_map, model.obs_noise, b)
            } else {
                log::warn!("zero-spread ensemble; using zero gain");
                Ok(GainField::zero(1))
            }
        }
        GainMode::ConstantApprox => gain::gain_constant_approx(ens, &model.obs_map, model.obs_noise),
    }
}

/// Advances every particle by one Euler step of the controlled dynamics.
///
/// `noise` holds `N·d` standard normal draws in particle-major order.
/// The moments (`ĥ`) and `gain` are taken as frozen for the whole step.
pub fn fpf_step(
    ens: &ParticleEnsemble,
    model: &TargetModel,
    beliefs: &AssociationBelief,
    gain: &GainField,
    batch: &MeasurementBatch,
    dt: f64,
    noise: &[f64],
) -> Result<ParticleEnsemble> {
    let d = ens.dim();
    let n = ens.len();
    if model.dim() != d || gain.dim() != d {
        return Err(Error::invalid("model, gain and ensemble dimensions differ"));
    }
    if beliefs.num_channels() != batch.num_channels() {
        return Err(Error::invalid(format!(
            "belief covers {} channels, batch has {}",
            beliefs.num_channels(),
            batch.num_channels()
        )));
    }
    if noise.len() != n * d {
        return Err(Error::invalid("need N·d noise draws"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if !gain.is_finite() {
        return Err(Error::invalid("gain field is not finite"));
    }

    let h_mean = ens.iter().map(|x| model.obs_map.eval(x)).sum::<f64>() / n as f64;
    let terms = StepTerms::new(model, beliefs, batch, h_mean, dt);

    let mut out = vec![0.0; n * d];
    out.par_chunks_mut(d)
        .with_min_len(PAR_MIN_LEN)
        .zip(ens.states.par_chunks(d))
        .zip(noise.par_chunks(d))
        .for_each(|((next, x), xi)| {
            terms.advance(x, xi, gain, next, &mut vec![0.0; d]);
        });

    if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
        let index = bad / d;
        let m = terms.magnitudes(ens.particle(index), &noise[index * d..(index + 1) * d], gain);
        return Err(Error::NonFiniteParticle {
            index,
            drift: m[0],
            diffusion: m[1],
            control: m[2],
            correction: m[3],
        });
    }
    Ok(ParticleEnsemble { states: out, dim: d })
}

struct StepTerms<'a> {
    model: &'a TargetModel,
    betas: Vec<f64>,
    dz: &'a [f64],
    h_mean: f64,
    dt: f64,
    sqrt_dt: f64,
    beta_sq_sum: f64,
}

impl<'a> StepTerms<'a> {
    fn new(
        model: &'a TargetModel,
        beliefs: &AssociationBelief,
        batch: &'a MeasurementBatch,
        h_mean: f64,
        dt: f64,
    ) -> Self {
        let betas: Vec<f64> = (1..=batch.num_channels()).map(|m| beliefs.channel(m)).collect();
        let beta_sq_sum = betas.iter().fold(0.0, |acc, b| acc + b * b);
        StepTerms {
            model,
            betas,
            dz: &batch.channels,
            h_mean,
            dt,
            sqrt_dt: dt.sqrt(),
            beta_sq_sum,
        }
    }

    /// `Σ_m βᵐ dIᵐ`, the scalar multiplying the gain vector.
    #[inline]
    fn weighted_innovation(&self, h: f64) -> f64 {
        self.betas.iter().zip(self.dz).fold(0.0, |acc, (&b, &dz)| {
            acc + b * innovation_from_h(h, b, self.h_mean, dz, self.dt)
        })
    }

    #[inline]
    fn advance(&self, x: &[f64], xi: &[f64], gain: &GainField, next: &mut [f64], drift: &mut [f64]) {
        let model = self.model;
        model.drift.eval_into(x, drift);
        let h = model.obs_map.eval(x);
        let u = self.weighted_innovation(h);
        let s2 = model.obs_noise * model.obs_noise;
        match gain {
            GainField::Constant(k) => {
                for c in 0..x.len() {
                    let propagated = x[c] + drift[c] * self.dt + model.diffusion[c] * xi[c] * self.sqrt_dt;
                    next[c] = propagated + k[c] * u;
                }
            }
            GainField::Tabulated(t) => {
                let (k, dk) = t.value_and_slope(x[0]);
                let propagated = x[0] + drift[0] * self.dt + model.diffusion[0] * xi[0] * self.sqrt_dt;
                let correction = 0.5 * s2 * self.beta_sq_sum * k * dk * self.dt;
                next[0] = propagated + k * u + correction;
            }
        }
    }

    /// Norms of the drift, diffusion, control and correction increments.
    fn magnitudes(&self, x: &[f64], xi: &[f64], gain: &GainField) -> [f64; 4] {
        let d = x.len();
        let drift = self.model.drift.eval(x);
        let h = self.model.obs_map.eval(x);
        let u = self.weighted_innovation(h);
        let (k, dk) = gain.eval(x);
        let s2 = self.model.obs_noise * self.model.obs_noise;
        let norm = |f: &dyn Fn(usize) -> f64| (0..d).map(|c| f(c).powi(2)).sum::<f64>().sqrt();
        [
            norm(&|c| drift[c] * self.dt),
            norm(&|c| self.model.diffusion[c] * xi[c] * self.sqrt_dt),
            norm(&|c| k[c] * u),
            norm(&|c| 0.5 * s2 * self.beta_sq_sum * k[c] * dk * self.dt),
        ]
    }
}

/// Wong–Zakai correction `½σ_W² Σ_m (βᵐ)² K K′ dt` at `x`.
pub fn wong_zakai_term(
    model: &TargetModel,
    beliefs: &AssociationBelief,
    gain: &GainField,
    x: &[f64],
    dt: f64,
) -> Vec<f64> {
    let beta_sq_sum = (1..=beliefs.num_channels()).fold(0.0, |acc, m| acc + beliefs.channel(m).powi(2));
    let (k, dk) = gain.eval(x);
    let s2 = model.obs_noise * model.obs_noise;
    k.iter().map(|kc| 0.5 * s2 * beta_sq_sum * kc * dk * dt).collect()
}
