//! Gain function `K(x, t)` of the feedback particle filter.
//!
//! Three constructions are provided:
//!
//! * [`gain_linear`]: the closed form `Σ Hᵀ / σ_W²` for linear observations
//!   of a Gaussian posterior.
//! * [`gain_integral_1d`]: a scalar-state solver for the Euler–Lagrange
//!   boundary-value problem through its first integral
//!   `K(x) p(x) = σ_W⁻² ∫_x^∞ (h(y) − ĥ) p(y) dy`, evaluated against a
//!   Gaussian-kernel smoothing of the particle measure.
//! * [`gain_constant_approx`]: the constant-gain approximation
//!   `σ_W⁻² Cov(X, h(X))`, used for multivariate states.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fpf::ParticleEnsemble;
use crate::models::ObsMap;

/// Default number of nodes of a tabulated gain.
pub const DEFAULT_GAIN_NODES: usize = 201;

/// Nodes whose smoothed density falls below this fraction of the peak take
/// the gain of the nearest node above it.
pub const DENSITY_FLOOR: f64 = 1e-6;

const MAX_GAIN_NODES: usize = 4096;

/// The gain field, either a constant vector or a tabulated scalar function.
#[derive(Debug, Clone, PartialEq)]
pub enum GainField {
    Constant(Vec<f64>),
    Tabulated(TabulatedGain),
}

impl GainField {
    /// Identically zero constant gain of dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        GainField::Constant(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            GainField::Constant(k) => k.len(),
            GainField::Tabulated(_) => 1,
        }
    }

    /// Gain vector and the derivative `K′` (scalar states only; zero for a constant gain).
    pub fn eval(&self, x: &[f64]) -> (Vec<f64>, f64) {
        match self {
            GainField::Constant(k) => (k.clone(), 0.0),
            GainField::Tabulated(t) => {
                let (k, dk) = t.value_and_slope(x[0]);
                (vec![k], dk)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            GainField::Constant(k) => k.iter().all(|v| v.is_finite()),
            GainField::Tabulated(t) => t.values.iter().chain(&t.slopes).all(|v| v.is_finite()),
        }
    }
}

/// Scalar gain tabulated on strictly increasing nodes, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedGain {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// Set when the ensemble had no spread and the gain was zeroed.
    pub degenerate: bool,
}

impl TabulatedGain {
    /// Builds a table, computing `K′` by finite differences on the nodes.
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::invalid("tabulated gain needs >= 2 nodes and one value per node"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("gain nodes must be strictly increasing"));
        }
        if nodes.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("gain table contains non-finite entries"));
        }
        let slopes = finite_difference(&nodes, &values);
        Ok(TabulatedGain {
            nodes,
            values,
            slopes,
            degenerate: false,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// `(K(x), K′(x))`. Outside the node range `K` is held at the boundary
    /// value, so `K′` is zero there.
    #[inline]
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return (self.values[0], 0.0);
        }
        if x >= self.nodes[n - 1] {
            return (self.values[n - 1], 0.0);
        }
        let hi = self.nodes.partition_point(|&v| v <= x).min(n - 1);
        let lo = hi - 1;
        let t = (x - self.nodes[lo]) / (self.nodes[hi] - self.nodes[lo]);
        (
            self.values[lo] + t * (self.values[hi] - self.values[lo]),
            self.slopes[lo] + t * (self.slopes[hi] - self.slopes[lo]),
        )
    }

    pub fn value(&self, x: f64) -> f64 {
        self.value_and_slope(x).0
    }
}

fn finite_difference(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect()
}

/// Closed-form gain `Σ Hᵀ / σ_W²`; for a scalar state this is `γΣ/σ_W²`.
pub fn gain_linear(obs_row: &[f64], cov: &DMatrix<f64>, obs_noise: f64) -> Result<GainField> {
    let d = obs_row.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::invalid(format!(
            "covariance is {}x{}, observation row has {d} entries",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if !(obs_noise > 0.0) {
        return Err(Error::invalid("obs_noise must be positive"));
    }
    check_psd(cov)?;
    let inv = 1.0 / (obs_noise * obs_noise);
    let k = (0..d)
        .map(|r| (0..d).map(|c| cov[(r, c)] * obs_row[c]).sum::<f64>() * inv)
        .collect();
    Ok(GainField::Constant(k))
}

/// Scalar form of [`gain_linear`].
pub fn gain_linear_scalar(gamma: f64, var: f64, obs_noise: f64) -> Result<f64> {
    match gain_linear(&[gamma], &DMatrix::from_element(1, 1, var), obs_noise)? {
        GainField::Constant(k) => Ok(k[0]),
        GainField::Tabulated(_) => unreachable!(),
    }
}

/// Rejects covariances that are asymmetric or have a negative eigenvalue
/// beyond round-off.
pub fn check_psd(cov: &DMatrix<f64>) -> Result<()> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: f64::NAN,
            asymmetry: f64::NAN,
        });
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (cov - cov.transpose()).amax();
    let min_eigenvalue = if cov.nrows() == 1 {
        cov[(0, 0)]
    } else {
        SymmetricEigen::new(cov.clone()).eigenvalues.min()
    };
    if asymmetry > 1e-9 * scale || min_eigenvalue < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue,
            asymmetry,
        });
    }
    Ok(())
}

/// Multiple of Silverman's bandwidth used by [`default_gain_bandwidth`].
pub const GAIN_BANDWIDTH_SCALE: f64 = 4.0;

/// Bandwidth used by the filter when none is configured:
/// [`GAIN_BANDWIDTH_SCALE`] times Silverman's rule. The variance-preserving
/// smoothing of [`gain_integral_1d_with`] leaves Gaussian ensembles
/// unbiased at any bandwidth, so the wider kernel mainly buys variance.
pub fn default_gain_bandwidth(xs: &[f64]) -> f64 {
    GAIN_BANDWIDTH_SCALE * silverman_bandwidth(xs)
}

/// Silverman's rule of thumb `1.06 σ̂ N^{-1/5}`.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Scalar gain from the first integral of the boundary-value problem with
/// the default node count. See [`gain_integral_1d_with`].
pub fn gain_integral_1d(particles: &[f64], obs_map: &ObsMap, obs_noise: f64, bandwidth: f64) -> Result<GainField> {
    gain_integral_1d_with(particles, obs_map, obs_noise, bandwidth, DEFAULT_GAIN_NODES)
}

/// Scalar gain `K = σ_W⁻² (∫_x^∞ (h−ĥ) p) / p` with `p` a Gaussian-kernel
/// smoothing (bandwidth `b`) of the particle measure.
///
/// The smoothing preserves the ensemble variance: particles are first
/// pulled toward their mean by `√(1 − b²/s²)`, so that adding the kernel
/// variance restores the sample variance `s²`. A Gaussian ensemble is then
/// smoothed into (approximately) the same Gaussian whatever the bandwidth.
/// The tail integral is evaluated by quadrature of `(h(y) − ĥ) p(y)` on a
/// uniform node grid, with `ĥ` the mean of `h` under `p` so that the total
/// flux vanishes and `K p → 0` at both ends. Particles are linearly binned
/// onto the grid, which keeps the cost at `O(N + G²)` for `G` nodes.
pub fn gain_integral_1d_with(
    particles: &[f64],
    obs_map: &ObsMap,
    obs_noise: f64,
    bandwidth: f64,
    nodes: usize,
) -> Result<GainField> {
    let n = particles.len();
    if n < 2 {
        return Err(Error::invalid("gain_integral_1d needs at least 2 particles"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if !(obs_noise > 0.0) {
        return Err(Error::invalid("obs_noise must be positive"));
    }
    if nodes < 3 {
        return Err(Error::invalid("need at least 3 gain nodes"));
    }
    let (min, max) = particles
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::invalid("particles must be finite"));
    }
    if max == min {
        log::warn!("degenerate ensemble (all particles at {min}); gain set to zero");
        let mut t = TabulatedGain::new(vec![min - 1.0, min + 1.0], vec![0.0, 0.0])?;
        t.degenerate = true;
        return Ok(GainField::Tabulated(t));
    }

    let nf = n as f64;
    let mean = particles.iter().sum::<f64>() / nf;
    let var = particles.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let shrink = (1.0 - bandwidth * bandwidth / var).max(0.0).sqrt();
    let pulled = |x: f64| mean + shrink * (x - mean);

    let lo = pulled(min) - 5.0 * bandwidth;
    let hi = pulled(max) + 5.0 * bandwidth;
    let resolution = bandwidth.min(var.sqrt()) / 8.0;
    let g = nodes
        .max(((hi - lo) / resolution).ceil() as usize + 1)
        .min(MAX_GAIN_NODES);
    let step = (hi - lo) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|j| lo + step * j as f64).collect();

    let mut counts = vec![0.0; g];
    for &x in particles {
        let pos = ((pulled(x) - lo) / step).clamp(0.0, (g - 1) as f64);
        let k = (pos.floor() as usize).min(g - 2);
        let frac = pos - k as f64;
        counts[k] += 1.0 - frac;
        counts[k + 1] += frac;
    }

    // Toeplitz kernel indexed by node offset (j − k) + g − 1.
    let norm = 1.0 / (nf * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let kernel: Vec<f64> = (-(g as isize - 1)..=(g as isize - 1))
        .map(|l| {
            let z = l as f64 * step / bandwidth;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let density: Vec<f64> = (0..g)
        .map(|j| (0..g).map(|k| counts[k] * kernel[j + g - 1 - k]).sum())
        .collect();

    // trapezoid weights, so that the cumulative sum below ends at zero
    // h is taken relative to h(lo) so that a constant h gives exactly zero
    let h0 = obs_map.eval(&[lo]);
    let hs: Vec<f64> = grid
        .iter()
        .map(|&y| obs_map.eval(std::slice::from_ref(&y)) - h0)
        .collect();
    let w = |j: usize| if j == 0 || j == g - 1 { 0.5 } else { 1.0 };
    let mass: f64 = (0..g).map(|j| w(j) * density[j]).sum();
    let h_mean = (0..g).map(|j| w(j) * density[j] * hs[j]).sum::<f64>() / mass;
    let integrand: Vec<f64> = (0..g).map(|j| (hs[j] - h_mean) * density[j]).collect();
    // ∫_x^∞ on the right of the mode and −∫_−∞^x on its left: the two agree
    // since the total vanishes, and each avoids cancellation in its own tail
    let mode = (0..g).fold(0, |best, j| if density[j] > density[best] { j } else { best });
    let mut tail = vec![0.0; g];
    for j in (mode..g - 1).rev() {
        tail[j] = tail[j + 1] + 0.5 * step * (integrand[j] + integrand[j + 1]);
    }
    let mut left = 0.0;
    for j in 1..mode {
        left += 0.5 * step * (integrand[j - 1] + integrand[j]);
        tail[j] = -left;
    }

    let peak = density[mode];
    let inv_var = 1.0 / (obs_noise * obs_noise);
    let valid: Vec<bool> = density.iter().map(|&p| p >= DENSITY_FLOOR * peak && p > 0.0).collect();
    let mut values: Vec<f64> = (0..g)
        .map(|j| {
            if valid[j] {
                tail[j] * inv_var / density[j]
            } else {
                f64::NAN
            }
        })
        .collect();
    clamp_to_nearest_valid(&mut values, &valid);

    let mut t = TabulatedGain::new(grid, values)?;
    t.degenerate = false;
    Ok(GainField::Tabulated(t))
}

fn clamp_to_nearest_valid(values: &mut [f64], valid: &[bool]) {
    let first = valid.iter().position(|&v| v);
    let last = valid.iter().rposition(|&v| v);
    let (Some(first), Some(last)) = (first, last) else {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    };
    let (left, right) = (values[first], values[last]);
    for v in &mut values[..first] {
        *v = left;
    }
    for v in &mut values[last + 1..] {
        *v = right;
    }
    // interior holes (multimodal ensembles): carry the previous valid value
    let mut prev = left;
    for (v, ok) in values[first..=last].iter_mut().zip(&valid[first..=last]) {
        if *ok {
            prev = *v;
        } else {
            *v = prev;
        }
    }
}

/// Constant-gain approximation `σ_W⁻² · (1/(N−1)) Σ (X^i − X̄)(h(X^i) − ĥ)`.
pub fn gain_constant_approx(ens: &ParticleEnsemble, obs_map: &ObsMap, obs_noise: f64) -> Result<GainField> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::invalid("gain_constant_approx needs at least 2 particles"));
    }
    if !(obs_noise > 0.0) {
        return Err(Error::invalid("obs_noise must be positive"));
    }
    let d = ens.dim();
    let mean = ens.mean();
    let hs: Vec<f64> = ens.iter().map(|x| obs_map.eval(x)).collect();
    let h_mean = hs.iter().sum::<f64>() / n as f64;
    let mut k = vec![0.0; d];
    for (x, h) in ens.iter().zip(&hs) {
        let w = h - h_mean;
        for c in 0..d {
            k[c] += (x[c] - mean[c]) * w;
        }
    }
    let scale = 1.0 / ((n - 1) as f64 * obs_noise * obs_noise);
    k.iter_mut().for_each(|v| *v *= scale);
    Ok(GainField::Constant(k))
}
