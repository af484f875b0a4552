//! Association probabilities: the continuous-time filters for β (single
//! target, `M` channels) and π (two targets), their discrete Bayes
//! counterparts, and the Wonham filter used as an oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpf::{MomentEstimates, ParticleEnsemble};
use crate::models::{transition_probabilities, MeasurementBatch, ObsMap};

/// Sum tolerance accepted by the belief constructors.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// `|dπ¹|` above which the π filter halves its step.
pub const PI_STEP_LIMIT: f64 = 0.1;
/// Maximum halving depth of the π filter (`2¹⁰` sub-steps).
pub const MAX_HALVINGS: u32 = 10;

/// `β = (β⁰, β¹, …, βᴹ)`, where index 0 is "target not detected".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationBelief {
    beta: Vec<f64>,
}

impl AssociationBelief {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::invalid("a belief needs at least one channel"));
        }
        if beta.iter().any(|b| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(b)) {
            return Err(Error::invalid(format!("belief entries outside [0,1]: {beta:?}")));
        }
        let s: f64 = beta.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("belief sums to {s}")));
        }
        Ok(AssociationBelief { beta })
    }

    /// Equal mass `1/(M+1)` on every hypothesis.
    pub fn uniform(channels: usize) -> Self {
        AssociationBelief {
            beta: vec![1.0 / (channels + 1) as f64; channels + 1],
        }
    }

    /// All mass on hypothesis `m` (0 = not detected).
    pub fn certain(channels: usize, m: usize) -> Self {
        let mut beta = vec![0.0; channels + 1];
        beta[m] = 1.0;
        AssociationBelief { beta }
    }

    pub fn num_channels(&self) -> usize {
        self.beta.len() - 1
    }

    /// `βᵐ` for `m ∈ 1..=M`.
    pub fn channel(&self, m: usize) -> f64 {
        self.beta[m]
    }

    pub fn missed(&self) -> f64 {
        self.beta[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    /// Entries in `[0,1]` summing to one within `tol`.
    pub fn in_simplex(&self, tol: f64) -> bool {
        in_simplex(&self.beta, tol)
    }
}

/// `(π¹, π²)`: probabilities of the two joint assignments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAssociationBelief {
    pub pi: [f64; 2],
}

impl JointAssociationBelief {
    pub fn new(pi1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi1) {
            return Err(Error::invalid(format!("π¹ = {pi1} outside [0,1]")));
        }
        Ok(JointAssociationBelief { pi: [pi1, 1.0 - pi1] })
    }

    pub fn in_simplex(&self, tol: f64) -> bool {
        in_simplex(&self.pi, tol)
    }
}

fn in_simplex(v: &[f64], tol: f64) -> bool {
    v.iter().all(|x| (-tol..=1.0 + tol).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Result of one belief update with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate<B> {
    pub belief: B,
    /// L1 mass moved by the simplex projection.
    pub correction: f64,
    /// Every likelihood underflowed and the prior was kept.
    pub underflow: bool,
    pub substeps: usize,
}

impl<B> BeliefUpdate<B> {
    fn plain(belief: B, correction: f64) -> Self {
        BeliefUpdate {
            belief,
            correction,
            underflow: false,
            substeps: 1,
        }
    }
}

/// Clips to `[0,1]` and renormalizes in place. Returns the L1 mass moved.
pub fn project_simplex(v: &mut [f64]) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateBelief(v.to_vec()));
    }
    let before = v.to_vec();
    v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return Err(Error::DegenerateBelief(before));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(before.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).sum())
}

/// The three contributions to `dβᵐ`, `m = 1..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSdeTerms {
    pub prior: Vec<f64>,
    pub innovation: Vec<f64>,
    pub variance: Vec<f64>,
}

impl BetaSdeTerms {
    pub fn total(&self) -> Vec<f64> {
        (0..self.prior.len())
            .map(|i| self.prior[i] + self.innovation[i] + self.variance[i])
            .collect()
    }
}

pub fn beta_sde_terms(
    belief: &AssociationBelief,
    moments: &MomentEstimates,
    batch: &MeasurementBatch,
    rate: f64,
    dt: f64,
    obs_noise: f64,
) -> Result<BetaSdeTerms> {
    let m_count = belief.num_channels();
    if batch.num_channels() != m_count {
        return Err(Error::invalid("belief and batch channel counts differ"));
    }
    let s2 = obs_noise * obs_noise;
    let h = moments.h_mean;
    let var = moments.h2_mean - h * h;
    let b = &belief.beta[1..];
    let dz = &batch.channels;
    let mf = m_count as f64;
    let mut terms = BetaSdeTerms {
        prior: vec![0.0; m_count],
        innovation: vec![0.0; m_count],
        variance: vec![0.0; m_count],
    };
    for m in 0..m_count {
        terms.prior[m] = rate / mf * (1.0 - (mf + 1.0) * b[m]) * dt;
        let own = dz[m] - b[m] * h * dt;
        let mut cross = 0.0;
        let mut spread = 0.0;
        for j in 0..m_count {
            cross += b[j] * (own - (dz[j] - b[j] * h * dt));
            spread += b[j] * (b[j] - b[m]);
        }
        terms.innovation[m] = b[m] * h * cross / s2;
        terms.variance[m] = b[m] * var * spread * dt / s2;
    }
    Ok(terms)
}

/// One Euler step of the β filter. `β⁰` is set residually, then the
/// vector is projected onto the simplex.
pub fn beta_sde_step(
    belief: &AssociationBelief,
    moments: &MomentEstimates,
    batch: &MeasurementBatch,
    rate: f64,
    dt: f64,
    obs_noise: f64,
) -> Result<BeliefUpdate<AssociationBelief>> {
    let d = beta_sde_terms(belief, moments, batch, rate, dt, obs_noise)?.total();
    let mut next = belief.beta.clone();
    for (m, dm) in d.iter().enumerate() {
        next[m + 1] += dm;
    }
    next[0] = 1.0 - next[1..].iter().sum::<f64>();
    let correction = project_simplex(&mut next)?;
    Ok(BeliefUpdate::plain(AssociationBelief { beta: next }, correction))
}

/// Prediction through the symmetric association chain over `dt` (exact).
pub fn beta_predict(belief: &AssociationBelief, rate: f64, dt: f64) -> AssociationBelief {
    AssociationBelief {
        beta: chain_predict(&belief.beta, rate, dt),
    }
}

/// Prediction through a chain over the detected hypotheses `1..=M` only,
/// for targets that are never missed. `β⁰` is left unchanged.
pub fn beta_predict_detected(belief: &AssociationBelief, rate: f64, dt: f64) -> AssociationBelief {
    let mut beta = belief.beta.clone();
    if beta.len() > 2 {
        let inner = chain_predict(&beta[1..], rate, dt);
        beta[1..].copy_from_slice(&inner);
    }
    AssociationBelief { beta }
}

fn chain_predict(p: &[f64], rate: f64, dt: f64) -> Vec<f64> {
    let (stay, mv) = transition_probabilities(p.len(), rate, dt);
    let total: f64 = p.iter().sum();
    p.iter().map(|&x| stay * x + mv * (total - x)).collect()
}

/// Density assumed for a channel that does not carry the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClutterDensity {
    /// Uniform over a coverage region of the given size, measured in
    /// increment units.
    Uniform { volume: f64 },
    /// `N(0, σ_W² dt)`: a channel of pure observation noise.
    WhiteNoise,
}

impl ClutterDensity {
    fn log_density(self, dz: f64, dt: f64, obs_noise: f64) -> f64 {
        match self {
            ClutterDensity::Uniform { volume } => -volume.ln(),
            ClutterDensity::WhiteNoise => log_normal_pdf(dz, 0.0, obs_noise * obs_noise * dt),
        }
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

fn log_mean_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

/// `ln L(dZ)`, the ensemble average of `N(dZ; h(Xⁱ)dt, σ_W² dt)`.
pub fn particle_log_likelihood(ens: &ParticleEnsemble, obs_map: &ObsMap, dz: f64, dt: f64, obs_noise: f64) -> f64 {
    let var = obs_noise * obs_noise * dt;
    log_mean_exp(ens.iter().map(|x| log_normal_pdf(dz, obs_map.eval(x) * dt, var)))
}

/// Posterior `∝ prior · exp(log_lik)`, normalized in the log domain.
/// Returns the prior unchanged and `true` when nothing survives.
pub fn bayes_update(prior: &[f64], log_lik: &[f64]) -> (Vec<f64>, bool) {
    let logs: Vec<f64> = prior
        .iter()
        .zip(log_lik)
        .map(|(&p, &l)| if p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (prior.to_vec(), true);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    (w.iter().map(|x| x / s).collect(), false)
}

/// Discrete Bayes measurement update of β.
///
/// The hypotheses compared are "channel `m` carries the target" for
/// `m = 1..M`; channel `m` has likelihood `L(dZᵐ)` from the ensemble and
/// every other channel the clutter density. The rule normalizes over these
/// hypotheses only, so `β⁰` passes through and the detected hypotheses
/// share the remaining `1 − β⁰`.
pub fn beta_bayes_step(
    belief: &AssociationBelief,
    ens: &ParticleEnsemble,
    batch: &MeasurementBatch,
    dt: f64,
    clutter: ClutterDensity,
    obs_noise: f64,
    obs_map: &ObsMap,
) -> Result<BeliefUpdate<AssociationBelief>> {
    let m_count = belief.num_channels();
    if batch.num_channels() != m_count {
        return Err(Error::invalid("belief and batch channel counts differ"));
    }
    if let ClutterDensity::Uniform { volume } = clutter {
        if !(volume > 0.0) {
            return Err(Error::invalid("clutter volume must be positive"));
        }
    }
    let dz = &batch.channels;
    let target: Vec<f64> = dz
        .iter()
        .map(|&z| particle_log_likelihood(ens, obs_map, z, dt, obs_noise))
        .collect();
    let background: Vec<f64> = dz.iter().map(|&z| clutter.log_density(z, dt, obs_noise)).collect();
    let bg_total: f64 = background.iter().sum();
    let log_lik: Vec<f64> = (0..m_count).map(|m| target[m] + (bg_total - background[m])).collect();

    let detected = 1.0 - belief.missed();
    let mut next = belief.beta.clone();
    let mut underflow = false;
    if detected > 0.0 {
        let (post, uf) = bayes_update(&belief.beta[1..], &log_lik);
        underflow = uf;
        if uf {
            log::warn!("all association likelihoods underflowed; keeping the prior");
        } else {
            for (m, p) in post.iter().enumerate() {
                next[m + 1] = detected * p;
            }
        }
    }
    let correction = project_simplex(&mut next)?;
    Ok(BeliefUpdate {
        belief: AssociationBelief { beta: next },
        correction,
        underflow,
        substeps: 1,
    })
}

/// `dπ¹` for one Euler step with frozen moments.
pub fn pi_increment(
    pi1: f64,
    moments1: &MomentEstimates,
    moments2: &MomentEstimates,
    dz: [f64; 2],
    rate: f64,
    dt: f64,
    obs_noise: f64,
) -> f64 {
    let pi2 = 1.0 - pi1;
    let s2 = obs_noise * obs_noise;
    let (h1, h2) = (moments1.h_mean, moments2.h_mean);
    let diff = pi1 - pi2;
    let dmu1 = dz[0] - diff * h1 * dt;
    let dmu2 = dz[1] - diff * h2 * dt;
    let vars = moments1.h_variance() + moments2.h_variance();
    -rate * diff * dt + pi1 * pi2 * (h1 - h2) * (dmu1 - dmu2) / s2 - pi1 * pi2 * diff * vars * dt / s2
}

/// One step of the π filter. A step whose increment exceeds
/// [`PI_STEP_LIMIT`] or leaves `[0,1]` is split in two halves, each
/// receiving half of the measurement increment, down to `2¹⁰` pieces.
pub fn pi_sde_step(
    belief: &JointAssociationBelief,
    moments1: &MomentEstimates,
    moments2: &MomentEstimates,
    batch: &MeasurementBatch,
    rate: f64,
    dt: f64,
    obs_noise: f64,
) -> Result<BeliefUpdate<JointAssociationBelief>> {
    if batch.num_channels() != 2 {
        return Err(Error::invalid("the joint filter needs exactly two channels"));
    }
    let dz = [batch.channels[0], batch.channels[1]];
    let mut substeps = 0;
    let pi1 = pi_advance(
        belief.pi[0],
        moments1,
        moments2,
        dz,
        rate,
        dt,
        obs_noise,
        0,
        &mut substeps,
    )?;
    let mut next = [pi1, 1.0 - pi1];
    let correction = project_simplex(&mut next)?;
    Ok(BeliefUpdate {
        belief: JointAssociationBelief { pi: next },
        correction,
        underflow: false,
        substeps,
    })
}

#[allow(clippy::too_many_arguments)]
fn pi_advance(
    pi1: f64,
    m1: &MomentEstimates,
    m2: &MomentEstimates,
    dz: [f64; 2],
    rate: f64,
    dt: f64,
    obs_noise: f64,
    depth: u32,
    substeps: &mut usize,
) -> Result<f64> {
    let d = pi_increment(pi1, m1, m2, dz, rate, dt, obs_noise);
    let next = pi1 + d;
    if d.abs() <= PI_STEP_LIMIT && (0.0..=1.0).contains(&next) {
        *substeps += 1;
        return Ok(next);
    }
    if depth == MAX_HALVINGS {
        return Err(Error::StiffUpdate {
            increment: d,
            substeps: *substeps + 1,
            pi: [pi1, 1.0 - pi1],
        });
    }
    let half = [0.5 * dz[0], 0.5 * dz[1]];
    let mid = pi_advance(pi1, m1, m2, half, rate, 0.5 * dt, obs_noise, depth + 1, substeps)?;
    pi_advance(mid, m1, m2, half, rate, 0.5 * dt, obs_noise, depth + 1, substeps)
}

pub fn pi_predict(belief: &JointAssociationBelief, rate: f64, dt: f64) -> JointAssociationBelief {
    let p = chain_predict(&belief.pi, rate, dt);
    JointAssociationBelief { pi: [p[0], p[1]] }
}

/// Joint Bayes update: hypothesis 1 routes channel 1 to target 1 and
/// channel 2 to target 2, hypothesis 2 swaps them.
#[allow(clippy::too_many_arguments)]
pub fn pi_bayes_step(
    belief: &JointAssociationBelief,
    ens1: &ParticleEnsemble,
    ens2: &ParticleEnsemble,
    batch: &MeasurementBatch,
    dt: f64,
    obs_noise: f64,
    obs_map: &ObsMap,
) -> Result<BeliefUpdate<JointAssociationBelief>> {
    if batch.num_channels() != 2 {
        return Err(Error::invalid("the joint filter needs exactly two channels"));
    }
    let l = |ens: &ParticleEnsemble, z: f64| particle_log_likelihood(ens, obs_map, z, dt, obs_noise);
    let (z1, z2) = (batch.channels[0], batch.channels[1]);
    let log_lik = [l(ens1, z1) + l(ens2, z2), l(ens2, z1) + l(ens1, z2)];
    let (post, underflow) = bayes_update(&belief.pi, &log_lik);
    if underflow {
        log::warn!("all joint likelihoods underflowed; keeping the prior");
    }
    let mut next = [post[0], post[1]];
    let correction = project_simplex(&mut next)?;
    Ok(BeliefUpdate {
        belief: JointAssociationBelief { pi: next },
        correction,
        underflow,
        substeps: 1,
    })
}

/// Per-target β from the joint belief. There is no missed-detection
/// hypothesis here, so `β⁰ = 0`.
pub fn marginals_from_joint(belief: &JointAssociationBelief, target: usize) -> Result<AssociationBelief> {
    let [p1, p2] = belief.pi;
    match target {
        1 => Ok(AssociationBelief {
            beta: vec![0.0, p1, p2],
        }),
        2 => Ok(AssociationBelief {
            beta: vec![0.0, p2, p1],
        }),
        _ => Err(Error::invalid(format!("target index {target} not in {{1,2}}"))),
    }
}

/// Signal table `g[k][m]` for the single-target chain over `0..=M`:
/// `h` on channel `k`, nothing elsewhere.
pub fn pda_signals(h: f64, channels: usize) -> Vec<Vec<f64>> {
    (0..=channels)
        .map(|k| (1..=channels).map(|m| if k == m { h } else { 0.0 }).collect())
        .collect()
}

/// Signal table for the two-target chain: hypothesis 1 is `(h¹, h²)`,
/// hypothesis 2 is `(h², h¹)`.
pub fn jpda_signals(h1: f64, h2: f64) -> Vec<Vec<f64>> {
    vec![vec![h1, h2], vec![h2, h1]]
}

fn check_wonham(q: &[f64], signals: &[Vec<f64>], dz: &[f64], intensity: &nalgebra::DMatrix<f64>) -> Result<()> {
    if signals.len() != q.len() || signals.iter().any(|g| g.len() != dz.len()) {
        return Err(Error::invalid("signal table does not match the posterior and batch"));
    }
    if intensity.nrows() != q.len() || intensity.ncols() != q.len() {
        return Err(Error::invalid("intensity matrix does not match the posterior"));
    }
    Ok(())
}

/// Itô–Euler increment of the Wonham filter:
/// `dq_k = (Λᵀq)_k dt + Σ_m q_k (g_km − ḡ_m)(dZᵐ − ḡ_m dt)/σ_W²`.
pub fn wonham_increment(
    q: &[f64],
    signals: &[Vec<f64>],
    dz: &[f64],
    intensity: &nalgebra::DMatrix<f64>,
    dt: f64,
    obs_noise: f64,
) -> Result<Vec<f64>> {
    check_wonham(q, signals, dz, intensity)?;
    let s2 = obs_noise * obs_noise;
    let gbar: Vec<f64> = (0..dz.len())
        .map(|m| (0..q.len()).map(|k| q[k] * signals[k][m]).sum())
        .collect();
    Ok((0..q.len())
        .map(|k| {
            let prior: f64 = (0..q.len()).map(|j| intensity[(j, k)] * q[j]).sum::<f64>() * dt;
            let meas: f64 = (0..dz.len())
                .map(|m| q[k] * (signals[k][m] - gbar[m]) * (dz[m] - gbar[m] * dt))
                .sum::<f64>()
                / s2;
            prior + meas
        })
        .collect())
}

/// One step of the Wonham filter in multiplicative form: the chain
/// prediction `exp(Λᵀdt)` followed by the likelihood factor
/// `exp(Σ_m g_km dZᵐ/σ_W² − ½ Σ_m g_km² dt/σ_W²)`, normalized in the log
/// domain. Positive by construction, unlike the Euler form.
pub fn wonham_step(
    q: &[f64],
    signals: &[Vec<f64>],
    dz: &[f64],
    intensity: &nalgebra::DMatrix<f64>,
    dt: f64,
    obs_noise: f64,
) -> Result<BeliefUpdate<Vec<f64>>> {
    check_wonham(q, signals, dz, intensity)?;
    let s2 = obs_noise * obs_noise;
    let prop = (intensity.transpose() * dt).exp();
    let predicted: Vec<f64> = (0..q.len())
        .map(|k| (0..q.len()).map(|j| prop[(k, j)] * q[j]).sum())
        .collect();
    let log_lik: Vec<f64> = signals
        .iter()
        .map(|g| {
            g.iter()
                .zip(dz)
                .map(|(&gm, &z)| gm * z / s2 - 0.5 * gm * gm * dt / s2)
                .sum()
        })
        .collect();
    let (mut post, underflow) = bayes_update(&predicted, &log_lik);
    let correction = project_simplex(&mut post)?;
    Ok(BeliefUpdate {
        belief: post,
        correction,
        underflow,
        substeps: 1,
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn detected_prediction_keeps_missed_mass() {
        let b = AssociationBelief::new(vec![0.1, 0.9, 0.0, 0.0]).unwrap();
        let p = beta_predict_detected(&b, 2.0, 0.1);
        assert_eq!(p.missed(), 0.1);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.channel(2) > 0.0 && (p.channel(2) - p.channel(3)).abs() < 1e-15);
        let far = beta_predict_detected(&b, 2.0, 50.0);
        assert!((far.channel(1) - 0.3).abs() < 1e-12);
        let one = AssociationBelief::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(beta_predict_detected(&one, 2.0, 1.0), one);
    }

    use super::*;
    use crate::models::{intensity_matrix, ScalarMap};
    use crate::rng::{Entity, Stream};
    use nalgebra::DMatrix;

    fn moments(h_mean: f64, h2_mean: f64) -> MomentEstimates {
        MomentEstimates {
            mean: vec![h_mean],
            cov: DMatrix::zeros(1, 1),
            h_mean,
            h2_mean,
        }
    }

    fn batch(channels: Vec<f64>) -> MeasurementBatch {
        MeasurementBatch { time: 0.0, channels }
    }

    #[test]
    fn belief_validation() {
        assert!(AssociationBelief::new(vec![0.5, 0.6]).is_err());
        assert!(AssociationBelief::new(vec![1.0]).is_err());
        assert!(AssociationBelief::new(vec![-0.1, 1.1]).is_err());
        assert!(AssociationBelief::new(vec![0.25, 0.75]).is_ok());
        assert!(JointAssociationBelief::new(1.2).is_err());
        assert!(AssociationBelief::uniform(4).in_simplex(1e-12));
    }

    #[test]
    fn projection_clips_and_renormalizes() {
        let mut v = [-0.1, 0.6, 0.6];
        let moved = project_simplex(&mut v).unwrap();
        assert_eq!(v, [0.0, 0.5, 0.5]);
        assert!((moved - 0.3).abs() < 1e-15);
        assert!(matches!(
            project_simplex(&mut [-1.0, -2.0]),
            Err(Error::DegenerateBelief(_))
        ));
        assert!(project_simplex(&mut [f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn symmetric_fixed_point() {
        let b = AssociationBelief::uniform(3);
        let next = beta_sde_step(&b, &moments(0.8, 1.0), &batch(vec![0.02; 3]), 2.0, 0.01, 0.3).unwrap();
        for (a, e) in next.belief.as_slice().iter().zip(b.as_slice()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_term_relaxes_at_the_chain_rate() {
        // dβᵐ = (c/M)(1 − (M+1)βᵐ)dt  ⇒  βᵐ − 1/(M+1) decays like exp(−c(M+1)t/M)
        let (m, c, dt) = (3usize, 1.5, 1e-4);
        let mut b = AssociationBelief::new(vec![0.1, 0.6, 0.2, 0.1]).unwrap();
        let steps = 10_000;
        for _ in 0..steps {
            b = beta_sde_step(&b, &moments(0.0, 0.0), &batch(vec![0.3, -0.1, 0.7]), c, dt, 0.3)
                .unwrap()
                .belief;
        }
        let t = steps as f64 * dt;
        let decay = (-c * (m as f64 + 1.0) / m as f64 * t).exp();
        let expected = 0.25 + (0.6 - 0.25) * decay;
        assert!((b.channel(1) - expected).abs() < 1e-4, "{} vs {expected}", b.channel(1));
    }

    #[test]
    fn single_channel_is_the_chain_alone() {
        for &(beta, c) in &[(0.3, 1.0), (0.9, 0.2), (0.05, 3.0)] {
            let b = AssociationBelief::new(vec![1.0 - beta, beta]).unwrap();
            let t = beta_sde_terms(&b, &moments(1.3, 2.5), &batch(vec![0.04]), c, 0.01, 0.2).unwrap();
            assert_eq!(t.innovation, vec![0.0]);
            assert_eq!(t.variance, vec![0.0]);
            assert!((t.prior[0] - c * (1.0 - 2.0 * beta) * 0.01).abs() < 1e-16);
        }
    }

    #[test]
    fn detected_mass_changes_only_through_the_chain() {
        let b = AssociationBelief::new(vec![0.2, 0.5, 0.3]).unwrap();
        let t = beta_sde_terms(&b, &moments(0.9, 1.4), &batch(vec![0.05, -0.02]), 0.0, 0.01, 0.3).unwrap();
        let s: f64 = t.total().iter().sum();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn bayes_arithmetic() {
        let (p, uf) = bayes_update(&[0.5, 0.5], &[3f64.ln(), 0.0]);
        assert!(!uf);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let (p, _) = bayes_update(&[0.3, 0.7], &[-2.0, -2.0]);
        assert!((p[0] - 0.3).abs() < 1e-15);
        let (p, uf) = bayes_update(&[0.3, 0.7], &[f64::NEG_INFINITY; 2]);
        assert!(uf);
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn bayes_survives_tiny_likelihoods() {
        let (p, uf) = bayes_update(&[0.5, 0.5], &[-1e5, -1e5 - 2f64.ln()]);
        assert!(!uf);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bayes_step_symmetry() {
        let ens = ParticleEnsemble::from_scalars(vec![0.1, 0.3, -0.2]).unwrap();
        let h = ObsMap::Scalar(ScalarMap::Linear(1.0));
        let b = AssociationBelief::new(vec![0.2, 0.4, 0.4]).unwrap();
        for clutter in [ClutterDensity::WhiteNoise, ClutterDensity::Uniform { volume: 0.5 }] {
            let next = beta_bayes_step(&b, &ens, &batch(vec![0.01, 0.01]), 0.01, clutter, 0.3, &h).unwrap();
            for (a, e) in next.belief.as_slice().iter().zip(b.as_slice()) {
                assert!((a - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bayes_step_rejects_bad_volume() {
        let ens = ParticleEnsemble::from_scalars(vec![0.1, 0.3]).unwrap();
        let h = ObsMap::Scalar(ScalarMap::Linear(1.0));
        let b = AssociationBelief::uniform(1);
        let r = beta_bayes_step(
            &b,
            &ens,
            &batch(vec![0.0]),
            0.01,
            ClutterDensity::Uniform { volume: 0.0 },
            0.3,
            &h,
        );
        assert!(r.is_err());
    }

    #[test]
    fn particle_likelihood_matches_gaussian_convolution() {
        // N(μ, s²) ensemble, h = γx: L(dZ) = N(dZ; γμ dt, σ²dt + γ²s²dt²)
        let (mu, s, gamma, sigma, dt) = (0.5, 0.8, 1.5, 0.3, 0.01);
        let xs: Vec<f64> = Stream::new(4, Entity::Aux(1))
            .normals(100_000)
            .iter()
            .map(|z| mu + s * z)
            .collect();
        let ens = ParticleEnsemble::from_scalars(xs).unwrap();
        let h = ObsMap::Scalar(ScalarMap::Linear(gamma));
        for &dz in &[0.0, 0.0075, 0.03, -0.02] {
            let l = particle_log_likelihood(&ens, &h, dz, dt, sigma).exp();
            let var = sigma * sigma * dt + gamma * gamma * s * s * dt * dt;
            let exact = log_normal_pdf(dz, gamma * mu * dt, var).exp();
            assert!((l / exact - 1.0).abs() < 0.02, "dz={dz}: {l} vs {exact}");
        }
    }

    #[test]
    fn pi_symmetric_point_is_fixed() {
        let b = JointAssociationBelief::new(0.5).unwrap();
        let m = moments(0.7, 0.9);
        let next = pi_sde_step(&b, &m, &m, &batch(vec![0.3, -0.4]), 2.0, 0.01, 0.1).unwrap();
        assert_eq!(next.belief.pi, [0.5, 0.5]);
    }

    #[test]
    fn pi_vertex_moves_by_prior_only() {
        let d = pi_increment(
            1.0,
            &moments(0.7, 0.9),
            &moments(-0.3, 0.4),
            [0.3, -0.4],
            2.0,
            0.01,
            0.1,
        );
        assert!((d + 2.0 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn pi_substeps_on_large_increments() {
        let b = JointAssociationBelief::new(0.5).unwrap();
        let (m1, m2) = (moments(1.0, 1.0), moments(-1.0, 1.0));
        let next = pi_sde_step(&b, &m1, &m2, &batch(vec![0.01, -0.01]), 0.0, 0.01, 0.05).unwrap();
        assert!(next.substeps > 1);
        assert!(next.belief.in_simplex(1e-12));
        assert!(next.belief.pi[0] > 0.5);
    }

    #[test]
    fn pi_cap_raises_stiff_update() {
        let b = JointAssociationBelief::new(0.5).unwrap();
        let (m1, m2) = (moments(1e8, 1e16), moments(-1e8, 1e16));
        let err = pi_sde_step(&b, &m1, &m2, &batch(vec![1.0, -1.0]), 0.0, 0.01, 1e-3).unwrap_err();
        assert!(matches!(err, Error::StiffUpdate { .. }), "{err}");
    }

    #[test]
    fn marginals() {
        let b = JointAssociationBelief::new(0.7).unwrap();
        assert_eq!(marginals_from_joint(&b, 1).unwrap().as_slice(), &[0.0, 0.7, 1.0 - 0.7]);
        assert_eq!(marginals_from_joint(&b, 2).unwrap().as_slice(), &[0.0, 1.0 - 0.7, 0.7]);
        let h = JointAssociationBelief::new(0.5).unwrap();
        assert_eq!(
            marginals_from_joint(&h, 1).unwrap(),
            marginals_from_joint(&h, 2).unwrap()
        );
        assert!(marginals_from_joint(&h, 3).is_err());
    }

    #[test]
    fn predict_keeps_mass_and_mixes() {
        let b = AssociationBelief::certain(3, 2);
        let p = beta_predict(&b, 1.0, 0.1);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.channel(2) < 1.0 && p.channel(1) > 0.0);
        let j = pi_predict(&JointAssociationBelief::new(1.0).unwrap(), 2.0, 0.1);
        assert!((j.pi[0] - (0.5 + 0.5 * (-0.4f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn wonham_uninformative_frozen() {
        let q = vec![0.2, 0.3, 0.5];
        let lam = intensity_matrix(3, 0.0);
        let g = pda_signals(0.0, 2);
        let next = wonham_step(&q, &g, &[0.4, -0.1], &lam, 0.01, 0.1).unwrap();
        for (a, e) in next.belief.iter().zip(&q) {
            assert!((a - e).abs() < 1e-15);
        }
        let dq = wonham_increment(&q, &g, &[0.4, -0.1], &lam, 0.01, 0.1).unwrap();
        assert!(dq.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn wonham_average_reproduces_beta_filter() {
        // with no mass on the missed hypothesis, the ensemble average of the
        // conditional Wonham increments is the β filter's increment
        let channels = 3;
        let b = AssociationBelief::new(vec![0.0, 0.5, 0.3, 0.2]).unwrap();
        let c = 1.2;
        let lam = intensity_matrix(channels + 1, c);
        let sigma = 0.3;
        let h = ObsMap::Scalar(ScalarMap::Cubic(1.0));
        let xs: Vec<f64> = Stream::new(9, Entity::Aux(2))
            .normals(500)
            .iter()
            .map(|z| 0.6 + 0.4 * z)
            .collect();
        let ens = ParticleEnsemble::from_scalars(xs).unwrap();
        let mom = crate::fpf::estimate_moments(&ens, &h);
        let mut noise = Stream::new(9, Entity::MeasurementNoise);
        let mut gaps = Vec::new();
        for &dt in &[1e-2, 2.5e-3] {
            let dz: Vec<f64> = (0..channels)
                .map(|m| 0.3 * dt * m as f64 + sigma * dt.sqrt() * noise.normal())
                .collect();
            let mut avg = vec![0.0; channels + 1];
            for x in ens.iter() {
                let g = pda_signals(h.eval(x), channels);
                let dq = wonham_increment(b.as_slice(), &g, &dz, &lam, dt, sigma).unwrap();
                avg.iter_mut().zip(&dq).for_each(|(a, d)| *a += d / ens.len() as f64);
            }
            let sde = beta_sde_terms(&b, &mom, &batch(dz), c, dt, sigma).unwrap().total();
            let gap = (1..=channels).map(|m| (avg[m] - sde[m - 1]).abs()).fold(0.0, f64::max);
            gaps.push((dt, gap));
        }
        for (dt, gap) in gaps {
            assert!(gap <= dt.powf(1.5), "dt={dt}: gap {gap}");
        }
    }

    #[test]
    fn wonham_concentrates_on_the_true_hypothesis() {
        let (sigma, dt, h) = (0.01, 1e-3f64, 1.0);
        let lam = intensity_matrix(3, 0.0);
        let mut ok = 0;
        for seed in 0..100u64 {
            let mut s = Stream::new(seed, Entity::MeasurementNoise);
            let truth = 1 + (seed % 2) as usize;
            let mut q = vec![1.0 / 3.0; 3];
            for _ in 0..500 {
                let dz: Vec<f64> = (1..=2)
                    .map(|m| if m == truth { h * dt } else { 0.0 } + sigma * dt.sqrt() * s.normal())
                    .collect();
                q = wonham_step(&q, &pda_signals(h, 2), &dz, &lam, dt, sigma)
                    .unwrap()
                    .belief;
            }
            if q[truth] > 0.95 {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}/100");
    }

    #[test]
    fn jpda_signal_table() {
        assert_eq!(jpda_signals(1.0, 2.0), vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(
            pda_signals(3.0, 2),
            vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]]
        );
    }

    proptest::proptest! {
        #[test]
        fn beta_filter_relabeling(b1 in 0.0f64..0.4, b2 in 0.0f64..0.3, b3 in 0.0f64..0.3,
                                  z in proptest::collection::vec(-0.1f64..0.1, 3), h in -2.0f64..2.0) {
            let b = AssociationBelief::new(vec![1.0 - b1 - b2 - b3, b1, b2, b3]).unwrap();
            let bp = AssociationBelief::new(vec![1.0 - b1 - b2 - b3, b3, b1, b2]).unwrap();
            let mom = moments(h, h * h + 0.3);
            let a = beta_sde_step(&b, &mom, &batch(z.clone()), 0.7, 0.01, 0.3).unwrap().belief;
            let p = beta_sde_step(&bp, &mom, &batch(vec![z[2], z[0], z[1]]), 0.7, 0.01, 0.3).unwrap().belief;
            let (a, p) = (a.as_slice(), p.as_slice());
            for (i, j) in [(0, 0), (1, 2), (2, 3), (3, 1)] {
                proptest::prop_assert!((a[i] - p[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn pi_filter_relabeling(p in 0.0f64..1.0, z1 in -0.1f64..0.1, z2 in -0.1f64..0.1, h1 in -1.0f64..1.0, h2 in -1.0f64..1.0) {
            // swapping channels and targets maps π¹ to π²
            let (m1, m2) = (moments(h1, h1 * h1 + 0.1), moments(h2, h2 * h2 + 0.2));
            let d = pi_increment(p, &m1, &m2, [z1, z2], 0.5, 0.01, 0.3);
            let ds = pi_increment(1.0 - p, &m1, &m2, [z2, z1], 0.5, 0.01, 0.3);
            proptest::prop_assert!((d + ds).abs() < 1e-12);
        }

        #[test]
        fn bayes_is_scale_invariant(p in 0.01f64..0.99, l1 in -50.0f64..50.0, l2 in -50.0f64..50.0, k in -300.0f64..300.0) {
            let (a, _) = bayes_update(&[p, 1.0 - p], &[l1, l2]);
            let (b, _) = bayes_update(&[p, 1.0 - p], &[l1 + k, l2 + k]);
            proptest::prop_assert!((a[0] - b[0]).abs() < 1e-12);
        }

        #[test]
        fn updates_stay_in_simplex(b1 in 0.0f64..0.5, b2 in 0.0f64..0.5, z1 in -1.0f64..1.0, z2 in -1.0f64..1.0, h in -3.0f64..3.0) {
            let b = AssociationBelief::new(vec![1.0 - b1 - b2, b1, b2]).unwrap();
            let next = beta_sde_step(&b, &moments(h, h * h + 1.0), &batch(vec![z1, z2]), 1.0, 0.01, 0.1).unwrap();
            proptest::prop_assert!(next.belief.in_simplex(1e-9));
        }
    }
}
