//! Continuous-time Kalman–Bucy filter, Euler-discretized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gain::{self, GainField};
use crate::models::TargetModel;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::invalid("Kalman covariance shape does not match the mean"));
        }
        gain::check_psd(&cov)?;
        Ok(KalmanState { mean, cov })
    }

    /// Kalman gain `ΣHᵀ/σ_W²` for this state.
    pub fn gain(&self, model: &TargetModel) -> Result<Vec<f64>> {
        let (_, h) = linear(model)?;
        match gain::gain_linear(&h, &self.cov, model.obs_noise)? {
            GainField::Constant(k) => Ok(k),
            GainField::Tabulated(_) => unreachable!(),
        }
    }
}

fn linear(model: &TargetModel) -> Result<(DMatrix<f64>, Vec<f64>)> {
    model
        .linear_parts()
        .ok_or_else(|| Error::invalid("the Kalman–Bucy filter needs a linear model"))
}

/// One step of
/// `dμ = Fμ dt + K(dZ − Hμ dt)`, `dΣ = (FΣ + ΣFᵀ + Q − ΣHᵀHΣ/σ_W²) dt`
/// with `K = ΣHᵀ/σ_W²` and `Q = diag(σ_B²)`. The mean is Euler; the
/// covariance uses the factored form
/// `Σ' = AΣAᵀ + Q dt`, `Σ'' = Σ' − Σ'HᵀHΣ' dt / (σ_W² + HΣ'Hᵀ dt)`, `A = I + F dt`,
/// which matches Euler to first order and stays PSD.
/// Without a measurement only the prediction part is applied.
pub fn kalman_bucy_step(state: &KalmanState, model: &TargetModel, dz: Option<f64>, dt: f64) -> Result<KalmanState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let (f, h) = linear(model)?;
    let d = model.dim();
    if state.mean.len() != d {
        return Err(Error::invalid("Kalman state dimension does not match the model"));
    }
    let mu = DVector::from_column_slice(&state.mean);
    let hrow = DMatrix::from_row_slice(1, d, &h);
    let s2 = model.obs_noise * model.obs_noise;
    let sigma = &state.cov;
    let q = DMatrix::from_diagonal(&DVector::from_iterator(d, model.diffusion.iter().map(|s| s * s)));

    let mut next_mu = &mu + &f * &mu * dt;
    let a = DMatrix::identity(d, d) + &f * dt;
    let mut cov = &a * sigma * a.transpose() + q * dt;
    if let Some(z) = dz {
        let k = state.gain(model)?;
        let innov = z - (&hrow * &mu)[(0, 0)] * dt;
        for (r, kr) in k.iter().enumerate() {
            next_mu[r] += kr * innov;
        }
        let sh = &cov * hrow.transpose();
        let denom = s2 + (&hrow * &sh)[(0, 0)] * dt;
        cov -= &sh * sh.transpose() * (dt / denom);
    }
    let cov = symmetrize_floor(cov)?;
    let mean: Vec<f64> = next_mu.iter().cloned().collect();
    crate::error::ensure_finite("Kalman mean", &mean)?;
    Ok(KalmanState { mean, cov })
}

/// Symmetrizes, lifts round-off negative eigenvalues to zero and rejects
/// genuinely indefinite matrices.
fn symmetrize_floor(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let scale = sym.amax().max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if !min.is_finite() || min < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            asymmetry: (&cov - cov.transpose()).amax(),
        });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let floored = eig.eigenvalues.map(|l| l.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose())
}

/// Positive root of the scalar Riccati equation `2αΣ + σ_B² − γ²Σ²/σ_W² = 0`.
pub fn riccati_steady_state(alpha: f64, gamma: f64, sigma_b: f64, sigma_w: f64) -> f64 {
    let s2 = sigma_w * sigma_w;
    if gamma == 0.0 {
        return sigma_b * sigma_b / (-2.0 * alpha);
    }
    s2 * (alpha + (alpha * alpha + gamma * gamma * sigma_b * sigma_b / s2).sqrt()) / (gamma * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_prediction_without_noise() {
        let model = TargetModel::white_noise_acceleration(0.0, 1.0).unwrap();
        let mut s = KalmanState::new(vec![0.0, 6.0], DMatrix::zeros(2, 2)).unwrap();
        for _ in 0..100 {
            s = kalman_bucy_step(&s, &model, None, 0.01).unwrap();
        }
        assert!((s.mean[0] - 6.0).abs() < 1e-12);
        assert_eq!(s.mean[1], 6.0);
        assert_eq!(s.cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_riccati_steady_state() {
        let (a, g, sb, sw) = (-0.5, 1.0, 0.3, 0.3);
        let root = riccati_steady_state(a, g, sb, sw);
        assert!((2.0 * a * root + sb * sb - g * g * root * root / (sw * sw)).abs() < 1e-15);
        assert!((root - 0.0556).abs() < 1e-4);
        let model = TargetModel::scalar_linear(a, g, sb, sw).unwrap();
        // first-order convergence of the stationary covariance in dt
        let err = |dt: f64| {
            let mut s = KalmanState::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
            for _ in 0..(30.0 / dt) as usize {
                s = kalman_bucy_step(&s, &model, Some(0.0), dt).unwrap();
            }
            (s.cov[(0, 0)] - root).abs()
        };
        let (coarse, fine) = (err(1e-2), err(1e-3));
        assert!(fine < 1e-4, "{fine}");
        assert!(coarse / fine > 8.0 && coarse / fine < 12.0, "{coarse} {fine}");
    }

    #[test]
    fn gain_is_the_linear_gain() {
        let model = TargetModel::white_noise_acceleration(1.0, 0.06).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[0.02, 0.01, 0.01, 0.3]);
        let s = KalmanState::new(vec![0.0, 6.0], cov.clone()).unwrap();
        let GainField::Constant(k) = gain::gain_linear(&[1.0, 0.0], &cov, 0.06).unwrap() else {
            panic!()
        };
        assert_eq!(s.gain(&model).unwrap(), k);
        assert!((k[0] - 0.02 / 0.0036).abs() < 1e-12);
    }

    #[test]
    fn covariance_stays_psd_from_singular_start() {
        let model = TargetModel::white_noise_acceleration(1.0, 0.06).unwrap();
        let mut s = KalmanState::new(vec![0.0, 6.0], DMatrix::zeros(2, 2)).unwrap();
        for k in 0..1000 {
            s = kalman_bucy_step(&s, &model, Some(0.06 * k as f64 * 1e-6), 0.001).unwrap();
            assert!(gain::check_psd(&s.cov).is_ok());
        }
    }

    #[test]
    fn nonlinear_model_is_rejected() {
        let model = TargetModel::new(
            crate::models::DriftMap::Scalar(crate::models::ScalarMap::Cubic(-1.0)),
            vec![0.1],
            crate::models::ObsMap::Scalar(crate::models::ScalarMap::Linear(1.0)),
            0.1,
        )
        .unwrap();
        let s = KalmanState::new(vec![0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(kalman_bucy_step(&s, &model, None, 0.01).is_err());
    }
}
