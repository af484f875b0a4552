//! Side-by-side run of a scalar PDA-FPF and the grid K-S solver on one
//! measurement stream, reporting the L1 distance between the binned
//! particles and the grid posterior.

use serde::{Deserialize, Serialize};

use crate::association::{beta_sde_step, AssociationBelief};
use crate::error::{Error, Result};
use crate::fpf::{compute_gain, estimate_moments, fpf_step, GainMode, ParticleEnsemble};
use crate::models::{emit_measurements, step_association, step_truth, AssociationProcess, TargetModel, TruthState};
use crate::reference::grid::{ks_grid_step, GridDensity};
use crate::rng::{Entity, Stream};

/// How the association probabilities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyAssociation {
    /// Target always on channel 1 and `β¹ ≡ 1` (requires one channel).
    Known,
    /// Association chain over `0..=M`; β from the SDE filter, driven by the
    /// particle moments and shared with the grid.
    Sde,
}

#[derive(Debug, Clone)]
pub struct ConsistencyConfig {
    pub model: TargetModel,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub channels: usize,
    pub rate: f64,
    pub association: ConsistencyAssociation,
    pub horizon: f64,
    pub dt: f64,
    pub particles: usize,
    pub cells: usize,
    pub extent_sigmas: f64,
    pub gain: GainMode,
    pub seed: u64,
    /// Number of evenly spaced report times (the last one is `T`).
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    /// Ensemble and grid means at the report times.
    pub particle_mean: Vec<f64>,
    pub grid_mean: Vec<f64>,
}

impl ConsistencyReport {
    pub fn final_l1(&self) -> f64 {
        *self.l1.last().unwrap_or(&f64::NAN)
    }
}

pub fn consistency_check(cfg: &ConsistencyConfig) -> Result<ConsistencyReport> {
    if cfg.model.dim() != 1 {
        return Err(Error::config("consistency check needs a scalar model"));
    }
    if cfg.association == ConsistencyAssociation::Known && cfg.channels != 1 {
        return Err(Error::config("known association needs exactly one channel"));
    }
    if !(cfg.dt > 0.0 && cfg.horizon >= cfg.dt) || cfg.particles < 2 || cfg.samples == 0 {
        return Err(Error::config(
            "consistency check needs dt > 0, T >= dt, N >= 2, samples >= 1",
        ));
    }
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let every = (steps / cfg.samples).max(1);
    let m = cfg.channels;

    let mut truth_init = Stream::new(cfg.seed, Entity::TruthInit(0));
    let mut truth_noise = Stream::new(cfg.seed, Entity::TruthDynamics(0));
    let mut chain_noise = Stream::new(cfg.seed, Entity::Association);
    let mut meas_noise = Stream::new(cfg.seed, Entity::MeasurementNoise);
    let mut particle_noise = Stream::new(cfg.seed, Entity::ParticleNoise(0));
    let mut prior = Stream::new(cfg.seed, Entity::Prior(0));

    let x0 = cfg.prior_mean + cfg.prior_std * truth_init.normal();
    let start = match cfg.association {
        ConsistencyAssociation::Known => 1,
        ConsistencyAssociation::Sde => 1 + (truth_init.uniform() * m as f64) as usize % m,
    };
    let mut chain = AssociationProcess::new(m + 1, cfg.rate, start)?;
    if cfg.association == ConsistencyAssociation::Known {
        chain.rate = 0.0;
    }
    let mut truth = TruthState {
        time: 0.0,
        targets: vec![vec![x0]],
        association: start,
    };
    let mut belief = match cfg.association {
        ConsistencyAssociation::Known => AssociationBelief::certain(1, 1),
        ConsistencyAssociation::Sde => AssociationBelief::uniform(m),
    };

    let xs: Vec<f64> = prior
        .normals(cfg.particles)
        .iter()
        .map(|z| cfg.prior_mean + cfg.prior_std * z)
        .collect();
    let mut ens = ParticleEnsemble::from_scalars(xs)?;
    let mut grid = GridDensity::gaussian(cfg.prior_mean, cfg.prior_std, cfg.extent_sigmas, cfg.cells)?;
    let models = std::slice::from_ref(&cfg.model);

    let mut report = ConsistencyReport {
        times: Vec::new(),
        l1: Vec::new(),
        particle_mean: Vec::new(),
        grid_mean: Vec::new(),
    };
    let mut noise = vec![0.0; cfg.particles];
    for step in 0..steps {
        let wrap = |e: Error| e.at_step(step, "consistency");
        let batch = emit_measurements(models, &truth, m, cfg.dt, &meas_noise.normals(m)).map_err(wrap)?;
        truth.targets[0] = step_truth(&cfg.model, &truth.targets[0], cfg.dt, &[truth_noise.normal()]).map_err(wrap)?;
        chain.current = step_association(&chain, cfg.dt, chain_noise.uniform());
        truth.association = chain.current;
        truth.time += cfg.dt;

        let moments = estimate_moments(&ens, &cfg.model.obs_map);
        let gain = compute_gain(&ens, &moments, &cfg.model, cfg.gain, None).map_err(wrap)?;
        particle_noise.fill_normal(&mut noise);
        let next = fpf_step(&ens, &cfg.model, &belief, &gain, &batch, cfg.dt, &noise).map_err(wrap)?;
        grid = ks_grid_step(&grid, &cfg.model, &belief, &batch, cfg.dt)
            .map_err(wrap)?
            .density;
        if cfg.association == ConsistencyAssociation::Sde {
            belief = beta_sde_step(&belief, &moments, &batch, cfg.rate, cfg.dt, cfg.model.obs_noise)
                .map_err(wrap)?
                .belief;
        }
        ens = next;

        if (step + 1) % every == 0 || step + 1 == steps {
            let hist = grid.histogram(ens.iter().map(|x| x[0]));
            report.times.push((step + 1) as f64 * cfg.dt);
            report.l1.push(grid.l1_distance(&hist));
            report.particle_mean.push(ens.mean()[0]);
            report.grid_mean.push(grid.mean());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(association: ConsistencyAssociation, channels: usize) -> ConsistencyConfig {
        ConsistencyConfig {
            model: TargetModel::scalar_linear(-0.5, 1.0, 0.3, 0.3).unwrap(),
            prior_mean: 0.5,
            prior_std: 0.5,
            channels,
            rate: 1.0,
            association,
            horizon: 0.2,
            dt: 1e-3,
            particles: 2000,
            cells: 200,
            extent_sigmas: 8.0,
            gain: GainMode::Linear,
            seed: 4,
            samples: 4,
        }
    }

    #[test]
    fn uninformative_run_is_sampling_error_only() {
        // huge σ_W: both sides evolve by the forward equation alone
        let mut cfg = base(ConsistencyAssociation::Known, 1);
        cfg.model = TargetModel::scalar_linear(-0.5, 1.0, 0.3, 1e6).unwrap();
        let r = consistency_check(&cfg).unwrap();
        // E Σ|n_k/N − p_k| ≤ Σ √(p_k/N) ≤ √(cells/N)
        let bound = (cfg.cells as f64 / cfg.particles as f64).sqrt();
        assert!(r.final_l1() < bound, "{} vs {bound}", r.final_l1());
        assert_eq!(r.times.len(), 4);
    }

    #[test]
    fn pda_run_completes() {
        let r = consistency_check(&base(ConsistencyAssociation::Sde, 2)).unwrap();
        assert!(r.l1.iter().all(|v| v.is_finite() && *v <= 2.0));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(consistency_check(&base(ConsistencyAssociation::Known, 2)).is_err());
        let mut cfg = base(ConsistencyAssociation::Known, 1);
        cfg.dt = 0.0;
        assert!(consistency_check(&cfg).is_err());
    }
}
