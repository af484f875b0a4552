//! End-to-end scenario execution: truth, measurements, filter and oracles
//! advanced in lockstep on one stream.

use rayon::prelude::*;

use crate::association::{
    beta_bayes_step, beta_predict, beta_predict_detected, beta_sde_step, jpda_signals, marginals_from_joint,
    pda_signals, pi_bayes_step, pi_predict, pi_sde_step, wonham_step, AssociationBelief, ClutterDensity,
    JointAssociationBelief,
};
use crate::error::{Error, Result};
use crate::fpf::{compute_gain, estimate_moments, fpf_step, MomentEstimates, ParticleEnsemble};
use crate::harness::config::{AssocMode, ClutterSpec, Detection, Oracle, ScenarioConfig};
use crate::models::{
    channel_sources, emit_clutter_measurements, emit_measurements, intensity_matrix, step_association, step_truth,
    AssociationProcess, MeasurementBatch, TargetModel, TruthState,
};
use crate::reference::grid::{ks_grid_step, GridDensity};
use crate::reference::kalman::{kalman_bucy_step, KalmanState};
use crate::rng::{Entity, Stream};

/// Everything recorded after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub truth: Vec<Vec<f64>>,
    /// Truth association that generated this step's measurements.
    pub association: usize,
    /// Measurement increments divided by `dt`.
    pub meas: Vec<f64>,
    pub est_mean: Vec<Vec<f64>>,
    /// Ensemble variance of the first state component, per target.
    pub est_var: Vec<f64>,
    /// β (`M+1` entries) or π (2 entries) after the step.
    pub belief: Vec<f64>,
    pub kalman_mean: Vec<Vec<f64>>,
    pub kalman_var: Vec<f64>,
    /// Grid posterior mean and variance.
    pub grid: Option<(f64, f64)>,
    /// Wonham posterior over `0..=M` (single target) or `{1,2}`.
    pub wonham: Option<Vec<f64>>,
    /// L1 mass moved by the simplex projection in the belief update.
    pub correction: f64,
    pub substeps: usize,
    pub underflow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub rows: Vec<StepRecord>,
}

/// Truth association chain; `association = current + offset`.
struct TruthChain {
    process: Option<AssociationProcess>,
    offset: usize,
}

impl TruthChain {
    fn association(&self) -> usize {
        self.process.as_ref().map_or(0, |p| p.current) + self.offset
    }
}

#[derive(Clone)]
enum Belief {
    Single(AssociationBelief),
    Joint(JointAssociationBelief),
}

impl Belief {
    fn values(&self) -> Vec<f64> {
        match self {
            Belief::Single(b) => b.as_slice().to_vec(),
            Belief::Joint(j) => j.pi.to_vec(),
        }
    }
}

struct Wonham {
    q: Vec<f64>,
    intensity: nalgebra::DMatrix<f64>,
    /// Chain state `k` corresponds to association `k + offset`.
    offset: usize,
}

/// What an observer sees at each step, before the particles move.
pub struct StepView<'a> {
    pub step: usize,
    /// Truth that generated `batch`.
    pub truth: &'a TruthState,
    pub batch: &'a MeasurementBatch,
    pub ensembles: &'a [ParticleEnsemble],
    pub moments: &'a [MomentEstimates],
    /// β or π after this step's update.
    pub belief: &'a [f64],
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunRecord> {
    run_scenario_observed(config, |_| Ok(()))
}

/// [`run_scenario`] with a callback per step; an error from the callback
/// aborts the run.
pub fn run_scenario_observed(
    config: &ScenarioConfig,
    mut observe: impl FnMut(&StepView) -> Result<()>,
) -> Result<RunRecord> {
    config.validate()?;
    let cfg = config;
    let seed = cfg.seed;
    let model = cfg.model.build()?;
    let targets = cfg.kind.num_targets();
    let d = model.dim();
    let m = cfg.channels;
    let dt = cfg.dt;
    let models = vec![model.clone(); targets];
    let prior_cov = cfg.prior_cov_matrix();
    let oracles = cfg.oracle_set();

    // truth
    let mut chain_noise = Stream::new(seed, Entity::Association);
    let mut truth_targets = Vec::with_capacity(targets);
    for n in 0..targets {
        let x = match &cfg.truth_init {
            Some(t) => t[n].clone(),
            None => {
                let mut s = Stream::new(seed, Entity::TruthInit(n));
                ParticleEnsemble::from_gaussian(&cfg.prior_mean[n], &prior_cov, 2, &mut s)?
                    .particle(0)
                    .to_vec()
            }
        };
        truth_targets.push(x);
    }
    let (states, offset) = if targets == 2 {
        (2, 1)
    } else {
        match cfg.detection {
            Detection::Chain => (m + 1, 0),
            Detection::Always => (m, 1),
        }
    };
    let u = chain_noise.uniform();
    let process = if states >= 2 {
        Some(AssociationProcess::new(
            states,
            cfg.rate,
            ((u * states as f64) as usize).min(states - 1),
        )?)
    } else {
        None
    };
    let mut chain = TruthChain { process, offset };
    let mut truth = TruthState {
        time: 0.0,
        targets: truth_targets,
        association: chain.association(),
    };
    let mut truth_noise: Vec<Stream> = (0..targets)
        .map(|n| Stream::new(seed, Entity::TruthDynamics(n)))
        .collect();
    let mut meas_noise = Stream::new(seed, Entity::MeasurementNoise);
    let mut clutter_noise = Stream::new(seed, Entity::Clutter);

    // filter
    let mut ensembles = Vec::with_capacity(targets);
    for n in 0..targets {
        let mut s = Stream::new(seed, Entity::Prior(n));
        ensembles.push(ParticleEnsemble::from_gaussian(
            &cfg.prior_mean[n],
            &prior_cov,
            cfg.particles,
            &mut s,
        )?);
    }
    let mut particle_noise: Vec<Stream> = (0..targets)
        .map(|n| Stream::new(seed, Entity::ParticleNoise(n)))
        .collect();
    let mut belief = if targets == 2 {
        Belief::Joint(JointAssociationBelief::new(cfg.initial_belief()[0])?)
    } else {
        Belief::Single(AssociationBelief::new(cfg.initial_belief())?)
    };
    let clutter_density = match cfg.clutter {
        ClutterSpec::Noise => ClutterDensity::WhiteNoise,
        ClutterSpec::Uniform { lo, hi } => ClutterDensity::Uniform { volume: (hi - lo) * dt },
    };

    // oracles
    let mut kalman: Vec<KalmanState> = Vec::new();
    if oracles.contains(&Oracle::Kalman) {
        for n in 0..targets {
            kalman.push(KalmanState::new(cfg.prior_mean[n].clone(), prior_cov.clone())?);
        }
    }
    let mut grid = if oracles.contains(&Oracle::Grid) {
        Some(GridDensity::gaussian(
            cfg.prior_mean[0][0],
            prior_cov[(0, 0)].sqrt(),
            cfg.grid_extent_sigmas,
            cfg.grid_cells,
        )?)
    } else {
        None
    };
    let mut wonham = if oracles.contains(&Oracle::Wonham) && states >= 2 {
        Some(Wonham {
            q: vec![1.0 / states as f64; states],
            intensity: intensity_matrix(states, cfg.rate),
            offset,
        })
    } else {
        None
    };

    let steps = cfg.steps();
    let mut rows = Vec::with_capacity(steps);
    let mut noise = vec![0.0; cfg.particles * d];
    for step in 0..steps {
        let at = |entity: &'static str| move |e: Error| e.at_step(step, entity);
        let assoc_now = truth.association;

        let batch = match cfg.clutter {
            ClutterSpec::Uniform { lo, hi } => {
                let z = meas_noise.normals(m);
                let u = clutter_noise.uniforms(m);
                emit_clutter_measurements(&model, &truth, m, dt, &z, (lo, hi), &u)
            }
            ClutterSpec::Noise => emit_measurements(&models, &truth, m, dt, &meas_noise.normals(m)),
        }
        .map_err(at("measurements"))?;

        // oracles see the truth that generated this batch
        let wonham_row = match wonham.as_mut() {
            Some(w) => {
                let h: Vec<f64> = truth.targets.iter().map(|x| model.obs_map.eval(x)).collect();
                let table = if targets == 2 {
                    jpda_signals(h[0], h[1])
                } else {
                    pda_signals(h[0], m)[w.offset..].to_vec()
                };
                let up = wonham_step(&w.q, &table, &batch.channels, &w.intensity, dt, model.obs_noise)
                    .map_err(at("wonham oracle"))?;
                w.q = up.belief;
                let mut full = vec![0.0; w.offset];
                full.extend_from_slice(&w.q);
                Some(if targets == 2 { w.q.clone() } else { full })
            }
            None => None,
        };
        if !kalman.is_empty() {
            let sources = channel_sources(targets, m, assoc_now);
            for (n, state) in kalman.iter_mut().enumerate() {
                let dz = sources.iter().position(|s| *s == Some(n)).map(|c| batch.channels[c]);
                *state = kalman_bucy_step(state, &model, dz, dt).map_err(at("kalman oracle"))?;
            }
        }

        // filter: the SDE filters use β at the start of the step, the
        // discrete Bayes update conditions on this step's batch first
        let moments: Vec<MomentEstimates> = ensembles.iter().map(|e| estimate_moments(e, &model.obs_map)).collect();
        let before = belief.clone();
        let (correction, substeps, underflow) =
            update_belief(&mut belief, cfg, &model, &ensembles, &moments, &batch, clutter_density)
                .map_err(at("association"))?;
        let used = if cfg.association == AssocMode::Bayes {
            &belief
        } else {
            &before
        };
        observe(&StepView {
            step,
            truth: &truth,
            batch: &batch,
            ensembles: &ensembles,
            moments: &moments,
            belief: &belief.values(),
        })?;

        let grid_row = match (&mut grid, used) {
            (Some(g), Belief::Single(b)) => {
                *g = ks_grid_step(g, &model, b, &batch, dt)
                    .map_err(at("grid oracle"))?
                    .density;
                Some((g.mean(), g.variance()))
            }
            _ => None,
        };
        let mut next = Vec::with_capacity(targets);
        for n in 0..targets {
            let beliefs = match used {
                Belief::Single(b) => b.clone(),
                Belief::Joint(j) => marginals_from_joint(j, n + 1)?,
            };
            let g = compute_gain(&ensembles[n], &moments[n], &model, cfg.gain, cfg.bandwidth).map_err(at("gain"))?;
            particle_noise[n].fill_normal(&mut noise);
            next.push(fpf_step(&ensembles[n], &model, &beliefs, &g, &batch, dt, &noise).map_err(at("particles"))?);
        }
        ensembles = next;

        // truth advance
        for (n, x) in truth.targets.iter_mut().enumerate() {
            *x = step_truth(&model, x, dt, &truth_noise[n].normals(d)).map_err(at("truth"))?;
        }
        if let Some(p) = chain.process.as_mut() {
            p.current = step_association(p, dt, chain_noise.uniform());
        }
        truth.association = chain.association();
        truth.time = (step + 1) as f64 * dt;

        let mut est_mean = Vec::with_capacity(targets);
        let mut est_var = Vec::with_capacity(targets);
        for e in &ensembles {
            est_mean.push(e.mean());
            est_var.push(e.covariance()[(0, 0)]);
        }
        rows.push(StepRecord {
            time: truth.time,
            truth: truth.targets.clone(),
            association: assoc_now,
            meas: batch.channels.iter().map(|z| z / dt).collect(),
            est_mean,
            est_var,
            belief: belief.values(),
            kalman_mean: kalman.iter().map(|k| k.mean.clone()).collect(),
            kalman_var: kalman.iter().map(|k| k.cov[(0, 0)]).collect(),
            grid: grid_row,
            wonham: wonham_row,
            correction,
            substeps,
            underflow,
        });
    }
    Ok(RunRecord {
        config: cfg.clone(),
        rows,
    })
}

fn update_belief(
    belief: &mut Belief,
    cfg: &ScenarioConfig,
    model: &TargetModel,
    ensembles: &[ParticleEnsemble],
    moments: &[MomentEstimates],
    batch: &MeasurementBatch,
    clutter: ClutterDensity,
) -> Result<(f64, usize, bool)> {
    let (c, dt, sw) = (cfg.rate, cfg.dt, model.obs_noise);
    match (cfg.association, belief) {
        (AssocMode::Fixed, _) => Ok((0.0, 1, false)),
        (AssocMode::Sde, Belief::Single(b)) => {
            let up = beta_sde_step(b, &moments[0], batch, c, dt, sw)?;
            *b = up.belief;
            Ok((up.correction, up.substeps, up.underflow))
        }
        (AssocMode::Bayes, Belief::Single(b)) => {
            let pred = match cfg.detection {
                Detection::Always => beta_predict_detected(b, c, dt),
                Detection::Chain => beta_predict(b, c, dt),
            };
            let up = beta_bayes_step(&pred, &ensembles[0], batch, dt, clutter, sw, &model.obs_map)?;
            *b = up.belief;
            Ok((up.correction, up.substeps, up.underflow))
        }
        (AssocMode::Sde, Belief::Joint(j)) => {
            let up = pi_sde_step(j, &moments[0], &moments[1], batch, c, dt, sw)?;
            *j = up.belief;
            Ok((up.correction, up.substeps, up.underflow))
        }
        (AssocMode::Bayes, Belief::Joint(j)) => {
            let pred = pi_predict(j, c, dt);
            let up = pi_bayes_step(&pred, &ensembles[0], &ensembles[1], batch, dt, sw, &model.obs_map)?;
            *j = up.belief;
            Ok((up.correction, up.substeps, up.underflow))
        }
    }
}

/// Runs seeds `seed, seed+1, …, seed+count−1` in parallel; results are in
/// seed order.
pub fn run_batch(config: &ScenarioConfig, count: usize) -> Result<Vec<RunRecord>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(k);
            run_scenario(&c)
        })
        .collect()
}
