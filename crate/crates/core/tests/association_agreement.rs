//! The β SDE and the discrete Bayes update share their prior and innovation
//! structure. They part ways through two terms: the ĥ² − ĥ·ĥ variance term,
//! which the Bayes limit does not have, and the innovation weight
//! Σ_{j≥1} βʲ, which the Bayes limit takes as one. With the undetected
//! state pinned at zero and the variance term dropped, the two agree.

use fpf_core::association::{
    beta_bayes_step, beta_predict, beta_sde_terms, project_simplex, AssociationBelief, ClutterDensity,
};
use fpf_core::harness::config::Detection;
use fpf_core::harness::{run_scenario_observed, scenarios};

fn reduced_gap(seed: u64) -> f64 {
    let mut cfg = scenarios::linear_1d();
    cfg.channels = 2;
    cfg.detection = Detection::Chain;
    cfg.rate = 0.0;
    cfg.initial_association = Some(vec![0.0, 0.5, 0.5]);
    cfg.oracles.clear();
    cfg.seed = seed;
    let model = cfg.model.build().unwrap();
    let mut sde = AssociationBelief::new(cfg.initial_belief()).unwrap();
    let mut bayes = sde.clone();
    let mut gap = 0.0f64;
    run_scenario_observed(&cfg, |v| {
        let t = beta_sde_terms(&sde, &v.moments[0], v.batch, cfg.rate, cfg.dt, model.obs_noise)?;
        let mut next = sde.as_slice().to_vec();
        for m in 0..cfg.channels {
            next[m + 1] += t.prior[m] + t.innovation[m];
        }
        next[0] = 1.0 - next[1..].iter().sum::<f64>();
        project_simplex(&mut next)?;
        sde = AssociationBelief::new(next)?;
        let pred = beta_predict(&bayes, cfg.rate, cfg.dt);
        bayes = beta_bayes_step(
            &pred,
            &v.ensembles[0],
            v.batch,
            cfg.dt,
            ClutterDensity::WhiteNoise,
            model.obs_noise,
            &model.obs_map,
        )?
        .belief;
        for (a, b) in sde.as_slice().iter().zip(bayes.as_slice()) {
            gap = gap.max((a - b).abs());
        }
        Ok(())
    })
    .unwrap();
    gap
}

#[test]
fn sde_without_variance_term_tracks_bayes() {
    let gaps: Vec<f64> = (0..20).map(reduced_gap).collect();
    let ok = gaps.iter().filter(|g| **g <= 0.05).count();
    println!("reduced SDE vs Bayes gaps: {gaps:.3?}");
    assert!(ok >= 18, "{ok}/20 within 0.05: {gaps:?}");
}
