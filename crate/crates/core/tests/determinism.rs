use std::time::Instant;

use fpf_core::harness::{run_csv, run_scenario, scenarios, ScenarioConfig};

fn csv_with_threads(cfg: &ScenarioConfig, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_csv(&run_scenario(cfg).unwrap()))
}

#[test]
fn output_bytes_do_not_depend_on_thread_count() {
    for name in scenarios::NAMES {
        let mut cfg = scenarios::bundled(name).unwrap();
        cfg.seed = 11;
        cfg.horizon = 50.0 * cfg.dt;
        let one = csv_with_threads(&cfg, 1);
        assert_eq!(one, csv_with_threads(&cfg, 4), "{name}");
        assert_eq!(one, csv_with_threads(&cfg, 1), "{name}");
    }
}

#[test]
fn seeds_change_the_stream() {
    let mut cfg = scenarios::linear_1d();
    cfg.horizon = 0.05;
    let a = run_csv(&run_scenario(&cfg).unwrap());
    cfg.seed += 1;
    assert_ne!(a, run_csv(&run_scenario(&cfg).unwrap()));
}

#[test]
fn bundled_scenarios_run_at_desk_scale() {
    for name in scenarios::NAMES {
        let start = Instant::now();
        let rec = run_scenario(&scenarios::bundled(name).unwrap()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        println!("{name}: {} rows in {secs:.2} s", rec.rows.len());
        assert!(secs <= 60.0, "{name} took {secs:.1} s");
    }
}
