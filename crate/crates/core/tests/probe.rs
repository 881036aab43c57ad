//! Temporary debugging probes (not part of the shipped suite).

use ddsmpc::controller::{synthesize, OnlineController};
use ddsmpc::geometry::Polytope;
use ddsmpc::harness::{CampaignConfig, MONTE_CARLO_BASE, STREAM_DATA};
use ddsmpc::plant::{collect_data, paper_plant};
use ddsmpc::rng::stream;
use nalgebra::DVector;
use rand::Rng;

#[test]
#[ignore]
fn find_failing_run() {
    let cfg = CampaignConfig::paper_5_1();
    let idx = 0usize; // eps = 0.0001
    let eps = cfg.noise_bounds[idx];
    let seed = cfg.scenario_seed(idx);
    let plant = paper_plant(eps, cfg.std_factor).unwrap();
    let mut data_rng = stream(seed, STREAM_DATA);
    let (data, _) = collect_data(
        &plant,
        cfg.data_len,
        &Polytope::inf_ball(1, cfg.u_bound),
        cfg.horizon,
        &DVector::zeros(2),
        &mut data_rng,
    )
    .unwrap();
    let synth_cfg = cfg.synthesis_config(eps, seed).unwrap();
    let (artifact, report) = synthesize(&data, &synth_cfg).unwrap();
    eprintln!(
        "synth ok: rows {} -> {}, shrink {}",
        report.raw_rows, report.reduced_rows, report.bound_shrink
    );
    for run in 0..cfg.runs {
        let mut rng = stream(seed, MONTE_CARLO_BASE + run as u64);
        let x0 = loop {
            let cand =
                DVector::from_fn(2, |_, _| rng.gen_range(-cfg.x0_radius..=cfg.x0_radius));
            if artifact.init_set.contains(&cand) {
                break cand;
            }
        };
        let mut ctrl = OnlineController::new(&artifact).unwrap();
        let mut x = x0.clone();
        for k in 0..cfg.steps {
            let xhat = &x + artifact.noise.sample(&mut rng).unwrap();
            match ctrl.online_step(&xhat) {
                Ok(ddsmpc::controller::StepOutcome::Feasible(dec)) => {
                    x = &plant.a * &x + &plant.b * &dec.u0;
                }
                Ok(_) => {
                    eprintln!("run {run} step {k}: infeasible at xhat = {:?}", xhat.as_slice());
                    break;
                }
                Err(e) => {
                    eprintln!(
                        "run {run} step {k}: ERROR {e}\n  xhat = {:?}\n  x = {:?}\n  x0 = {:?}",
                        xhat.as_slice(),
                        x.as_slice(),
                        x0.as_slice()
                    );
                    panic!("reproduced");
                }
            }
        }
        if run % 20 == 0 {
            eprintln!("run {run} ok");
        }
    }
    eprintln!("no failure reproduced");
}
