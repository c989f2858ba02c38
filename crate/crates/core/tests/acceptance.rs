//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The certificate is trained from the default configuration inside the
//! run. Set `SLUNGLOAD_ACCEPTANCE_LOGS=<dir>` to also write the CSV logs of
//! the two figure-8 runs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slungload_core::attitude::{geodesic_error, rot_step, torque, AttitudeGains, RotorState};
use slungload_core::dynamics::{assemble, build_b, cable_vector, mechanical_energy, state_derivative, step};
use slungload_core::math::{inf_norm, min_eig};
use slungload_core::neural_ccm::sample_training_states;
use slungload_core::neural_ccm::{
    controller, controller_jacobian, dual_metric, jacobian_a, loss_and_gradient, metric_derivative, train,
    Architecture, CertificateConstants, LossWeights, PreparedSample, TrainOutcome, TrainSample,
};
use slungload_core::simulator::{metrics, robustness_check, run, DisturbanceConfig, Metrics, SimLog};
use slungload_core::ude::projector;
use slungload_core::{
    CertificatePair, ControlVec, DistVec, FullState, Mat3, ScenarioConfig, StateVec, SystemParams, TrainConfig, Vec2,
    Vec3,
};

const TRAIN_SEED: u64 = 0;
const SCENARIO_SEED: u64 = 0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Runs `f` and prints its line. `setup` is shared work done beforehand
/// (training, the long runs) that counts towards the runtime; `limit` is the
/// runtime budget in seconds.
fn timed<F: FnOnce() -> (bool, String)>(name: &'static str, setup: Duration, limit: Option<f64>, f: F) -> Outcome {
    let start = Instant::now();
    let (mut pass, mut detail) = f();
    let elapsed = start.elapsed() + setup;
    if let Some(limit) = limit {
        if elapsed.as_secs_f64() > limit {
            pass = false;
            detail += &format!("; runtime over the {limit} s budget");
        }
    }
    let line = format!("{} {name}: {detail} [{:.2} s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    println!("{line}");
    Outcome { name, pass, detail }
}

fn random_cables(rng: &mut ChaCha8Rng, params: &SystemParams) -> Vec2 {
    let rad = params.max_projection() * rng.random::<f64>().sqrt();
    let ang = rng.random_range(0.0..std::f64::consts::TAU);
    Vec2::new(rad * ang.cos(), rad * ang.sin())
}

fn random_state(rng: &mut ChaCha8Rng, params: &SystemParams) -> FullState {
    let mut s = FullState(StateVec::from_fn(|_, _| rng.random_range(-1.0..1.0)));
    for j in 0..3 {
        let r = random_cables(rng, params) * 0.95;
        s.0.fixed_rows_mut::<2>(3 + 2 * j).copy_from(&r);
    }
    s
}

fn kinematics() -> (bool, String) {
    let params = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut b_res, mut p_res) = (0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let r = random_cables(&mut rng, &params);
        let l = cable_vector(&r, params.l, params.z_guard).unwrap();
        let b = build_b(&r, params.l, params.z_guard).unwrap();
        b_res = b_res.max((b.transpose() * l).amax());
        let p = projector(&r, params.l, params.z_guard).unwrap();
        p_res = p_res
            .max((p * p - p).amax())
            .max((p - p.transpose()).amax())
            .max((p * l).amax())
            .max((p.trace() - 2.0).abs());
    }
    (
        b_res < 1e-12 && p_res < 1e-12,
        format!("max |B^T l| = {b_res:.2e}, max projector residual = {p_res:.2e} on 1000 cables"),
    )
}

fn structural() -> (bool, String) {
    let params = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut spd = true;
    let mut min_eigenvalue = f64::INFINITY;
    let mut mdot_res = 0.0_f64;
    for i in 0..1000 {
        let s = random_state(&mut rng, &params);
        let sm = assemble(&params, &s).unwrap();
        let e = min_eig(&sm.m);
        min_eigenvalue = min_eigenvalue.min(e);
        spd &= sm.m == sm.m.transpose() && e > 0.0;
        if i % 10 == 0 {
            let dx = state_derivative(&params, &s, &ControlVec::zeros(), &DistVec::zeros()).unwrap();
            let h = 1e-6;
            let mp = assemble(&params, &FullState(s.0 + dx * h)).unwrap().m;
            let mm = assemble(&params, &FullState(s.0 - dx * h)).unwrap().m;
            mdot_res = mdot_res.max(inf_norm(&((mp - mm) / (2.0 * h) - sm.c - sm.c.transpose())));
        }
    }
    let s0 = FullState::new(
        Vec3::new(0.0, 0.0, 2.0),
        [Vec2::new(0.2, 0.1), Vec2::new(-0.2, 0.15), Vec2::new(0.05, -0.25)],
        ControlVec::from_column_slice(&[0.1, 0.0, 0.5, 0.3, -0.2, 0.1, 0.2, -0.3, 0.1]),
    );
    let e0 = mechanical_energy(&params, &s0).unwrap();
    let mut x = s0;
    let mut drift = 0.0_f64;
    for _ in 0..10_000 {
        x = step(&params, &x, &ControlVec::zeros(), &DistVec::zeros(), 1e-3).unwrap();
        drift = drift.max(((mechanical_energy(&params, &x).unwrap() - e0) / e0).abs());
    }
    (
        spd && mdot_res < 1e-5 && drift < 1e-6,
        format!(
            "M SPD on 1000 states ({spd}, min eig {min_eigenvalue:.3e}); |M' - C - C^T| = {mdot_res:.2e}; energy drift {drift:.2e} over 10 s"
        ),
    )
}

fn samples(n: usize, seed: u64) -> Vec<TrainSample> {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_training_states(&cfg.system, &cfg.reference().unwrap(), &cfg.sampling, n, &mut rng).unwrap()
}

fn rel(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8)
}

fn gradients() -> (bool, String) {
    let params = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cert = CertificatePair::init(&Architecture::default(), &CertificateConstants::default(), &mut rng).unwrap();
    cert.l_net.w2.iter_mut().for_each(|v| *v *= 5.0);
    let h = 1e-6;
    let probes = samples(20, 4);
    let dir = |rng: &mut ChaCha8Rng| StateVec::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();

    let mut worst_k = 0.0_f64;
    let mut worst_a = 0.0_f64;
    let mut worst_w = 0.0_f64;
    for s in &probes {
        let v = dir(&mut rng);
        let kp = controller(&cert, &FullState(s.x.0 + v * h), &s.x_star, &s.k_star);
        let km = controller(&cert, &FullState(s.x.0 - v * h), &s.x_star, &s.k_star);
        let an = controller_jacobian(&cert, &s.x, &s.x_star, &s.k_star) * v;
        worst_k = worst_k.max(((kp - km) / (2.0 * h) - an).norm() / an.norm());

        let zeta = controller(&cert, &s.x, &s.x_star, &s.k_star);
        let field = |x: StateVec| {
            let af = slungload_core::dynamics::affine_fields(&params, &FullState(x)).unwrap();
            af.f + af.g * zeta
        };
        let an = jacobian_a(&params, &cert, &s.x, &s.x_star, &s.k_star).unwrap() * v;
        let fd = (field(s.x.0 + v * h) - field(s.x.0 - v * h)) / (2.0 * h);
        worst_a = worst_a.max((fd - an).norm() / an.norm());

        let an = metric_derivative(&cert, &s.x, &v);
        let fd =
            (dual_metric(&cert, &FullState(s.x.0 + v * h)) - dual_metric(&cert, &FullState(s.x.0 - v * h))) / (2.0 * h);
        worst_w = worst_w.max((fd - an).norm() / an.norm());
    }

    // Loss gradient: a small batch with every hinge active.
    let mut cert = cert.clone();
    cert.w_upper = 0.5;
    let batch: Vec<PreparedSample> = samples(4, 5).iter().map(|s| PreparedSample::new(&params, s).unwrap()).collect();
    let w = LossWeights::default();
    let margin = 0.01;
    let (_, grads) = loss_and_gradient(&cert, &batch, &w, margin, true).unwrap();
    let grads = grads.unwrap();
    let mut worst_l = 0.0_f64;
    let mut n_loss = 0;
    for (net, g) in grads.nets().into_iter().enumerate() {
        for (slot, gs) in g.params().iter().enumerate() {
            for _ in 0..3 {
                let i = rng.random_range(0..gs.len());
                let eval = |delta: f64| {
                    let mut c = cert.clone();
                    let m = [&mut c.l_net, &mut c.k1_net, &mut c.k2_net].into_iter().nth(net).unwrap();
                    m.params_mut()[slot][i] += delta;
                    loss_and_gradient(&c, &batch, &w, margin, false).unwrap().0.total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                worst_l = worst_l.max(rel(fd, gs[i]));
                n_loss += 1;
            }
        }
    }
    let tol = 1e-4;
    (
        worst_k < tol && worst_a < tol && worst_w < tol && worst_l < tol && n_loss >= 20,
        format!(
            "max relative error: K {worst_k:.1e}, A {worst_a:.1e}, dW {worst_w:.1e} (20 probes each), loss {worst_l:.1e} ({n_loss} probes)"
        ),
    )
}

fn certificate(outcome: &TrainOutcome) -> (bool, String) {
    let v = &outcome.validation;
    let floor = outcome.history.last().map(|s| s.loss.total).unwrap_or(f64::NAN);
    let dual = v.loss.dual_c1 + v.loss.dual_c2;
    let pass = v.n_samples >= 5000 && v.joint_pass_rate >= 0.95 && dual <= floor;
    (
        pass,
        format!(
            "{} held-out samples: joint pass {:.2}% (contraction violations {:.2}%, bound violations {:.2}%); dual residual {:.2e} vs final training loss {:.2e}",
            v.n_samples,
            100.0 * v.joint_pass_rate,
            100.0 * v.violation_rate_eq11,
            100.0 * v.violation_rate_eq12,
            dual,
            floor
        ),
    )
}

fn saturation(m: &Metrics, f_b: f64) -> (bool, String) {
    (
        m.max_saturated_feedback < f_b && m.max_zeta_c <= m.zeta_bound,
        format!(
            "max |zeta_nn,sat - k*| = {:.4} < {f_b} over {} steps; max |zeta_c| = {:.3} <= {:.3}",
            m.max_saturated_feedback, m.rows, m.max_zeta_c, m.zeta_bound
        ),
    )
}

fn ude_convergence(log: &SimLog, m: &Metrics) -> (bool, String) {
    let pass = log.is_complete()
        && m.rows == 63_000
        && m.steady_state_delta_t_error < 0.05
        && m.steady_state_error < 0.05
        && m.v_e_violation_fraction <= 1e-3;
    (
        pass,
        format!(
            "final 5 s: mean |dT error| = {:.2e} N, mean payload error = {:.2e} m; V_e increases on {}/{} post-cutoff steps",
            m.steady_state_delta_t_error, m.steady_state_error, m.v_e_violations, m.v_e_checked_steps
        ),
    )
}

fn ablation(on: &Metrics, off: &Metrics, off_log: &SimLog) -> (bool, String) {
    let ratio = off.steady_state_error / on.steady_state_error;
    (
        off_log.is_complete() && ratio >= 2.0,
        format!(
            "final 5 s mean payload error: UDE off {:.3e} m vs on {:.3e} m (ratio {ratio:.1})",
            off.steady_state_error, on.steady_state_error
        ),
    )
}

fn attitude() -> (bool, String) {
    let g = AttitudeGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dt = 1e-3;
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let rot = |axis: Vec3, angle: f64| nalgebra::Rotation3::from_scaled_axis(axis * angle).into_inner();
    let mut worst = 0.0_f64;
    let mut largest_start = 0.0_f64;
    for _ in 0..100 {
        let r_d: Mat3 = rot(unit(&mut rng), rng.random_range(0.0..std::f64::consts::PI));
        let angle = rng.random_range(0.0..175f64.to_radians());
        largest_start = largest_start.max(angle);
        let mut s = RotorState { r: r_d * rot(unit(&mut rng), angle), omega: Vec3::zeros() };
        for _ in 0..5000 {
            let tau = torque(&g, &s, &r_d, &Vec3::zeros(), &Vec3::zeros());
            s = rot_step(&g, &s, &tau, dt);
        }
        worst = worst.max(geodesic_error(&s.r, &r_d));
    }
    let j = g.j();
    let mut s = RotorState { r: Mat3::identity(), omega: Vec3::new(3.0, -2.0, 1.0) };
    let energy = |w: &Vec3| 0.5 * w.dot(&(j * w));
    let e0 = energy(&s.omega);
    for _ in 0..10_000 {
        s = rot_step(&g, &s, &Vec3::zeros(), dt);
    }
    let drift = ((energy(&s.omega) - e0) / e0).abs();
    (
        worst < 1e-3 && drift < 1e-8,
        format!(
            "100 starts up to {:.1} deg: worst error after 5 s {worst:.2e} rad; free-body energy drift {drift:.2e} over 10 s",
            largest_start.to_degrees()
        ),
    )
}

fn robustness(cert: &CertificatePair) -> (bool, String) {
    let mut offset = [0.0; 18];
    offset[..3].copy_from_slice(&[0.3, -0.2, 0.1]);
    offset[9] = 0.2;
    let cfg = ScenarioConfig {
        name: "robustness".into(),
        ude_enabled: false,
        disturbance: DisturbanceConfig::constant_only(slungload_core::simulator::DEFAULT_DISTURBANCE),
        initial_offset: offset,
        seed: SCENARIO_SEED,
        ..Default::default()
    }
    .with_duration(20.0);
    let log = run(&cfg, cert).unwrap();
    let rep = robustness_check(&log, cert).unwrap();
    (
        log.is_complete() && rep.violations == 0,
        format!(
            "{} steps, {} above the bound (V_L(0) = {:.3}, d_bar = {:.3}, worst error/bound = {:.3})",
            rep.steps, rep.violations, rep.v_l0, rep.d_bar, rep.max_ratio
        ),
    )
}

fn main() -> ExitCode {
    let none = Duration::ZERO;
    let mut results = vec![
        timed("kinematics identities", none, Some(1.0), kinematics),
        timed("structural dynamics", none, Some(30.0), structural),
        timed("gradient checks", none, Some(120.0), gradients),
    ];

    let start = Instant::now();
    let trained = train(&TrainConfig::default(), TRAIN_SEED).expect("default training");
    let train_time = start.elapsed();
    results.push(timed("certificate verification", train_time, Some(7200.0), || certificate(&trained)));
    let cert = trained.cert;

    let on_cfg = ScenarioConfig { seed: SCENARIO_SEED, ..Default::default() };
    let off_cfg = ScenarioConfig { ude_enabled: false, ..on_cfg.clone() };
    let start = Instant::now();
    let on_log = run(&on_cfg, &cert).expect("UDE-on run");
    let on_time = start.elapsed();
    let start = Instant::now();
    let off_log = run(&off_cfg, &cert).expect("UDE-off run");
    let off_time = start.elapsed();
    let on = metrics(&on_log).expect("non-empty log");
    let off = metrics(&off_log).expect("non-empty log");
    if let Some(dir) = std::env::var_os("SLUNGLOAD_ACCEPTANCE_LOGS").map(PathBuf::from) {
        on_log.write_files(&dir, Some(on.clone())).expect("write UDE-on log");
        off_log.write_files(&dir, Some(off.clone())).expect("write UDE-off log");
        cert.save(&dir.join("certificate.json")).expect("write certificate");
    }

    results.push(timed("saturation bound", on_time, None, || saturation(&on, cert.f_b)));
    results.push(timed("UDE convergence", on_time, None, || ude_convergence(&on_log, &on)));
    results.push(timed("UDE ablation", on_time + off_time, None, || ablation(&on, &off, &off_log)));
    results.push(timed("attitude tracker", none, None, attitude));
    results.push(timed("robustness bound", none, None, || robustness(&cert)));

    let failed: Vec<_> = results.iter().filter(|r| !r.pass).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    for r in &failed {
        eprintln!("failed: {} ({})", r.name, r.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
