mod common;

use casida_core::dynamics::{
    duhamel_residual, linearized_propagator_apply, propagate_linearized, propagate_nonlinear, propagate_orbitals,
    Drive, LinearizedFlow, Pulse,
};
use casida_core::la;
use casida_core::linops::assemble;
use casida_core::Error;
use ndarray::{s, Array1, Array2};
use num_complex::Complex64 as c64;

fn perp_state(seed: u64) -> Array2<c64> {
    let (m, gs) = common::small_system();
    let mut rng = common::rng(seed);
    let u = common::random_variation(&mut rng, m.grid().n(), 2);
    common::project_out(gs.psi(), m.grid().weight(), &u)
}

fn dipole_drive(pulse: Pulse, eps: f64) -> Drive {
    let (m, _) = common::small_system();
    Drive::new(pulse, m.grid().x().clone(), eps).unwrap()
}

#[test]
fn pulses_are_causal() {
    for p in [Pulse::Off, Pulse::Step, Pulse::Gaussian { t0: 0.0, sigma: 1.0 }, Pulse::Sinusoid { omega0: 2.0 }] {
        assert_eq!(p.eval(-1e-12), 0.0);
        assert_eq!(p.eval(-5.0), 0.0);
    }
    assert!(Drive::new(Pulse::Step, Array1::zeros(3), -1.0).is_err());
    assert!(Drive::new(Pulse::Gaussian { t0: 1.0, sigma: 0.0 }, Array1::zeros(3), 1.0).is_err());
}

#[test]
fn undriven_ground_state_is_stationary() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let drive = dipole_drive(Pulse::Off, 0.0);
    let traj = propagate_nonlinear(m, gs, &drive, 5.0, 0.01, 50).unwrap();
    assert_eq!(traj.times[0], 0.0);
    assert!(traj.states[0].iter().all(|z| z.norm() == 0.0));
    let worst = traj.norms(h).into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
    assert!(duhamel_residual(&traj, gs, m, &drive).unwrap() < 1e-8);

    let psi0 = gs.psi_complex();
    let fwd = propagate_orbitals(m, &drive, psi0.view(), 0.0, 0.01, 300).unwrap();
    let back = propagate_orbitals(m, &drive, fwd.view(), 3.0, -0.01, 300).unwrap();
    assert!(common::wnorm(&(&back - &psi0), h) < 1e-9);
}

#[test]
fn nonlinear_propagation_conserves_norms() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let drive = dipole_drive(Pulse::Gaussian { t0: 1.0, sigma: 0.3 }, 0.05);
    let psi0 = gs.psi_complex();
    let psi = propagate_orbitals(m, &drive, psi0.view(), 0.0, 0.01, 400).unwrap();
    for i in 0..2 {
        let nrm = h * psi.column(i).iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((nrm - 1.0).abs() < 4e-8, "{nrm}");
    }
    assert!(propagate_orbitals(m, &drive, psi0.view(), 0.0, 0.0, 1).is_err());
}

#[test]
fn crank_nicolson_is_second_order() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let drive = dipole_drive(Pulse::Gaussian { t0: 1.0, sigma: 0.3 }, 0.05);
    let psi0 = gs.psi_complex();
    let run = |dt: f64| propagate_orbitals(m, &drive, psi0.view(), 0.0, dt, (2.0 / dt).round() as usize).unwrap();
    let a = run(0.02);
    let b = run(0.01);
    let c = run(0.005);
    let ratio = common::wnorm(&(&a - &b), h) / common::wnorm(&(&b - &c), h);
    assert!((ratio - 4.0).abs() < 0.4, "{ratio}");
}

#[test]
fn weak_kick_follows_linear_response() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let pulse = Pulse::Gaussian { t0: 0.5, sigma: 0.1 };
    let eps = 1e-3;
    let nl = propagate_nonlinear(m, gs, &dipole_drive(pulse, eps), 4.0, 0.002, 500).unwrap();
    let lin = propagate_linearized(gs, m, &dipole_drive(pulse, 1.0), 4.0, 1.0).unwrap();
    for (k, t) in lin.times.iter().enumerate().skip(1) {
        let j = nl.times.iter().position(|s| (s - t).abs() < 1e-9).unwrap();
        let err = common::wnorm(&(&nl.states[j] - &lin.states[k]), h) / common::wnorm(&lin.states[k], h);
        assert!(err < 0.05, "t = {t}: {err}");
    }
}

#[test]
fn propagator_identity_and_group_law() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let u = perp_state(3);
    let same = linearized_propagator_apply(gs, m, 0.0, u.view()).unwrap();
    assert!(common::wnorm(&(&same - &u), h) < 1e-12 * common::wnorm(&u, h));
    let flow = LinearizedFlow::new(m, gs, 1.0).unwrap();
    let ab = flow.apply(1.3, flow.apply(0.4, u.view()).unwrap().view()).unwrap();
    let direct = flow.apply(1.7, u.view()).unwrap();
    assert!(common::wnorm(&(&ab - &direct), h) < 1e-9 * common::wnorm(&u, h));
}

#[test]
fn propagator_rejects_occupied_components() {
    let (m, gs) = common::small_system();
    let u = &perp_state(4) + &gs.psi_complex();
    assert!(matches!(linearized_propagator_apply(gs, m, 1.0, u.view()), Err(Error::NotPerp(_))));
}

#[test]
fn bare_propagator_is_a_phase() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let flow = LinearizedFlow::new(m, gs, 0.0).unwrap();
    let lev = &gs.spectrum().values;
    for (i, a) in [(0usize, 3usize), (1, 6)] {
        let mut u = Array2::<c64>::zeros((m.grid().n(), 2));
        for x in 0..m.grid().n() {
            u[[x, i]] = c64::new(gs.spectrum().vectors[[x, a]], 0.0);
        }
        let w = lev[a] - lev[gs.occupied()[i]];
        let t = 2.7;
        let out = flow.apply(t, u.view()).unwrap();
        let expect = &u * c64::from_polar(1.0, -w * t);
        assert!(common::wnorm(&(&out - &expect), h) < 1e-10);
    }
}

#[test]
fn sandwich_is_isometric_and_energy_is_conserved() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let flow = LinearizedFlow::new(m, gs, 1.0).unwrap();
    let v = perp_state(5);
    let u0 = perp_state(6);
    let e0 = flow.energy(u0.view()).unwrap();
    for t in [0.1, 1.0, 10.0] {
        let out = flow.apply_sandwich(t, v.view()).unwrap();
        let ratio = common::wnorm(&out, h) / common::wnorm(&v, h);
        assert!((ratio - 1.0).abs() < 1e-10);
        let ut = flow.apply(t, u0.view()).unwrap();
        assert!(common::rel(flow.energy(ut.view()).unwrap(), e0) < 1e-9);
    }
    let times: Vec<f64> = (0..=20).map(|k| 5.0 * k as f64).collect();
    let amp = flow.h2_amplification(m, &times).unwrap();
    assert!(amp.is_finite() && amp >= 1.0 - 1e-12);
}

#[test]
fn linearized_special_drives() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let n = m.grid().n();
    let flat = Drive::new(Pulse::Gaussian { t0: 1.0, sigma: 0.5 }, Array1::from_elem(n, 0.7), 1.0).unwrap();
    let traj = propagate_linearized(gs, m, &flat, 4.0, 0.5).unwrap();
    for u in &traj.states {
        let perp = common::project_out(gs.psi(), h, u);
        assert!(common::wnorm(&perp, h) < 1e-12);
    }
    for d in &traj.densities {
        assert!(common::max_abs(d.iter().cloned()) < 1e-12);
    }
    let off = dipole_drive(Pulse::Off, 1.0);
    let traj = propagate_linearized(gs, m, &off, 4.0, 0.5).unwrap();
    assert!(traj.states.iter().all(|u| u.iter().all(|z| z.norm() == 0.0)));
}

/// RK4 on `dU/dt = -J (M_dyn U + f V_P Psi0)` in real/imaginary coordinates.
fn ode_reference(dt: f64, t_end: f64, every: usize, drive: &Drive) -> Vec<Array2<c64>> {
    let (m, gs) = common::small_system();
    let n = m.grid().n();
    let d = 2 * n;
    let ops = assemble(gs, m).unwrap();
    let mr = ops.m_dyn.reim_matrix();
    let mut gen = Array2::<f64>::zeros((2 * d, 2 * d));
    gen.slice_mut(s![..d, ..]).assign(&mr.slice(s![d.., ..]));
    gen.slice_mut(s![d.., ..]).assign(&(-&mr.slice(s![..d, ..])));
    let mut src = Array1::<f64>::zeros(2 * d);
    for i in 0..2 {
        for x in 0..n {
            src[i * n + x] = drive.v_p()[x] * gs.psi()[[x, i]];
        }
    }
    let force = src.slice(s![..d]).to_owned();
    let rhs = |t: f64, w: &Array1<f64>| -> Array1<f64> {
        let mut out = gen.dot(w);
        out.slice_mut(s![d..]).scaled_add(-drive.f(t), &force);
        out
    };
    let unpack = |w: &Array1<f64>| Array2::from_shape_fn((n, 2), |(x, i)| c64::new(w[i * n + x], w[d + i * n + x]));
    let steps = (t_end / dt).round() as usize;
    let mut w = Array1::<f64>::zeros(2 * d);
    let mut out = vec![unpack(&w)];
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = rhs(t, &w);
        let k2 = rhs(t + 0.5 * dt, &(&w + &(&k1 * (0.5 * dt))));
        let k3 = rhs(t + 0.5 * dt, &(&w + &(&k2 * (0.5 * dt))));
        let k4 = rhs(t + dt, &(&w + &(&k3 * dt)));
        w = &w + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (dt / 6.0));
        if (k + 1) % every == 0 {
            out.push(unpack(&w));
        }
    }
    out
}

#[test]
fn linearized_trajectory_matches_dense_ode() {
    let (m, gs) = common::small_system();
    let h = m.grid().weight();
    let drive = dipole_drive(Pulse::Gaussian { t0: 3.0, sigma: 0.7 }, 1.0);
    let traj = propagate_linearized(gs, m, &drive, 20.0, 0.5).unwrap();
    let reference = ode_reference(0.0025, 20.0, 200, &drive);
    assert_eq!(reference.len(), traj.len());
    let scale = reference.iter().map(|u| common::wnorm(u, h)).fold(0.0, f64::max);
    let worst = traj.states.iter().zip(&reference).map(|(a, b)| common::wnorm(&(a - b), h)).fold(0.0, f64::max);
    assert!(worst <= 1e-6 * scale, "{worst} vs {scale}");
}

#[test]
fn linearized_density_is_s0_of_state() {
    let (m, gs) = common::small_system();
    let drive = dipole_drive(Pulse::Gaussian { t0: 1.0, sigma: 0.4 }, 1.0);
    let traj = propagate_linearized(gs, m, &drive, 3.0, 0.5).unwrap();
    for (u, d) in traj.states.iter().zip(&traj.densities) {
        let s = casida_core::linops::s0_apply(gs, u.view()).unwrap();
        assert!(common::max_abs((&s - d).iter().cloned()) < 1e-10);
    }
}

#[test]
fn duhamel_residual_converges_with_dt() {
    let (m, gs) = common::small_system();
    let drive = dipole_drive(Pulse::Gaussian { t0: 1.0, sigma: 0.3 }, 0.01);
    let mut res = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let traj = propagate_nonlinear(m, gs, &drive, 2.0, dt, 1).unwrap();
        res.push(duhamel_residual(&traj, gs, m, &drive).unwrap());
    }
    assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
    assert!(res[0] <= 10.0 * res[1] && res[1] <= 10.0 * res[2], "{res:?}");
}

#[test]
fn gauge_channel_carries_no_density() {
    let (m, gs) = common::small_system();
    let drive = dipole_drive(Pulse::Gaussian { t0: 1.0, sigma: 0.4 }, 1.0);
    let traj = propagate_linearized(gs, m, &drive, 3.0, 1.0).unwrap();
    let last = traj.states.last().unwrap();
    let split = casida_core::linops::split_variation(gs, last.view()).unwrap();
    assert!(common::max_abs_c(&split.gauge) > 0.0);
    let s = casida_core::linops::s0_apply(gs, split.gauge.view()).unwrap();
    assert!(common::max_abs(s.iter().cloned()) < 1e-13);
    assert!(la::max_abs_c(split.growth.iter()) < 1e-12);
}
