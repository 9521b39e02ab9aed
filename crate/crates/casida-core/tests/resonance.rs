mod common;

use casida_core::linops::{density_variation, j_op, k0_apply, omega_op, p0_op, s0_apply};
use casida_core::resonance::{residue_check, transition_variation, transition_vector, TransitionChannel};
use casida_core::{Error, PerpSystem, Resonance, ResonanceEstimate};
use ndarray::Array2;
use num_complex::Complex64 as c64;
use std::sync::OnceLock;

fn channel() -> TransitionChannel {
    TransitionChannel::new(&common::resonance_system().1, 0, 3).unwrap()
}

fn resonance() -> &'static Resonance {
    static CELL: OnceLock<Resonance> = OnceLock::new();
    CELL.get_or_init(|| {
        let (m, gs) = common::resonance_system();
        Resonance::new(m, gs, channel()).unwrap()
    })
}

fn eta_seq(ch: &TransitionChannel) -> Vec<f64> {
    [8.0, 6.0, 4.0].iter().map(|k| k * ch.spacing()).collect()
}

fn pole(delta: f64) -> ResonanceEstimate {
    let r = resonance();
    r.pole_estimate(delta, &eta_seq(r.channel()), 0.5).unwrap()
}

#[test]
fn channel_is_embedded() {
    let (_, gs) = common::resonance_system();
    let ch = channel();
    let lev = &gs.spectrum().values;
    assert_eq!(ch.e0(), lev[3] - lev[0]);
    assert!(ch.e0() > -lev[1]);
    assert!(ch.spacing() > 0.0);
}

#[test]
fn transition_vector_is_a_normalized_perp_eigenvector() {
    let (_, gs) = common::resonance_system();
    let ch = channel();
    let h = gs.weight();
    let v = transition_vector(gs, &ch);
    assert!(v.y.iter().all(|z| *z == c64::new(0.0, 0.0)));
    assert!((v.norm(h) - 1.0).abs() < 1e-12, "{}", v.norm(h));
    let u = transition_variation(gs, &ch);
    let p = p0_op(gs).apply(u.view()).unwrap();
    assert!(common::wnorm(&p, h) < 1e-10);
    let om = omega_op(gs).apply(u.view()).unwrap();
    let ju = j_op(gs.n_grid(), gs.n_occ()).apply(u.view()).unwrap();
    let res = &om + &(ju * c64::new(0.0, ch.e0()));
    assert!(common::wnorm(&res, h) < 1e-10);
}

#[test]
fn residue_has_two_evaluation_paths() {
    let (_, gs) = common::resonance_system();
    let ch = channel();
    let h = gs.weight();
    let phi = &gs.spectrum().vectors;
    let prod = &phi.column(0) * &phi.column(3) * 2.0;
    let direct = (h * prod.dot(&prod)).sqrt();
    let r = residue_check(gs, &ch).unwrap();
    assert!(r > 1e-6);
    assert!((r - direct).abs() < 1e-12 * direct, "{r} {direct}");
}

#[test]
fn disjoint_supports_have_no_residue() {
    let n = 40;
    let mut psi = Array2::zeros((n, 1));
    let mut u = Array2::zeros((n, 1));
    for k in 0..n / 2 {
        psi[[k, 0]] = 1.0;
        u[[k + n / 2, 0]] = c64::new(1.0, 0.0);
    }
    assert!(density_variation(psi.view(), u.view()).iter().all(|&v| v == 0.0));
}

#[test]
fn bare_schur_complement_is_the_detuning() {
    let r = resonance();
    let perp = PerpSystem::new(r.space(), 0.0).unwrap();
    let e0 = r.channel().e0();
    for z in [c64::new(e0 + 0.01, 0.02), c64::new(1.0, 0.3), c64::new(e0, 1e-3)] {
        let s = r.schur_complement(&perp, z).unwrap();
        assert!((s - (e0 - z)).norm() < 1e-10, "{s} vs {}", e0 - z);
    }
}

#[test]
fn schur_complement_rejects_the_lower_half_plane() {
    let r = resonance();
    let perp = PerpSystem::new(r.space(), 0.1).unwrap();
    for z in [c64::new(1.0, 0.0), c64::new(1.0, -0.1)] {
        assert!(matches!(r.schur_complement(&perp, z), Err(Error::InvalidParameter(_))));
    }
}

#[test]
fn schur_complement_departs_linearly_from_the_detuning() {
    let r = resonance();
    let e0 = r.channel().e0();
    let z = c64::new(e0, 0.05);
    let dev = |d: f64| {
        let perp = PerpSystem::new(r.space(), d).unwrap();
        (r.schur_complement(&perp, z).unwrap() - (e0 - z)).norm()
    };
    let ratio = dev(2e-4) / dev(1e-4);
    assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
}

#[test]
fn first_order_shift_matches_kernel_inner_product() {
    let (m, gs) = common::resonance_system();
    let r = resonance();
    let h = gs.weight();
    let u = transition_variation(gs, r.channel());
    let ku = k0_apply(gs, m, u.view()).unwrap();
    let inner: c64 = u.iter().zip(ku.iter()).map(|(a, b)| a.conj() * b).sum::<c64>() * h;
    let delta = 0.07;
    let expect = delta * 0.5 * inner.re;
    assert!((r.first_order(delta) - expect).abs() < 1e-10, "{} {expect}", r.first_order(delta));
}

#[test]
fn zero_coupling_pole_is_bare() {
    let est = pole(0.0);
    assert_eq!(est.z_pole, c64::new(resonance().channel().e0(), 0.0));
    assert_eq!(est.gamma, 0.0);
}

#[test]
fn width_is_second_order_in_coupling() {
    let g1 = pole(0.02).gamma;
    let g2 = pole(0.04).gamma;
    assert!(g1 > 0.0);
    let ratio = g2 / g1;
    assert!((ratio - 4.0).abs() <= 0.4, "{ratio}");
}

#[test]
fn pole_and_golden_rule_agree() {
    let r = resonance();
    let delta = 0.05;
    let est = pole(delta);
    let golden = r.golden_rule_width(delta, 4.0 * r.channel().spacing()).unwrap();
    assert!(est.gamma > 0.0);
    assert!(est.extrapolation_spread <= 0.5 * est.extrapolated.norm());
    assert!((est.z_pole.im + est.gamma).abs() < 1e-15);
    let rel = common::rel(est.gamma, golden.gamma);
    assert!(rel < 0.15, "{} vs {} ({rel})", est.gamma, golden.gamma);
}

#[test]
fn golden_rule_keeps_only_open_channels() {
    let (_, gs) = common::resonance_system();
    let r = resonance();
    let lev = &gs.spectrum().values;
    for s in [3.0, 4.0, 8.0] {
        for delta in [0.02, 0.1, 0.3] {
            let g = r.golden_rule_width(delta, s * r.channel().spacing()).unwrap();
            assert!(g.gamma >= 0.0);
            assert!(g.channels.iter().all(|c| c.width >= 0.0));
            assert_eq!(g.channels.len(), 1);
            assert!(g.channels[0].energy > 0.0);
            assert!((g.channels[0].energy - (r.channel().e0() + lev[1])).abs() < 1e-10);
        }
    }
}

#[test]
fn closed_channel_has_no_width() {
    let (m, gs) = common::resonance_system();
    let ch = TransitionChannel::unchecked(gs, 1, 2).unwrap();
    assert!(ch.e0() + gs.spectrum().values[1] < 0.0);
    assert!(matches!(TransitionChannel::new(gs, 1, 2), Err(Error::ChannelInvalid(_))));
    let r = Resonance::new(m, gs, ch).unwrap();
    let g = r.golden_rule_width(0.1, 0.05).unwrap();
    assert_eq!(g.gamma, 0.0);
    assert!(g.channels.is_empty());
}

#[test]
fn narrow_smoothing_is_rejected() {
    let r = resonance();
    let s = 0.5 * r.channel().spacing();
    assert!(matches!(r.golden_rule_width(0.05, s), Err(Error::SmoothingTooNarrow(_))));
}

#[test]
fn invalid_channels_are_rejected() {
    let (_, gs) = common::resonance_system();
    assert!(matches!(TransitionChannel::new(gs, 0, 1), Err(Error::ChannelInvalid(_))));
    assert!(TransitionChannel::new(gs, 2, 3).is_err());
    assert!(TransitionChannel::new(gs, 0, gs.n_grid()).is_err());
    let (_, small) = common::small_system();
    assert!(matches!(TransitionChannel::new(small, 0, 2), Err(Error::ChannelInvalid(_))));
}

#[test]
fn transition_density_matches_s0() {
    let (_, gs) = common::resonance_system();
    let ch = channel();
    let u = transition_variation(gs, &ch);
    let a = s0_apply(gs, u.view()).unwrap();
    let b = density_variation(gs.psi().view(), u.view());
    assert!(common::max_abs(a.iter().zip(b.iter()).map(|(x, y)| x - y)) < 1e-14);
}
