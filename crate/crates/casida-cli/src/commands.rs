use casida_core::dynamics::{propagate_nonlinear, Drive, LinearizedFlow};
use casida_core::groundstate::{gamma_scaled, minimize};
use casida_core::la;
use casida_core::linops::{
    assemble_scaled, from_casida, gauge_projector, growth_projector, k0_op, perp_projector, s0_apply, to_casida,
    to_reim, RealLinearOp,
};
use casida_core::resonance::{lorentzian_width, residue_check, TransitionChannel};
use casida_core::response::{dyson_residual, kick_spectrum, FrequencyGrid, KickOptions, ResponseSolver};
use casida_core::{GroundState, ModelSystem, Resonance};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::Config;
use crate::output::{RunFlags, Sink};
use crate::CliError;

pub struct Context<'a> {
    pub cfg: &'a Config,
    pub flags: &'a RunFlags,
    pub sink: &'a Sink,
}

fn ground_state(ctx: &Context) -> Result<(ModelSystem, GroundState), CliError> {
    let model = ctx.cfg.model()?;
    let gs = minimize(&model, &ctx.cfg.scf_options(ctx.flags.seed))?;
    Ok((model, gs))
}

#[derive(Serialize)]
struct GroundStateReport {
    energy: f64,
    gamma: f64,
    aufbau: bool,
    occupied: Vec<usize>,
    lagrange_eigenvalues: Vec<f64>,
    levels: Vec<f64>,
    iterations: usize,
    residual: f64,
    fallback_used: bool,
    orthonormality_defect: f64,
    orbitals_file: String,
}

pub fn scf(ctx: &Context) -> Result<bool, CliError> {
    let (model, gs) = ground_state(ctx)?;
    if !gs.aufbau() {
        eprintln!("warning: occupied levels are not the lowest {} levels of H0", gs.n_occ());
    }
    let x = model.grid().x();
    let mut header = vec!["x".to_string()];
    header.extend((0..gs.n_occ()).map(|i| format!("psi_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..x.len()).map(|k| {
        let mut row = vec![x[k]];
        row.extend(gs.psi().row(k).iter().cloned());
        row
    });
    let orbitals = ctx.sink.csv("orbitals.csv", &header, rows)?;
    let n_levels = (gs.n_occ() + 10).min(gs.spectrum().values.len());
    let report = GroundStateReport {
        energy: gs.energy(),
        gamma: gs.gamma(),
        aufbau: gs.aufbau(),
        occupied: gs.occupied().to_vec(),
        lagrange_eigenvalues: gs.lambda().to_vec(),
        levels: gs.spectrum().values.iter().take(n_levels).cloned().collect(),
        iterations: gs.iterations(),
        residual: gs.residual(),
        fallback_used: gs.fallback_used(),
        orthonormality_defect: gs.orthonormality_defect(),
        orbitals_file: orbitals.file_name().unwrap().to_string_lossy().into_owned(),
    };
    let path = ctx.sink.json("groundstate.json", &report)?;
    println!("E = {:.12} gamma = {:.6e}; wrote {}", gs.energy(), gs.gamma(), path.display());
    Ok(true)
}

#[derive(Serialize)]
struct CheckItem {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CheckReport {
    delta: f64,
    passed: usize,
    failed: usize,
    checks: Vec<CheckItem>,
}

fn below(name: &'static str, value: f64, tolerance: f64) -> CheckItem {
    CheckItem { name, value, tolerance, pass: value <= tolerance }
}

fn random_variation(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<c64> {
    Array2::from_shape_fn((rows, cols), |_| c64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
}

fn perp_sample(gs: &GroundState, rng: &mut ChaCha8Rng) -> Array2<c64> {
    let h = gs.weight();
    let u = random_variation(rng, gs.n_grid(), gs.n_occ());
    let psi = gs.psi_complex();
    let c = psi.t().dot(&u) * c64::new(h, 0.0);
    let u = &u - &psi.dot(&c);
    let nrm = la::weighted_norm(u.view(), h);
    u / c64::new(nrm, 0.0)
}

fn reim_flat(u: &Array2<c64>) -> Array1<f64> {
    let (r, j) = to_reim(u.view());
    r.t().iter().chain(j.t().iter()).cloned().collect()
}

pub fn check(ctx: &Context) -> Result<bool, CliError> {
    let (model, gs) = ground_state(ctx)?;
    let delta = ctx.flags.delta;
    let h = gs.weight();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.flags.seed);
    let mut checks = Vec::new();

    checks.push(below("orthonormality defect", gs.orthonormality_defect(), 1e-10));
    checks.push(below("scf residual", gs.residual(), ctx.cfg.scf.tol));
    let gamma = gamma_scaled(&model, &gs, delta)?;
    checks.push(CheckItem { name: "coercivity constant positive", value: gamma, tolerance: 0.0, pass: gamma > 0.0 });
    if !(gamma > 0.0) {
        return Err(CliError::NotAMinimum(gamma));
    }

    let ops = assemble_scaled(&gs, &model, delta)?;
    let herm = [&ops.omega, &ops.k0, &ops.m_dyn, &ops.m].iter().map(|o| o.hermitian_defect()).fold(0.0, f64::max);
    checks.push(below("hermiticity defect", herm, 1e-11));
    let jj = ops.j.compose(&ops.j).add(&RealLinearOp::identity(gs.n_grid(), gs.n_occ()));
    checks.push(below("J^2 + 1", la::max_abs_c(jj.casida_matrix().iter()), 0.0));

    let mut violations = 0.0;
    let mut mismatch: f64 = 0.0;
    let reim = ops.m_dyn.reim_matrix();
    for _ in 0..20 {
        let u = perp_sample(&gs, &mut rng);
        let mu = ops.m_dyn.apply(u.view())?;
        if la::re_inner(u.view(), mu.view(), h) < gamma {
            violations += 1.0;
        }
        let w = random_variation(&mut rng, gs.n_grid(), gs.n_occ());
        let doubled = from_casida(&ops.m_dyn.apply_casida(&to_casida(w.view()))?, true)?;
        let y = reim.dot(&reim_flat(&w));
        let scale = la::max_abs(y.iter()).max(f64::MIN_POSITIVE);
        mismatch = mismatch.max(la::max_abs((&y - &reim_flat(&doubled)).iter()) / scale);
    }
    checks.push(below("coercivity violations", violations, 0.0));
    checks.push(below("representation mismatch", mismatch, 1e-12));

    let flow_op = ops.j.compose(&ops.m_dyn).scale(-1.0);
    let (s, a, p) = (growth_projector(&gs), gauge_projector(&gs), perp_projector(&gs));
    let block = |out: &RealLinearOp, inp: &RealLinearOp| la::max_abs_c(out.compose(&flow_op).compose(inp).casida_matrix().iter());
    let forbidden = block(&s, &a).max(block(&s, &p)).max(block(&p, &a));
    checks.push(below("forbidden blocks of -J M_dyn", forbidden, 1e-11));

    let k0 = k0_op(&gs, &model, 1.0)?;
    let psi = gs.psi_complex();
    let mut gauge: f64 = 0.0;
    for _ in 0..5 {
        let g = random_variation(&mut rng, gs.n_occ(), gs.n_occ());
        let skew = (&g - &g.t().mapv(|z| z.conj())) * c64::new(0.5, 0.0);
        let ua = psi.dot(&skew);
        gauge = gauge.max(la::max_abs(s0_apply(&gs, ua.view())?.iter()));
        gauge = gauge.max(la::max_abs_c(k0.apply(ua.view())?.iter()));
    }
    checks.push(below("gauge directions carry no density", gauge, 1e-11));

    let flow = LinearizedFlow::new(&model, &gs, delta)?;
    let v = perp_sample(&gs, &mut rng);
    let u = perp_sample(&gs, &mut rng);
    let e0 = flow.energy(u.view())?;
    let mut iso: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for t in [0.1, 1.0, 10.0] {
        iso = iso.max((la::weighted_norm(flow.apply_sandwich(t, v.view())?.view(), h) - 1.0).abs());
        let ut = flow.apply(t, u.view())?;
        drift = drift.max((flow.energy(ut.view())? - e0).abs() / e0.abs());
    }
    let composed = flow.apply(2.5, flow.apply(7.5, u.view())?.view())?;
    let group = la::weighted_norm((&composed - &flow.apply(10.0, u.view())?).view(), h);
    checks.push(below("propagator isometry defect", iso, 1e-10));
    checks.push(below("propagator group law", group, 1e-9));
    checks.push(below("energy drift", drift, 1e-9));

    let freq = ctx.cfg.freq()?;
    let stride = freq.len().div_ceil(50);
    let sparse = FrequencyGrid::from_values(freq.omega().iter().step_by(stride).cloned().collect(), freq.eta())?;
    checks.push(below("Dyson residual", dyson_residual(&gs, &model, &sparse, delta)?, 1e-8));
    let solver = ResponseSolver::new(&model, &gs, delta)?;
    let vp = ctx.cfg.v_p(model.grid().x())?;
    let spec = solver.chi_freq(vp.view(), vp.view(), &freq)?;
    checks.push(below("max Im chi_VV at positive frequency", spec.max_positive_frequency_imag(), 0.0));

    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        println!("{} {}: {:.3e} (tol {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    let report = CheckReport { delta, passed: checks.len() - failed, failed, checks };
    ctx.sink.json("check.json", &report)?;
    Ok(failed == 0)
}

pub fn spectrum(ctx: &Context) -> Result<bool, CliError> {
    let (model, gs) = ground_state(ctx)?;
    let freq = ctx.cfg.freq()?;
    let vp = ctx.cfg.v_p(model.grid().x())?;
    let solver = ResponseSolver::new(&model, &gs, ctx.flags.delta)?;
    let spec = solver.chi_freq(vp.view(), vp.view(), &freq)?;
    let rows = spec.omega.iter().zip(&spec.values).map(|(&w, z)| vec![w, z.re, z.im]);
    let path = ctx.sink.csv("spectrum.csv", &["omega", "re_chi", "im_chi"], rows)?;
    let peaks: Vec<String> = spec.peaks(1e-3).into_iter().map(|k| format!("{:.6}", spec.omega[k])).collect();
    println!("peaks: {}; wrote {}", peaks.join(" "), path.display());
    Ok(true)
}

pub fn kick(ctx: &Context) -> Result<bool, CliError> {
    if ctx.flags.no_interaction || ctx.flags.delta != 1.0 {
        return Err(CliError::Config(
            "kick propagates the full nonlinear equation; --no-interaction and --delta do not apply".into(),
        ));
    }
    let d = &ctx.cfg.drive;
    if !(d.eps > 0.0) {
        return Err(CliError::Config("drive.eps: kick needs a positive amplitude".into()));
    }
    let (model, gs) = ground_state(ctx)?;
    let freq = ctx.cfg.freq()?;
    let vp = ctx.cfg.v_p(model.grid().x())?;
    let opts = KickOptions { eps: d.eps, sigma: d.kick_sigma, dt: d.dt, sample_every: 1 };
    let (spec, signal) = kick_spectrum(&gs, &model, vp.view(), vp.view(), d.t_end, &freq, &opts)?;
    let drive = Drive::new(ctx.cfg.pulse(), vp.clone(), d.eps)?;
    let steps = (d.t_end / d.dt).round() as usize;
    let traj = propagate_nonlinear(&model, &gs, &drive, d.t_end, d.dt, (steps / 2000).max(1))?;
    let dipole = traj.observable(vp.view(), gs.weight());
    let norms = traj.norms(gs.weight());
    let rows = (0..traj.len()).map(|k| vec![traj.times[k], drive.f(traj.times[k]), dipole[k] / d.eps, norms[k]]);
    ctx.sink.csv("trajectory.csv", &["t", "f", "dipole_per_eps", "norm_u"], rows)?;
    ctx.sink.csv("kick_signal.csv", &["t", "signal"], signal.iter().map(|&(t, s)| vec![t, s]))?;
    let rows = spec.omega.iter().zip(&spec.values).map(|(&w, z)| vec![w, z.re, z.im]);
    let path = ctx.sink.csv("spectrum.csv", &["omega", "re_chi", "im_chi"], rows)?;
    println!("{} drive samples, {} kick samples; wrote {}", traj.len(), signal.len(), path.display());
    Ok(true)
}

#[derive(Serialize)]
struct ChannelEntry {
    index: usize,
    energy: f64,
    width: f64,
}

#[derive(Serialize)]
struct ResonanceEntry {
    delta: f64,
    z_pole_re: f64,
    z_pole_im: f64,
    delta_e: f64,
    gamma_schur: f64,
    gamma_golden: f64,
    gamma_lorentz: f64,
    lorentz_fwhm: f64,
    first_order: f64,
    extrapolation_spread: f64,
    channels: Vec<ChannelEntry>,
}

#[derive(Serialize)]
struct ResonanceReport {
    i0: usize,
    a0: usize,
    e0: f64,
    level_spacing: f64,
    residue: f64,
    s: f64,
    eta_seq: Vec<f64>,
    eta_lorentz: f64,
    results: Vec<ResonanceEntry>,
}

pub fn resonance(ctx: &Context) -> Result<bool, CliError> {
    let (model, gs) = ground_state(ctx)?;
    let rc = &ctx.cfg.resonance;
    let channel = TransitionChannel::new(&gs, rc.i0, rc.a0)?;
    let spacing = channel.spacing();
    let s = rc.s.unwrap_or(4.0 * spacing);
    let eta_seq = rc.eta_seq.clone().unwrap_or_else(|| [8.0, 6.0, 4.0].iter().map(|k| k * spacing).collect());
    let deltas = if ctx.flags.no_interaction {
        vec![0.0]
    } else if ctx.flags.delta != 1.0 {
        vec![ctx.flags.delta]
    } else {
        rc.deltas.clone()
    };
    let residue = residue_check(&gs, &channel)?;
    let res = Resonance::new(&model, &gs, channel.clone())?;
    let vp = ctx.cfg.v_p(model.grid().x())?;
    let eta_l = spacing;
    let mut results = Vec::new();
    for &delta in &deltas {
        let est = res.pole_estimate(delta, &eta_seq, rc.tol)?;
        let golden = res.golden_rule_width(delta, s)?;
        let solver = ResponseSolver::from_space(&model, res.space().clone(), delta)?;
        let fit = lorentzian_width(&solver, vp.view(), est.z_pole.re, 3.0 * spacing, 401, eta_l)?;
        results.push(ResonanceEntry {
            delta,
            z_pole_re: est.z_pole.re,
            z_pole_im: est.z_pole.im,
            delta_e: est.delta_e,
            gamma_schur: est.gamma,
            gamma_golden: golden.gamma,
            gamma_lorentz: 0.5 * fit.fwhm() - eta_l,
            lorentz_fwhm: fit.fwhm(),
            first_order: est.first_order,
            extrapolation_spread: est.extrapolation_spread,
            channels: golden
                .channels
                .iter()
                .map(|c| ChannelEntry { index: c.index, energy: c.energy, width: c.width })
                .collect(),
        });
        println!("delta {delta}: Gamma schur {:.4e} golden {:.4e}", est.gamma, golden.gamma);
    }
    let report = ResonanceReport {
        i0: rc.i0,
        a0: rc.a0,
        e0: channel.e0(),
        level_spacing: spacing,
        residue,
        s,
        eta_seq,
        eta_lorentz: eta_l,
        results,
    };
    ctx.sink.json("resonance.json", &report)?;
    Ok(true)
}
