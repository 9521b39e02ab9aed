use std::path::{Path, PathBuf};

use casida_core::dynamics::Pulse;
use casida_core::groundstate::{Occupation, ScfOptions};
use casida_core::model::{GridSpec, ModelSystem, SoftCoulombParams, XcPolynomial};
use casida_core::response::FrequencyGrid;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub scf: ScfSection,
    pub drive: DriveSection,
    pub freq: FreqSection,
    pub resonance: ResonanceSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub a_ext: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "N")]
    pub n_elec: usize,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n: 300, l: 20.0, a: 1.0, a_ext: 1.0, z: 2.0, n_elec: 2, c2: -1.0, c3: 0.0, c4: 0.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScfSection {
    pub tol: f64,
    pub max_iter: usize,
    pub mixing: f64,
    /// Indices of the occupied `H0` levels; Aufbau when absent.
    pub occupation: Option<Vec<usize>>,
}

impl Default for ScfSection {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000, mixing: 0.3, occupation: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum PulseSpec {
    Gaussian { t0: f64, sigma: f64 },
    Step,
    Sinusoid { omega0: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    /// Polynomial coefficients of `V_P` in `x`, lowest order first.
    pub v_p: Vec<f64>,
    /// Whitespace-separated grid values of `V_P`; overrides `v_p`.
    pub v_p_file: Option<PathBuf>,
    pub pulse: PulseSpec,
    pub eps: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Width of the kick pulse used by the `kick` command.
    pub kick_sigma: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            v_p: vec![0.0, 1.0],
            v_p_file: None,
            pulse: PulseSpec::Gaussian { t0: 5.0, sigma: 1.0 },
            eps: 1e-3,
            t_end: 100.0,
            dt: 0.01,
            kick_sigma: 0.1,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqSection {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_omega: usize,
    pub eta: f64,
}

impl Default for FreqSection {
    fn default() -> Self {
        Self { omega_min: 0.05, omega_max: 3.0, n_omega: 1000, eta: 0.01 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceSection {
    pub i0: usize,
    pub a0: usize,
    pub deltas: Vec<f64>,
    /// Golden-rule smoothing width; 4 level spacings when absent.
    pub s: Option<f64>,
    /// Damping sequence for the pole extrapolation; 8, 6, 4 level spacings when absent.
    pub eta_seq: Option<Vec<f64>>,
    pub tol: f64,
}

impl Default for ResonanceSection {
    fn default() -> Self {
        Self { i0: 0, a0: 3, deltas: vec![0.02, 0.05, 0.1], s: None, eta_seq: None, tol: 0.5 }
    }
}

fn bad(key: &str, why: &str) -> CliError {
    CliError::Config(format!("{key}: {why}"))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, &format!("must be positive and finite, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, "must be finite"))
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bad(&p.display().to_string(), &e.to_string()))?;
                toml::from_str::<Config>(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        if let (Some(p), Some(f)) = (path, cfg.drive.v_p_file.as_ref()) {
            if f.is_relative() {
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.drive.v_p_file = Some(base.join(f));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if m.n < 16 {
            return Err(bad("model.n", "need at least 16 grid points"));
        }
        positive("model.L", m.l)?;
        positive("model.a", m.a)?;
        positive("model.a_ext", m.a_ext)?;
        finite("model.Z", m.z)?;
        if m.z < 0.0 {
            return Err(bad("model.Z", "must be non-negative"));
        }
        if m.n_elec == 0 || m.n_elec >= m.n {
            return Err(bad("model.N", "need 1 <= N < n"));
        }
        for (k, v) in [("model.c2", m.c2), ("model.c3", m.c3), ("model.c4", m.c4)] {
            finite(k, v)?;
        }

        let s = &self.scf;
        positive("scf.tol", s.tol)?;
        if s.max_iter == 0 {
            return Err(bad("scf.max_iter", "must be at least 1"));
        }
        if !(s.mixing > 0.0 && s.mixing <= 1.0) {
            return Err(bad("scf.mixing", "must lie in (0, 1]"));
        }
        if let Some(occ) = &s.occupation {
            if occ.len() != m.n_elec {
                return Err(bad("scf.occupation", "needs exactly N indices"));
            }
            if occ.iter().any(|&i| i >= m.n) {
                return Err(bad("scf.occupation", "index out of range"));
            }
        }

        let d = &self.drive;
        if d.v_p.is_empty() && d.v_p_file.is_none() {
            return Err(bad("drive.v_p", "needs at least one coefficient"));
        }
        for v in &d.v_p {
            finite("drive.v_p", *v)?;
        }
        match d.pulse {
            PulseSpec::Gaussian { t0, sigma } => {
                finite("drive.pulse.t0", t0)?;
                positive("drive.pulse.sigma", sigma)?;
            }
            PulseSpec::Sinusoid { omega0 } => finite("drive.pulse.omega0", omega0)?,
            PulseSpec::Step => {}
        }
        finite("drive.eps", d.eps)?;
        if d.eps < 0.0 {
            return Err(bad("drive.eps", "must be non-negative"));
        }
        positive("drive.t_end", d.t_end)?;
        positive("drive.dt", d.dt)?;
        positive("drive.kick_sigma", d.kick_sigma)?;

        let f = &self.freq;
        finite("freq.omega_min", f.omega_min)?;
        finite("freq.omega_max", f.omega_max)?;
        if f.omega_max <= f.omega_min {
            return Err(bad("freq.omega_max", "must exceed freq.omega_min"));
        }
        if f.n_omega < 2 {
            return Err(bad("freq.n_omega", "need at least 2 points"));
        }
        positive("freq.eta", f.eta)?;

        let r = &self.resonance;
        if r.i0 >= m.n_elec {
            return Err(bad("resonance.i0", "must index an occupied level"));
        }
        if r.a0 >= m.n {
            return Err(bad("resonance.a0", "out of range"));
        }
        if r.deltas.is_empty() {
            return Err(bad("resonance.deltas", "needs at least one value"));
        }
        for v in &r.deltas {
            finite("resonance.deltas", *v)?;
            if *v < 0.0 {
                return Err(bad("resonance.deltas", "must be non-negative"));
            }
        }
        if let Some(s) = r.s {
            positive("resonance.s", s)?;
        }
        if let Some(seq) = &r.eta_seq {
            if seq.len() < 2 {
                return Err(bad("resonance.eta_seq", "needs at least two values"));
            }
            for v in seq {
                positive("resonance.eta_seq", *v)?;
            }
        }
        positive("resonance.tol", r.tol)?;
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSystem, CliError> {
        let m = &self.model;
        let cfg = |e: casida_core::Error| CliError::Config(format!("model: {e}"));
        let grid = GridSpec::new(m.n, m.l).map_err(cfg)?;
        let sc = SoftCoulombParams::new(m.a, m.z, m.a_ext).map_err(cfg)?;
        let xc = XcPolynomial::new(m.c2, m.c3, m.c4).map_err(cfg)?;
        ModelSystem::new(grid, sc, xc, m.n_elec).map_err(cfg)
    }

    pub fn scf_options(&self, seed: u64) -> ScfOptions {
        ScfOptions {
            tol: self.scf.tol,
            max_iter: self.scf.max_iter,
            mixing: self.scf.mixing,
            occupation: match &self.scf.occupation {
                Some(idx) => Occupation::Indices(idx.clone()),
                None => Occupation::Aufbau,
            },
            seed,
            ..Default::default()
        }
    }

    pub fn pulse(&self) -> Pulse {
        match self.drive.pulse {
            PulseSpec::Gaussian { t0, sigma } => Pulse::Gaussian { t0, sigma },
            PulseSpec::Step => Pulse::Step,
            PulseSpec::Sinusoid { omega0 } => Pulse::Sinusoid { omega0 },
        }
    }

    pub fn v_p(&self, x: &Array1<f64>) -> Result<Array1<f64>, CliError> {
        match &self.drive.v_p_file {
            Some(path) => {
                let key = "drive.v_p_file";
                let text = std::fs::read_to_string(path).map_err(|e| bad(key, &format!("{}: {e}", path.display())))?;
                let vals = text
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(key, &format!("{t:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != x.len() {
                    return Err(bad(key, &format!("expected {} values, found {}", x.len(), vals.len())));
                }
                Ok(Array1::from(vals))
            }
            None => Ok(x.mapv(|xv| self.drive.v_p.iter().rev().fold(0.0, |acc, c| acc * xv + c))),
        }
    }

    pub fn freq(&self) -> Result<FrequencyGrid, CliError> {
        let f = &self.freq;
        FrequencyGrid::new(f.omega_min, f.omega_max, f.n_omega, f.eta).map_err(|e| CliError::Config(format!("freq: {e}")))
    }
}
