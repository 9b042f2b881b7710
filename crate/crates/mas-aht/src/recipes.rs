//! Named experiments that regenerate the published figures at desk scale.
//!
//! Each recipe reads its spin system, spinning rate and powder set from an
//! [`ExperimentConfig`] and its figure-specific knobs from the `scan` block.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::aht::{
    am_coefficients, effective_propagate, AhtError, AhtModel, CoefficientOptions, TermKind,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::num::{identity, CMatrix};
use crate::optimizer::{
    adiabatic_curve, coarse_grid, full_grid, grid_search_adiabatic, rfdr_curve, OptimizerError, RfdrSetup,
};
use crate::output::{fmt_f64, write_csv, CsvTable, Manifest};
use crate::powder::{recoupled_strength_profile, CrystalliteSet, PowderError};
use crate::propagation::{normalized_signal, PropagationError, RotorCache};
use crate::pulse::{
    build_c7, build_respiration_cp, split_am, tangential_sweep, AmplitudeRamp, C7Element, PhaseDirection,
    PulseSequence, RespirationParams, RespirationVariant, SequenceError,
};
use crate::quaternion::{offset_sweep, QuaternionError};
use crate::system::{SpinSystem, SystemError};
use crate::tensor::{EulerAngles, InteractionKind, InteractionTensor, TensorError};

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("unknown recipe '{0}'")]
    Unknown(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Powder(#[from] PowderError),
    #[error(transparent)]
    Aht(#[from] AhtError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Quaternion(#[from] QuaternionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("recipe needs {0}")]
    Requirement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RecipeError {
    /// 2 for configuration problems, 3 for numerical guards.
    pub fn exit_code(&self) -> i32 {
        match self {
            RecipeError::Unknown(_)
            | RecipeError::Config(_)
            | RecipeError::Powder(_)
            | RecipeError::Requirement(_)
            | RecipeError::System(_)
            | RecipeError::Io(_)
            | RecipeError::Sequence(_) => 2,
            _ => 3,
        }
    }
}

pub const RECIPES: &[&str] = &[
    "fig4_4",
    "fig4_5",
    "fig4_8",
    "fig4_9a",
    "fig5_1",
    "fig5_2",
    "fig5_3",
    "fig5_4",
    "fig5_6",
    "fig5_7",
    "fig5_8a",
    "fig5_9",
    "sum_of_freq",
    "c7_prop",
    "table_adrfdr",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RecipeOutput {
    pub recipe: String,
    /// file stem and table
    pub tables: Vec<(String, CsvTable)>,
    pub manifest: Manifest,
}

impl RecipeOutput {
    pub fn table(&self, stem: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|(s, _)| s == stem).map(|(_, t)| t)
    }

    /// Writes `<stem>.csv` files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RecipeError> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (stem, t) in &self.tables {
            let p = dir.join(format!("{stem}.csv"));
            write_csv(&p, &self.manifest, t)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

pub fn run_recipe(name: &str, cfg: &ExperimentConfig) -> Result<RecipeOutput, RecipeError> {
    let mut extra: Manifest = Vec::new();
    let tables = match name {
        "fig4_4" => fig4_4(cfg, &mut extra)?,
        "fig4_5" => fig4_5(cfg, &mut extra)?,
        "fig4_8" => fig4_8(cfg, &mut extra)?,
        "fig4_9a" => fig4_9a(cfg, &mut extra)?,
        "fig5_1" => fig5_1(cfg, &mut extra)?,
        "fig5_2" => fig5_2(cfg, &mut extra)?,
        "fig5_3" => fig5_3(cfg, &mut extra)?,
        "fig5_4" => fig5_4(cfg, &mut extra)?,
        "fig5_6" => fig5_6(cfg, &mut extra)?,
        "fig5_7" => fig5_7(cfg, &mut extra)?,
        "fig5_8a" => fig5_8a(cfg, &mut extra)?,
        "fig5_9" => fig5_9(cfg, &mut extra)?,
        "sum_of_freq" => sum_of_freq(cfg, &mut extra)?,
        "c7_prop" => c7_prop(cfg, &mut extra)?,
        "table_adrfdr" => table_adrfdr(cfg, &mut extra)?,
        other => return Err(RecipeError::Unknown(other.to_string())),
    };
    let mut manifest = vec![("recipe".to_string(), name.to_string())];
    manifest.extend(cfg.manifest());
    manifest.extend(extra);
    Ok(RecipeOutput { recipe: name.to_string(), tables, manifest })
}

type Tables = Vec<(String, CsvTable)>;

fn note(m: &mut Manifest, key: &str, v: impl ToString) {
    m.push((format!("recipe.{key}"), v.to_string()));
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Powder set named by `par.crystal_file` (a scheme name or an angle file).
pub fn crystallites(cfg: &ExperimentConfig) -> Result<CrystalliteSet, RecipeError> {
    let name = &cfg.par.crystal_file;
    if let Some(set) = CrystalliteSet::by_name(name) {
        return Ok(if name.contains('x') || name == "single" { set } else { set.with_gamma(cfg.par.gamma_angles) });
    }
    let set = CrystalliteSet::from_file(Path::new(name))?;
    let has_gamma = set.angles.iter().any(|a| a.gamma != 0.0);
    Ok(if has_gamma { set } else { set.with_gamma(cfg.par.gamma_angles) })
}

fn coefficient_options(cfg: &ExperimentConfig) -> CoefficientOptions {
    CoefficientOptions { k_max: cfg.par.k_max, samples: None, tail_tol: cfg.par.tail_tol, auto_k: false }
}

/// Copy of `sys` with the isotropic shift of spin `q` set to `hz`.
pub fn with_offset(sys: &SpinSystem, q: usize, hz: f64) -> SpinSystem {
    let mut out = sys.clone();
    match out
        .interactions
        .iter_mut()
        .find(|t| t.kind == InteractionKind::ChemicalShift && t.spin == q)
    {
        Some(t) => t.delta_iso = hz,
        None => out.interactions.push(InteractionTensor::shift(q, hz, 0.0, 0.0, EulerAngles::zero())),
    }
    out
}

fn first_dipole(sys: &SpinSystem) -> Result<InteractionTensor<f64>, RecipeError> {
    sys.interactions
        .iter()
        .find(|t| t.kind == InteractionKind::Dipolar)
        .cloned()
        .ok_or_else(|| RecipeError::Requirement("a dipolar coupling".into()))
}

fn two_channels(cfg: &ExperimentConfig) -> Result<(String, String), RecipeError> {
    let ch = cfg.channels();
    if ch.len() < 2 || cfg.system.n_spins() != 2 {
        return Err(RecipeError::Requirement("a heteronuclear two-spin system".into()));
    }
    Ok((ch[0].clone(), ch[1].clone()))
}

fn power(u: &CMatrix<f64>, m: usize) -> CMatrix<f64> {
    let mut out = identity::<f64>(u.nrows());
    let mut base = u.clone();
    let mut e = m;
    while e > 0 {
        if e & 1 == 1 {
            out = &base * &out;
        }
        base = &base * &base;
        e >>= 1;
    }
    out
}

fn signal(u: &CMatrix<f64>, rho0: &CMatrix<f64>, det: &CMatrix<f64>) -> f64 {
    normalized_signal(&(u * rho0 * u.adjoint()), rho0, det)
}

/// Powder-averaged transfer after each count in `cycles` of `seq`, by direct propagation.
fn direct_transfer(
    cfg: &ExperimentConfig,
    sys: &SpinSystem,
    seq: &PulseSequence,
    set: &CrystalliteSet,
    cycles: &[usize],
) -> Result<Vec<f64>, RecipeError> {
    let rho0 = sys.operator_from_label(&cfg.par.start_operator)?;
    let det = sys.operator_from_label(&cfg.par.detect_operator)?;
    let tc = seq.cycle_time();
    let per: Result<Vec<Vec<f64>>, RecipeError> = set
        .angles
        .par_iter()
        .map(|cr| {
            let mut cache = RotorCache::new(sys, cr, cfg.par.spin_rate, cfg.par.rotor_angle, cfg.par.grid)?;
            let u = cache.propagate(seq, 0.0, tc);
            Ok(cycles.iter().map(|&m| signal(&power(&u, m), &rho0, &det)).collect())
        })
        .collect();
    Ok(weighted(set, &per?))
}

fn weighted(set: &CrystalliteSet, per: &[Vec<f64>]) -> Vec<f64> {
    let len = per.first().map_or(0, Vec::len);
    let mut out = vec![0.0; len];
    for (c, w) in per.iter().zip(&set.weights) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += w * v;
        }
    }
    out
}

/// RESPIRATION-CP on the first two channels with equal amplitudes.
fn respiration(cfg: &ExperimentConfig, tau_p: f64, rf: f64) -> Result<RespirationParams, RecipeError> {
    let (i, s) = two_channels(cfg)?;
    Ok(RespirationParams::plain(cfg.tau_r(), tau_p, &[(&i, rf), (&s, rf)]))
}

/// Model with amplitude-modulation frames (offsets stay in the Hamiltonian).
fn am_model(cfg: &ExperimentConfig, sys: &SpinSystem, seq: &PulseSequence) -> Result<AhtModel, RecipeError> {
    let opts = coefficient_options(cfg);
    let (i, s) = two_channels(cfg)?;
    let frames = vec![am_coefficients(&split_am(seq, &i)?, &opts)?, am_coefficients(&split_am(seq, &s)?, &opts)?];
    let mut model = AhtModel::new(sys, cfg.par.spin_rate, frames, &[0.0, 0.0])?;
    model.exact_tol = cfg.par.exact_tol;
    Ok(model)
}

fn is_shift(t: &crate::aht::ModelTerm) -> bool {
    matches!(t.kind, TermKind::Shift { .. })
}

/// Powder-averaged transfer under `H̄(1)` (+ shift-only `H̄(2)` when `second`) after `m` sub-periods.
fn effective_transfer(
    cfg: &ExperimentConfig,
    model: &AhtModel,
    set: &CrystalliteSet,
    second: bool,
    cycles: &[usize],
) -> Result<Vec<f64>, RecipeError> {
    let sys = &model.system;
    let rho0 = sys.operator_from_label(&cfg.par.start_operator)?;
    let det = sys.operator_from_label(&cfg.par.detect_operator)?;
    let kernel = model.first_order_kernel();
    let per: Result<Vec<Vec<f64>>, RecipeError> = set
        .angles
        .par_iter()
        .map(|cr| {
            let sp = model.spatial(cr)?;
            let mut h = kernel.evaluate(&sp);
            if second {
                h += model.assemble_components(&sp, &is_shift).second_order(model.exact_tol)?;
            }
            let h = model.wrap(if second { 2 } else { 1 }, h);
            Ok(cycles.iter().map(|&m| signal(&effective_propagate(&h, m), &rho0, &det)).collect())
        })
        .collect();
    Ok(weighted(set, &per?))
}

fn fig4_4(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let dip = first_dipole(&cfg.system)?;
    let set = crystallites(cfg)?;
    let omega_diff = cfg.scan_num("omega_diff", 1.2 * cfg.par.spin_rate)?;
    let points = cfg.scan_num("points", 41.0)? as usize;
    let tr = cfg.tau_r();
    let shifts: Vec<f64> = crate::config::linspace(-tr / 2.0, tr / 2.0, points.max(2));
    note(m, "omega_diff", omega_diff);
    note(m, "points", points);
    note(m, "crystallites", set.len());
    let prof = recoupled_strength_profile(&set, &dip, omega_diff, cfg.par.spin_rate, &shifts, cfg.par.rotor_angle)?;
    let mut t = CsvTable::new(&["relative_shift_us", "delta_tau_us", "strength"]);
    for (d, v) in shifts.iter().zip(&prof) {
        t.push_values(&[2.0 * d * 1e6, d * 1e6, *v]);
    }
    Ok(vec![("fig4_4".into(), t)])
}

fn rfdr_setup(cfg: &ExperimentConfig) -> Result<RfdrSetup, RecipeError> {
    let chans = cfg.channels();
    let p = cfg.sequence.as_ref().and_then(|s| s.params.get("p180")).map(|v| crate::config::parse_number("p180", v));
    let p = p.transpose()?.unwrap_or(5e-6);
    let rf = cfg.sequence.as_ref().and_then(|s| s.params.get("rf")).map(|v| crate::config::parse_number("rf", v));
    let rf = rf.transpose()?.unwrap_or(0.5 / p);
    Ok(RfdrSetup {
        system: cfg.system.clone(),
        channel: chans[0].clone(),
        spin_rate: cfg.par.spin_rate,
        pi_duration: p,
        pi_amplitude: rf,
        rho0: cfg.par.start_operator.clone(),
        detect: cfg.par.detect_operator.clone(),
        crystallites: crystallites(cfg)?,
        grid: cfg.par.grid,
    })
}

fn fig4_5(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let setup = rfdr_setup(cfg)?;
    let blocks = cfg.scan_num("blocks", 10.0)? as usize;
    let ns = cfg.scan_list("adiabatic_n", &[3.0, 10.0])?;
    let sweeps = cfg.scan_list("adiabatic_tau_sweep", &[2.5e-6, 3.6e-6])?;
    let xcos = cfg.scan_list("adiabatic_x_co", &[45.0, 81.0])?;
    if ns.len() != sweeps.len() || ns.len() != xcos.len() {
        return Err(ConfigError::Value {
            key: "scan.adiabatic_*".into(),
            msg: "adiabatic_n, adiabatic_tau_sweep and adiabatic_x_co need equal lengths".into(),
        }
        .into());
    }
    note(m, "blocks", blocks);
    note(m, "adiabatic_n", join(&ns));
    note(m, "adiabatic_tau_sweep", join(&sweeps));
    note(m, "adiabatic_x_co", join(&xcos));
    note(m, "crystallites", setup.crystallites.len());
    let mut t = CsvTable::new(&["scheme", "n_blocks", "block", "time_s", "efficiency"]);
    let c = rfdr_curve(&setup, blocks)?;
    for (b, (time, e)) in c.times.iter().zip(&c.efficiency).enumerate() {
        t.push(vec!["rfdr".into(), blocks.to_string(), b.to_string(), fmt_f64(*time), fmt_f64(*e)]);
    }
    for ((n, ts), xc) in ns.iter().zip(&sweeps).zip(&xcos) {
        let n = *n as usize;
        let sch = tangential_sweep(n, *ts, xc.to_radians())?;
        let c = adiabatic_curve(&setup, &sch)?;
        for (b, (time, e)) in c.times.iter().zip(&c.efficiency).enumerate() {
            t.push(vec!["adiabatic".into(), n.to_string(), b.to_string(), fmt_f64(*time), fmt_f64(*e)]);
        }
    }
    Ok(vec![("fig4_5".into(), t)])
}

/// `a_k = a^z_k + i a^y_k` of the `I_z` row for a phase-0 amplitude-modulated frame.
fn respiration_coefficient(f: &crate::aht::FourierCoefficientSet, k: i32) -> Complex64 {
    f.coeff(2, 1, k) + Complex64::i() * f.coeff(2, 0, k)
}

fn fig4_8(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tr = cfg.tau_r();
    let tau_p = cfg.scan_num("tau_p", 4.0 * tr / 60.0)?;
    let ratios = cfg.scan_grid("rf_ratio", (0.25, 4.0, 16))?;
    let k_show = cfg.scan_num("k_show", 15.0)? as i32;
    let k_cut = cfg.scan_num("k_cut", 10.0)? as usize;
    note(m, "tau_p", tau_p);
    note(m, "rf_ratio", join(&ratios));
    let (i, s) = two_channels(cfg)?;
    let opts = CoefficientOptions { tail_tol: f64::INFINITY, ..coefficient_options(cfg) };
    let mut coeffs = CsvTable::new(&["spin", "rf_ratio", "k", "re", "im", "magnitude"]);
    let mut tails = CsvTable::new(&["spin", "rf_ratio", "omega_cw_hz", "tail_fraction"]);
    for &r in &ratios {
        let seq = build_respiration_cp(&RespirationParams::plain(
            tr,
            tau_p,
            &[(&i, r * cfg.par.spin_rate), (&s, r * cfg.par.spin_rate)],
        ))?;
        for (label, ch) in [("I", &i), ("S", &s)] {
            let f = am_coefficients(&split_am(&seq, ch)?, &opts)?;
            for k in -k_show..=k_show {
                let a = respiration_coefficient(&f, k);
                coeffs.push(vec![
                    label.into(),
                    fmt_f64(r),
                    k.to_string(),
                    fmt_f64(a.re),
                    fmt_f64(a.im),
                    fmt_f64(a.norm()),
                ]);
            }
            tails.push(vec![label.into(), fmt_f64(r), fmt_f64(f.omega_cw), fmt_f64(f.tail_fraction(2, k_cut))]);
        }
    }
    Ok(vec![("fig4_8_coefficients".into(), coeffs), ("fig4_8_tail".into(), tails)])
}

fn sub_period(model: &AhtModel) -> f64 {
    model.sub_period().unwrap_or(model.frames[0].tau_m)
}

fn mixing_cycles(mixing: f64, tau_c: f64) -> usize {
    (mixing / tau_c).round().max(1.0) as usize
}

fn fig4_9a(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tau_p = cfg.scan_num("tau_p", 4e-6)?;
    let ratios = cfg.scan_grid("rf_ratio", (0.5, 4.0, 36))?;
    let mixing = cfg.scan_num("max_mixing", 5e-3)?;
    let set = crystallites(cfg)?;
    note(m, "tau_p", tau_p);
    note(m, "rf_ratio", join(&ratios));
    note(m, "max_mixing", mixing);
    note(m, "crystallites", set.len());
    let mut t = CsvTable::new(&["rf_ratio", "rf_hz", "omega_cw_hz", "max_efficiency", "mixing_s"]);
    for &r in &ratios {
        let rf = r * cfg.par.spin_rate;
        let seq = build_respiration_cp(&respiration(cfg, tau_p, rf)?)?;
        let model = am_model(cfg, &cfg.system, &seq)?;
        let tau_c = sub_period(&model);
        let n = mixing_cycles(mixing, tau_c);
        let cycles: Vec<usize> = (0..=n).collect();
        let curve = effective_transfer(cfg, &model, &set, false, &cycles)?;
        let idx = crate::optimizer::first_max(&curve);
        t.push_values(&[r, rf, model.frames[0].omega_cw, curve[idx], idx as f64 * tau_c]);
    }
    Ok(vec![("fig4_9a".into(), t)])
}

/// Shift-only second-order term projected on the S-spin x axis, Hz.
fn second_order_projection(model: &AhtModel, cr: &EulerAngles<f64>, spin: usize) -> Result<f64, RecipeError> {
    let sp = model.spatial(cr)?;
    let h2 = model.assemble_components(&sp, &is_shift).second_order(model.exact_tol)?;
    let sx = model.system.op(spin, crate::spin::Axis::X);
    let num = (&h2 * &sx).trace().re;
    let den = (&sx * &sx).trace().re;
    Ok(num / den / std::f64::consts::TAU)
}

fn fig5_1(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tr = cfg.tau_r();
    let tps = cfg.scan_list("tau_p", &[2e-6, 5e-6, 10e-6, 15e-6, 20e-6, 25e-6, 30e-6, 35e-6, 40e-6, 45e-6])?;
    let mixing = cfg.scan_num("mixing", 46e-3)?;
    let set = crystallites(cfg)?;
    note(m, "tau_p", join(&tps));
    note(m, "mixing", mixing);
    note(m, "rf", "1/(25 tau_p)");
    note(m, "crystallites", set.len());
    let mut t = CsvTable::new(&["tau_p_us", "rf_hz", "xi_aniso_hz", "effective", "direct"]);
    for &tp in &tps {
        if tp >= tr {
            return Err(ConfigError::Value { key: "scan.tau_p".into(), msg: "must stay below the rotor period".into() }.into());
        }
        let rf = 1.0 / (25.0 * tp);
        let seq = build_respiration_cp(&respiration(cfg, tp, rf)?)?;
        let model = am_model(cfg, &cfg.system, &seq)?;
        let xi: Result<Vec<f64>, RecipeError> =
            set.angles.par_iter().map(|cr| Ok(second_order_projection(&model, cr, 1)?.abs())).collect();
        let xi: f64 = xi?.iter().zip(&set.weights).map(|(v, w)| v * w).sum();
        let tau_c = sub_period(&model);
        let n = mixing_cycles(mixing, tau_c);
        let eff = effective_transfer(cfg, &model, &set, true, &[n])?[0];
        let dir = direct_transfer(cfg, &cfg.system, &seq, &set, &[mixing_cycles(mixing, seq.cycle_time())])?[0];
        t.push_values(&[tp * 1e6, rf, xi, eff, dir]);
    }
    Ok(vec![("fig5_1".into(), t)])
}

/// `ξ_iso` of spin S (seconds) from the second-order isotropic term at offset `delta`.
pub fn xi_iso(cfg: &ExperimentConfig, tau_p: f64, rf: f64, delta: f64) -> Result<f64, RecipeError> {
    let sys = SpinSystem::new(&cfg.channels().iter().take(2).map(String::as_str).collect::<Vec<_>>());
    let sys = with_offset(&sys, 1, delta);
    let seq = build_respiration_cp(&respiration(cfg, tau_p, rf)?)?;
    let model = am_model(cfg, &sys, &seq)?;
    let h = second_order_projection(&model, &EulerAngles::zero(), 1)? * std::f64::consts::TAU;
    Ok(h / (4.0 * std::f64::consts::PI.powi(2) * delta * delta))
}

fn fig5_2(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tps = cfg.scan_grid("tau_p", (1e-6, 45e-6, 45))?;
    let ratio = cfg.scan_num("rf_ratio", 2.0)?;
    let delta = cfg.scan_num("offset", 1000.0)?;
    note(m, "tau_p", join(&tps));
    note(m, "rf_ratio", ratio);
    note(m, "offset", delta);
    let mut t = CsvTable::new(&["tau_p_us", "xi_iso_s"]);
    for &tp in &tps {
        t.push_values(&[tp * 1e6, xi_iso(cfg, tp, ratio * cfg.par.spin_rate, delta)?]);
    }
    Ok(vec![("fig5_2".into(), t)])
}

/// Direct and effective (`H̄(1) + H̄(2)`) transfer versus the S offset for one τ_p.
pub fn respiration_offset_curves(
    cfg: &ExperimentConfig,
    set: &CrystalliteSet,
    tau_p: f64,
    rf: f64,
    periods: usize,
    offsets: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), RecipeError> {
    let seq = build_respiration_cp(&respiration(cfg, tau_p, rf)?)?;
    let mut direct = Vec::with_capacity(offsets.len());
    let mut effective = Vec::with_capacity(offsets.len());
    for &d in offsets {
        let sys = with_offset(&cfg.system, 1, d);
        let model = am_model(cfg, &sys, &seq)?;
        let tau_c = sub_period(&model);
        let n = mixing_cycles(periods as f64 * seq.cycle_time(), tau_c);
        effective.push(effective_transfer(cfg, &model, set, true, &[n])?[0]);
        direct.push(direct_transfer(cfg, &sys, &seq, set, &[periods])?[0]);
    }
    Ok((direct, effective))
}

fn fig5_3(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tps = cfg.scan_list("tau_p", &[2e-6, 6e-6, 10e-6, 14e-6])?;
    let periods = cfg.scan_list("periods", &[48.0, 46.0, 44.0, 44.0])?;
    if periods.len() != tps.len() {
        return Err(ConfigError::Value { key: "scan.periods".into(), msg: "one entry per tau_p".into() }.into());
    }
    let offsets = cfg.scan_grid("offset_S", (-10e3, 10e3, 21))?;
    let ratio = cfg.scan_num("rf_ratio", 2.0)?;
    let set = crystallites(cfg)?;
    note(m, "tau_p", join(&tps));
    note(m, "periods", join(&periods));
    note(m, "offset_S", join(&offsets));
    note(m, "rf_ratio", ratio);
    note(m, "crystallites", set.len());
    let mut t = CsvTable::new(&["panel", "tau_p_us", "offset_S_hz", "efficiency"]);
    for (tp, p) in tps.iter().zip(&periods) {
        let (dir, eff) = respiration_offset_curves(cfg, &set, *tp, ratio * cfg.par.spin_rate, *p as usize, &offsets)?;
        for (d, v) in offsets.iter().zip(&dir) {
            t.push(vec!["direct".into(), fmt_f64(tp * 1e6), fmt_f64(*d), fmt_f64(*v)]);
        }
        for (d, v) in offsets.iter().zip(&eff) {
            t.push(vec!["effective".into(), fmt_f64(tp * 1e6), fmt_f64(*d), fmt_f64(*v)]);
        }
    }
    Ok(vec![("fig5_3".into(), t)])
}

fn sweep_table(
    t: &mut CsvTable,
    label: &str,
    seq: &PulseSequence,
    chans: (&str, &str),
    offsets: &[f64],
) -> Result<(), RecipeError> {
    let grid: Vec<Vec<f64>> = offsets.iter().map(|d| vec![0.0, *d]).collect();
    for row in offset_sweep(seq, &[chans.0, chans.1], &grid)? {
        t.push(vec![
            label.to_string(),
            fmt_f64(row.offsets[1]),
            fmt_f64(row.rotations[0].omega_cw),
            fmt_f64(row.rotations[1].omega_cw),
            fmt_f64(row.rotations[0].axis[0]),
            fmt_f64(row.rotations[1].axis[0]),
            fmt_f64(row.hetero_metric),
        ]);
    }
    Ok(())
}

const SWEEP_COLUMNS: &[&str] =
    &["series", "offset_S_hz", "omega_cw_I_hz", "omega_cw_S_hz", "axis_x_I", "axis_x_S", "metric_hz"];

fn fig5_4(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let (i, s) = two_channels(cfg)?;
    let tps = cfg.scan_list("tau_p", &[2e-6, 6e-6, 10e-6, 14e-6])?;
    let offsets = cfg.scan_grid("offset_S", (-25e3, 25e3, 101))?;
    let ratio = cfg.scan_num("rf_ratio", 2.0)?;
    note(m, "tau_p", join(&tps));
    note(m, "offset_S", join(&offsets));
    let mut t = CsvTable::new(SWEEP_COLUMNS);
    for &tp in &tps {
        let seq = build_respiration_cp(&respiration(cfg, tp, ratio * cfg.par.spin_rate)?)?;
        sweep_table(&mut t, &format!("tau_p={}us", fmt_f64(tp * 1e6)), &seq, (&i, &s), &offsets)?;
    }
    Ok(vec![("fig5_4".into(), t)])
}

fn bb_params(cfg: &ExperimentConfig, tau_p: f64, tau_com: f64, variant: RespirationVariant) -> Result<RespirationParams, RecipeError> {
    let ratio = cfg.scan_num("rf_ratio", 2.0)?;
    let mut p = respiration(cfg, tau_p, ratio * cfg.par.spin_rate)?;
    p.variant = variant;
    p.tau_com = tau_com;
    Ok(p)
}

fn fig5_6(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let (i, s) = two_channels(cfg)?;
    let tp = cfg.scan_num("tau_p", 2e-6)?;
    let tc = cfg.scan_num("tau_com", 12.5e-6)?;
    let offsets = cfg.scan_grid("offset_S", (-25e3, 25e3, 101))?;
    note(m, "tau_p", tp);
    note(m, "tau_com", tc);
    note(m, "offset_S", join(&offsets));
    let mut t = CsvTable::new(SWEEP_COLUMNS);
    for (label, v) in [
        ("A", RespirationVariant::BbNoPhase),
        ("B", RespirationVariant::BbSync),
        ("C", RespirationVariant::BbAsync),
    ] {
        let seq = build_respiration_cp(&bb_params(cfg, tp, tc, v)?)?;
        sweep_table(&mut t, label, &seq, (&i, &s), &offsets)?;
    }
    Ok(vec![("fig5_6".into(), t)])
}

fn fig5_7(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let (i, s) = two_channels(cfg)?;
    let tp = cfg.scan_num("tau_p", 2e-6)?;
    let tcs = cfg.scan_list("tau_com", &[12.5e-6, 10e-6, 15e-6])?;
    let offsets = cfg.scan_grid("offset_S", (-25e3, 25e3, 51))?;
    let periods = cfg.scan_num("periods", 44.0)? as usize;
    let set = crystallites(cfg)?;
    note(m, "tau_p", tp);
    note(m, "tau_com", join(&tcs));
    note(m, "offset_S", join(&offsets));
    note(m, "periods", periods);
    note(m, "crystallites", set.len());
    let mut fields = CsvTable::new(SWEEP_COLUMNS);
    let mut transfer = CsvTable::new(&["tau_com_us", "offset_S_hz", "efficiency"]);
    for &tc in &tcs {
        let seq = build_respiration_cp(&bb_params(cfg, tp, tc, RespirationVariant::BbSync)?)?;
        sweep_table(&mut fields, &format!("tau_com={}us", fmt_f64(tc * 1e6)), &seq, (&i, &s), &offsets)?;
        // cycles hold two rotor periods for the alternating compensation phase
        let cycles = periods.div_ceil(2);
        for &d in &offsets {
            let sys = with_offset(&cfg.system, 1, d);
            let e = direct_transfer(cfg, &sys, &seq, &set, &[cycles])?[0];
            transfer.push_values(&[tc * 1e6, d, e]);
        }
    }
    Ok(vec![("fig5_7_fields".into(), fields), ("fig5_7_transfer".into(), transfer)])
}

fn fig5_8a(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let (i, s) = two_channels(cfg)?;
    let tp = cfg.scan_num("tau_p", 2e-6)?;
    let tcs = cfg.scan_grid("tau_com", (2e-6, 20e-6, 19))?;
    let offsets = cfg.scan_grid("offset_S", (-25e3, 25e3, 51))?;
    note(m, "tau_p", tp);
    note(m, "tau_com", join(&tcs));
    note(m, "offset_S", join(&offsets));
    note(m, "compensation", "pi pulse on S only; I idles for tau_com");
    let mut t = CsvTable::new(&["tau_com_us", "offset_S_hz", "omega_cw_I_hz", "omega_cw_S_hz", "ratio"]);
    for &tc in &tcs {
        let mut p = bb_params(cfg, tp, tc, RespirationVariant::BbSync)?;
        p.com_amplitudes = vec![Some(0.0), Some(0.5 / tc)];
        let seq = build_respiration_cp(&p)?;
        let grid: Vec<Vec<f64>> = offsets.iter().map(|d| vec![0.0, *d]).collect();
        for row in offset_sweep(&seq, &[&i, &s], &grid)? {
            let (wi, ws) = (row.rotations[0].omega_cw, row.rotations[1].omega_cw);
            let ratio = if ws == 0.0 { f64::NAN } else { wi / ws };
            t.push_values(&[tc * 1e6, row.offsets[1], wi, ws, ratio]);
        }
    }
    Ok(vec![("fig5_8a".into(), t)])
}

fn fig5_9(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let tp = cfg.scan_num("tau_p", 2e-6)?;
    let tc = cfg.scan_num("tau_com", 2e-6)?;
    let offsets = cfg.scan_grid("offset", (-10e3, 10e3, 7))?;
    let plain_periods = cfg.scan_num("periods", 22.0)? as usize;
    let ramp_periods = cfg.scan_num("adiabatic_periods", 70.0)? as usize;
    let span = cfg.scan_num("ramp_span", 8e3)?;
    let set = crystallites(cfg)?;
    note(m, "tau_p", tp);
    note(m, "tau_com", tc);
    note(m, "offset", join(&offsets));
    note(m, "periods", plain_periods);
    note(m, "adiabatic_periods", ramp_periods);
    note(m, "ramp_span", span);
    note(m, "crystallites", set.len());
    let plain = build_respiration_cp(&bb_params(cfg, tp, tc, RespirationVariant::BbSync)?)?;
    let mut p = bb_params(cfg, tp, tc, RespirationVariant::BbSync)?;
    p.sweep = Some(AmplitudeRamp { span, center: 0.0, repeats: ramp_periods });
    let ramp = build_respiration_cp(&p)?;
    let mut t = CsvTable::new(&["panel", "offset_I_hz", "offset_S_hz", "efficiency"]);
    for (label, seq, cycles) in [
        ("bb", &plain, plain_periods.div_ceil(2)),
        ("adiabatic_bb", &ramp, 1),
    ] {
        for &di in &offsets {
            for &ds in &offsets {
                let sys = with_offset(&with_offset(&cfg.system, 0, di), 1, ds);
                let e = direct_transfer(cfg, &sys, seq, &set, &[cycles])?[0];
                t.push(vec![label.into(), fmt_f64(di), fmt_f64(ds), fmt_f64(e)]);
            }
        }
    }
    Ok(vec![("fig5_9".into(), t)])
}

/// Continuity-tracked signed ω_cw (Hz) of one spin of a single-channel sequence.
pub fn signed_fields(seq: &PulseSequence, channel: &str, offsets: &[f64]) -> Result<Vec<f64>, RecipeError> {
    let grid: Vec<Vec<f64>> = offsets.iter().map(|d| vec![*d]).collect();
    Ok(offset_sweep(seq, &[channel], &grid)?.iter().map(|r| r.signed_omega_cw[0]).collect())
}

fn c7_elements() -> [(&'static str, C7Element); 2] {
    [("c7", C7Element::C7), ("post_c7", C7Element::Post)]
}

fn sum_of_freq(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let ch = cfg.channels()[0].clone();
    let offsets = cfg.scan_grid("offset", (-10e3, 10e3, 41))?;
    note(m, "offset", join(&offsets));
    let mut t = CsvTable::new(&["element", "offset_1_hz", "offset_2_hz", "omega_cw_1_hz", "omega_cw_2_hz", "metric_hz"]);
    for (label, el) in c7_elements() {
        let seq = build_c7(&ch, el, cfg.par.spin_rate, PhaseDirection::Increment)?;
        let w = signed_fields(&seq, &ch, &offsets)?;
        for (d1, w1) in offsets.iter().zip(&w) {
            for (d2, w2) in offsets.iter().zip(&w) {
                t.push(vec![
                    label.into(),
                    fmt_f64(*d1),
                    fmt_f64(*d2),
                    fmt_f64(*w1),
                    fmt_f64(*w2),
                    fmt_f64((w1 + w2).abs()),
                ]);
            }
        }
    }
    Ok(vec![("sum_of_freq".into(), t)])
}

/// Direct and first-order effective transfer for a C7-type element at one offset pair.
pub fn c7_point(
    cfg: &ExperimentConfig,
    set: &CrystalliteSet,
    seq: &PulseSequence,
    offsets: (f64, f64),
    cycles: usize,
) -> Result<(f64, f64), RecipeError> {
    let sys = with_offset(&with_offset(&cfg.system, 0, offsets.0), 1, offsets.1);
    let direct = direct_transfer(cfg, &sys, seq, set, &[cycles])?[0];
    let mut model = AhtModel::general(&sys, seq, cfg.par.spin_rate, &coefficient_options(cfg))?;
    model.exact_tol = cfg.par.exact_tol;
    let threshold = cfg.par.near_threshold.unwrap_or(1000.0);
    let model = model.absorb_small_fields(threshold);
    let tau_c = sub_period(&model);
    let n = mixing_cycles(cycles as f64 * seq.cycle_time(), tau_c);
    let effective = effective_transfer(cfg, &model, set, false, &[n])?[0];
    Ok((direct, effective))
}

fn c7_prop(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    if cfg.system.n_spins() != 2 || cfg.channels().len() != 1 {
        return Err(RecipeError::Requirement("a homonuclear two-spin system".into()));
    }
    let ch = cfg.channels()[0].clone();
    let offsets = cfg.scan_grid("offset", (-10e3, 10e3, 11))?;
    let cycles = cfg.scan_num("cycles", 8.0)? as usize;
    let set = crystallites(cfg)?;
    note(m, "offset", join(&offsets));
    note(m, "cycles", cycles);
    note(m, "crystallites", set.len());
    let mut t = CsvTable::new(&["element", "offset_1_hz", "offset_2_hz", "direct", "effective", "difference"]);
    for (label, el) in c7_elements() {
        let seq = build_c7(&ch, el, cfg.par.spin_rate, PhaseDirection::Increment)?;
        for &d1 in &offsets {
            for &d2 in &offsets {
                let (dir, eff) = c7_point(cfg, &set, &seq, (d1, d2), cycles)?;
                t.push(vec![
                    label.into(),
                    fmt_f64(d1),
                    fmt_f64(d2),
                    fmt_f64(dir),
                    fmt_f64(eff),
                    fmt_f64(eff - dir),
                ]);
            }
        }
    }
    Ok(vec![("c7_prop".into(), t)])
}

fn table_adrfdr(cfg: &ExperimentConfig, m: &mut Manifest) -> Result<Tables, RecipeError> {
    let setup = rfdr_setup(cfg)?;
    let ns: Vec<usize> = cfg.scan_list("n_blocks", &[2.0, 3.0, 5.0])?.iter().map(|v| *v as usize).collect();
    let full = cfg.scan.get("grid").map(String::as_str) == Some("full");
    let (sweep, xco) = if full { full_grid() } else { coarse_grid() };
    note(m, "n_blocks", ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "));
    note(m, "grid", if full { "full" } else { "coarse" });
    note(m, "crystallites", setup.crystallites.len());
    let rows = grid_search_adiabatic(&setup, &ns, &sweep, &xco)?;
    let mut t = CsvTable::new(&["n_blocks", "tau_sweep_us", "x_co_deg", "max_efficiency", "block"]);
    for r in rows {
        t.push_values(&[r.n_blocks as f64, r.tau_sweep * 1e6, r.x_co.to_degrees(), r.max_efficiency, r.cycle_index as f64]);
    }
    Ok(vec![("table_adrfdr".into(), t)])
}
