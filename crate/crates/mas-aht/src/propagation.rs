//! Direct time-sliced propagation in the rotating frame.

use std::collections::HashMap;

use num_complex::Complex;
use thiserror::Error;

use crate::num::{identity, CMatrix};
use crate::pulse::{PulseSequence, SequenceError};
use crate::spin::{expm_hermitian, trace_product, Axis};
use crate::system::{SpinSystem, SystemError};
use crate::tensor::{magic_angle, mas_fourier_components, EulerAngles, SpatialFourierComponents, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("time {0} s outside the sequence span")]
    TimeOutOfRange(f64),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("invalid propagation setting: {0}")]
    Invalid(String),
}

/// Spatial frequencies of every interaction for one crystallite, with their spin parts.
#[derive(Debug, Clone)]
pub struct InternalHamiltonian {
    pub spin_rate: f64,
    pub dim: usize,
    pub terms: Vec<(SpatialFourierComponents<f64>, CMatrix<f64>)>,
}

impl InternalHamiltonian {
    pub fn new(
        system: &SpinSystem,
        crystal: &EulerAngles<f64>,
        spin_rate: f64,
        rotor_angle: f64,
    ) -> Result<Self, PropagationError> {
        system.validate()?;
        let mut terms = Vec::with_capacity(system.interactions.len());
        for t in &system.interactions {
            let w = mas_fourier_components(t, crystal, spin_rate, rotor_angle)?;
            terms.push((w, system.spin_part(t)));
        }
        Ok(InternalHamiltonian { spin_rate, dim: system.dim(), terms })
    }

    pub fn at(&self, t: f64) -> CMatrix<f64> {
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for (w, op) in &self.terms {
            let f = w.at(t, self.spin_rate);
            if f != 0.0 {
                h += op * Complex::new(f, 0.0);
            }
        }
        h
    }
}

/// rf operators `Σ_{q on channel} I_qx`, `I_qy` per channel.
#[derive(Debug, Clone)]
pub struct RfOperators {
    pub channels: Vec<(String, CMatrix<f64>, CMatrix<f64>)>,
}

impl RfOperators {
    pub fn new(system: &SpinSystem) -> Self {
        let dim = system.dim();
        let channels = system
            .channels()
            .into_iter()
            .map(|ch| {
                let mut x = CMatrix::zeros(dim, dim);
                let mut y = CMatrix::zeros(dim, dim);
                for (q, s) in system.spins.iter().enumerate() {
                    if s.channel == ch {
                        x += system.op(q, Axis::X);
                        y += system.op(q, Axis::Y);
                    }
                }
                (ch, x, y)
            })
            .collect();
        RfOperators { channels }
    }

    /// rf Hamiltonian for per-channel `(amplitude Hz, phase)` settings.
    pub fn hamiltonian(&self, settings: &[(f64, f64)], dim: usize) -> CMatrix<f64> {
        let mut h = CMatrix::zeros(dim, dim);
        for ((_, x, y), (amp, ph)) in self.channels.iter().zip(settings) {
            if *amp != 0.0 {
                let w = std::f64::consts::TAU * amp;
                h += x * Complex::new(w * ph.cos(), 0.0) + y * Complex::new(w * ph.sin(), 0.0);
            }
        }
        h
    }
}

/// Everything needed to evaluate `H(t)` for one crystallite under one sequence.
#[derive(Debug, Clone)]
pub struct HamiltonianAssembly<'a> {
    pub system: &'a SpinSystem,
    pub sequence: &'a PulseSequence,
    pub crystal: EulerAngles<f64>,
    pub spin_rate: f64,
    pub rotor_angle: f64,
    pub slice_dt: f64,
    internal: InternalHamiltonian,
    rf: RfOperators,
}

impl<'a> HamiltonianAssembly<'a> {
    pub fn new(
        system: &'a SpinSystem,
        sequence: &'a PulseSequence,
        crystal: EulerAngles<f64>,
        spin_rate: f64,
    ) -> Result<Self, PropagationError> {
        Self::with_settings(system, sequence, crystal, spin_rate, magic_angle(), None)
    }

    pub fn with_settings(
        system: &'a SpinSystem,
        sequence: &'a PulseSequence,
        crystal: EulerAngles<f64>,
        spin_rate: f64,
        rotor_angle: f64,
        slice_dt: Option<f64>,
    ) -> Result<Self, PropagationError> {
        let internal = InternalHamiltonian::new(system, &crystal, spin_rate, rotor_angle)?;
        for ch in sequence.channels.keys() {
            if !system.spins.iter().any(|s| &s.channel == ch) {
                return Err(SequenceError::UnknownChannel(ch.clone()).into());
            }
        }
        let tau_r = 1.0 / spin_rate;
        let slice_dt = slice_dt.unwrap_or(tau_r / 1000.0);
        if !(slice_dt > 0.0) {
            return Err(PropagationError::Invalid("slice_dt must be positive".into()));
        }
        Ok(HamiltonianAssembly {
            system,
            sequence,
            crystal,
            spin_rate,
            rotor_angle,
            slice_dt,
            internal,
            rf: RfOperators::new(system),
        })
    }

    pub fn internal(&self) -> &InternalHamiltonian {
        &self.internal
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Per-channel `(amplitude, phase)` active at `t`, and the next rf change.
    fn rf_state(&self, t: f64) -> (Vec<(f64, f64)>, f64) {
        let mut settings = Vec::with_capacity(self.rf.channels.len());
        let mut next = f64::INFINITY;
        for (ch, _, _) in &self.rf.channels {
            if self.sequence.channels.contains_key(ch) {
                let (seg, end) = self.sequence.segment_at(ch, t).expect("known channel");
                settings.push((seg.amplitude, seg.phase));
                next = next.min(end);
            } else {
                settings.push((0.0, 0.0));
            }
        }
        (settings, next)
    }

    pub fn assemble_hamiltonian_slice(&self, t: f64) -> Result<CMatrix<f64>, PropagationError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(PropagationError::TimeOutOfRange(t));
        }
        let (settings, _) = self.rf_state(t);
        Ok(self.internal.at(t) + self.rf.hamiltonian(&settings, self.dim()))
    }

    /// Pieces of constant rf between `t0` and `t1`.
    pub fn rf_pieces(&self, t0: f64, t1: f64) -> Vec<(f64, f64, Vec<(f64, f64)>)> {
        let mut out = Vec::new();
        let mut t = t0;
        while t < t1 - 1e-15 {
            let probe = t + 1e-13_f64.min((t1 - t) / 2.0);
            let (settings, next) = self.rf_state(probe);
            let end = next.min(t1);
            let end = if end <= t { t1 } else { end };
            out.push((t, end, settings));
            t = end;
        }
        out
    }

    /// Ordered product of midpoint slice exponentials from `t0` to `t1`.
    pub fn propagate(&self, t0: f64, t1: f64) -> Result<Propagator, PropagationError> {
        if !(t1 >= t0) || t0 < 0.0 {
            return Err(PropagationError::TimeOutOfRange(t1));
        }
        let dim = self.dim();
        let mut u = identity::<f64>(dim);
        for (a, b, settings) in self.rf_pieces(t0, t1) {
            let hrf = self.rf.hamiltonian(&settings, dim);
            let n = (((b - a) / self.slice_dt) - 1e-9).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            for k in 0..n {
                let tm = a + (k as f64 + 0.5) * h;
                let hh = self.internal.at(tm) + &hrf;
                u = expm_hermitian(&hh, h) * u;
            }
        }
        Ok(Propagator { matrix: u, t_start: t0, t_end: t1 })
    }
}

#[derive(Debug, Clone)]
pub struct Propagator {
    pub matrix: CMatrix<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

/// Prefix products of slice propagators over one rotor period for a fixed rf setting.
#[derive(Debug, Clone)]
struct RotorTable {
    prefix: Vec<CMatrix<f64>>,
    hrf: CMatrix<f64>,
}

/// Fast propagator for one crystallite: `U(t_b, t_a) = W(t_b) W(t_a)†` inside a rotor
/// period, where `W` is read from a prefix table built on a fixed rotor-phase grid.
#[derive(Debug, Clone)]
pub struct RotorCache {
    internal: InternalHamiltonian,
    rf: RfOperators,
    grid: usize,
    tau_r: f64,
    dim: usize,
    tables: HashMap<Vec<(i64, i64)>, RotorTable>,
}

impl RotorCache {
    pub fn new(
        system: &SpinSystem,
        crystal: &EulerAngles<f64>,
        spin_rate: f64,
        rotor_angle: f64,
        grid: usize,
    ) -> Result<Self, PropagationError> {
        if grid == 0 {
            return Err(PropagationError::Invalid("grid must be positive".into()));
        }
        Ok(RotorCache {
            internal: InternalHamiltonian::new(system, crystal, spin_rate, rotor_angle)?,
            rf: RfOperators::new(system),
            grid,
            tau_r: 1.0 / spin_rate,
            dim: system.dim(),
            tables: HashMap::new(),
        })
    }

    fn key(settings: &[(f64, f64)]) -> Vec<(i64, i64)> {
        settings
            .iter()
            .map(|(a, p)| {
                if *a == 0.0 {
                    (0, 0)
                } else {
                    let ph = p.rem_euclid(std::f64::consts::TAU);
                    ((a * 1e6).round() as i64, (ph * 1e9).round() as i64 % 6_283_185_307)
                }
            })
            .collect()
    }

    fn table(&mut self, settings: &[(f64, f64)]) -> &RotorTable {
        let key = Self::key(settings);
        if !self.tables.contains_key(&key) {
            let hrf = self.rf.hamiltonian(settings, self.dim);
            let h = self.tau_r / self.grid as f64;
            let mut prefix = Vec::with_capacity(self.grid + 1);
            let mut u = identity::<f64>(self.dim);
            prefix.push(u.clone());
            for j in 0..self.grid {
                let hh = self.internal.at((j as f64 + 0.5) * h) + &hrf;
                u = expm_hermitian(&hh, h) * u;
                prefix.push(u.clone());
            }
            self.tables.insert(key.clone(), RotorTable { prefix, hrf });
        }
        &self.tables[&key]
    }

    /// `U(s, 0)` within one rotor period for the given rf setting.
    fn within(&mut self, settings: &[(f64, f64)], s: f64) -> CMatrix<f64> {
        let grid = self.grid;
        let tau_r = self.tau_r;
        let h = tau_r / grid as f64;
        let j = ((s / h).floor() as usize).min(grid);
        let g = j as f64 * h;
        let rem = s - g;
        let table = self.table(settings);
        let base = table.prefix[j].clone();
        if rem <= 1e-15 {
            return base;
        }
        let hrf = table.hrf.clone();
        let hh = self.internal.at(g + rem / 2.0) + hrf;
        expm_hermitian(&hh, rem) * base
    }

    /// Propagator over `[t0, t1]` with constant rf `settings`.
    pub fn constant_rf(&mut self, settings: &[(f64, f64)], t0: f64, t1: f64) -> CMatrix<f64> {
        let tau_r = self.tau_r;
        let mut u = identity::<f64>(self.dim);
        let mut t = t0;
        while t < t1 - 1e-15 {
            let period = (t / tau_r + 1e-12).floor();
            let start = period * tau_r;
            let s = (t - start).max(0.0);
            let e = (t1 - start).min(tau_r);
            let step = if s <= 1e-15 && (e - tau_r).abs() <= 1e-15 {
                let g = self.grid;
                self.table(settings).prefix[g].clone()
            } else {
                let we = self.within(settings, e);
                let ws = self.within(settings, s);
                we * ws.adjoint()
            };
            u = step * u;
            t = start + e;
        }
        u
    }

    /// Propagator of `sequence` from `t0` to `t1`.
    pub fn propagate(&mut self, sequence: &PulseSequence, t0: f64, t1: f64) -> CMatrix<f64> {
        let mut u = identity::<f64>(self.dim);
        let mut t = t0;
        let channels: Vec<String> = self.rf.channels.iter().map(|c| c.0.clone()).collect();
        while t < t1 - 1e-15 {
            let probe = t + 1e-13_f64.min((t1 - t) / 2.0);
            let mut settings = Vec::with_capacity(channels.len());
            let mut next = f64::INFINITY;
            for ch in &channels {
                if sequence.channels.contains_key(ch) {
                    let (seg, end) = sequence.segment_at(ch, probe).expect("known channel");
                    settings.push((seg.amplitude, seg.phase));
                    next = next.min(end);
                } else {
                    settings.push((0.0, 0.0));
                }
            }
            let end = next.min(t1);
            let end = if end <= t { t1 } else { end };
            u = self.constant_rf(&settings, t, end) * u;
            t = end;
        }
        u
    }
}

/// Efficiency samples `Tr{ρ(t) D} / sqrt(Tr{ρ0²} Tr{D²})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    pub times: Vec<f64>,
    pub efficiency: Vec<f64>,
}

impl TransferCurve {
    pub fn max(&self) -> (usize, f64) {
        self.efficiency
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,efficiency\n");
        for (t, e) in self.times.iter().zip(&self.efficiency) {
            s.push_str(&format!("{t:.9e},{e:.9}\n"));
        }
        s
    }
}

pub fn normalized_signal(rho: &CMatrix<f64>, rho0: &CMatrix<f64>, detect: &CMatrix<f64>) -> f64 {
    let n0 = trace_product(rho0, rho0).unwrap().re;
    let nd = trace_product(&detect.adjoint(), detect).unwrap().re;
    trace_product(rho, detect).unwrap().re / (n0 * nd).sqrt()
}

/// Curve sampled at the given propagators `U(t_m, 0)`.
pub fn curve_from_propagators(
    times: &[f64],
    props: &[CMatrix<f64>],
    rho0: &CMatrix<f64>,
    detect: &CMatrix<f64>,
) -> TransferCurve {
    let efficiency = props
        .iter()
        .map(|u| normalized_signal(&(u * rho0 * u.adjoint()), rho0, detect))
        .collect();
    TransferCurve { times: times.to_vec(), efficiency }
}

/// Transfer after `m = 0..=n_cycles` whole sequence cycles.
pub fn transfer_efficiency(
    assembly: &HamiltonianAssembly,
    rho0: &str,
    detect: &str,
    n_cycles: usize,
) -> Result<TransferCurve, PropagationError> {
    let r0 = assembly.system.operator_from_label(rho0)?;
    let d = assembly.system.operator_from_label(detect)?;
    let tc = assembly.sequence.cycle_time();
    let u_cycle = assembly.propagate(0.0, tc)?.matrix;
    let mut props = Vec::with_capacity(n_cycles + 1);
    let mut u = identity::<f64>(assembly.dim());
    for _ in 0..=n_cycles {
        props.push(u.clone());
        u = &u_cycle * u;
    }
    let times: Vec<f64> = (0..=n_cycles).map(|m| m as f64 * tc).collect();
    Ok(curve_from_propagators(&times, &props, &r0, &d))
}
