//! Frequency-domain average Hamiltonian theory.
//!
//! Each spin is viewed in the interaction frame of its own rf (plus optional
//! isotropic offset). Over one modulation period the frame propagator factors
//! as `U(t) = P(t)·exp(−i ω_cw t F·I)` with `P` periodic, so every interaction
//! becomes a sum of terms `e^{i(n ω_r + Σ_q k_q ω_m + l_q ω_cw) t}`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use thiserror::Error;

use crate::num::{identity, CMatrix};
use crate::pulse::{AmSplit, PulseSequence, SequenceError};
use crate::quaternion::{compose, effective_rotation, EffectiveRotation, Quaternion, QuaternionError};
use crate::spin::{commutator, expm_hermitian, single_spin_operator, spin_vector, Axis};
use crate::system::SpinSystem;
use crate::tensor::{magic_angle, mas_fourier_components, EulerAngles, InteractionKind, SpatialFourierComponents, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AhtError {
    #[error("truncation K={k} leaves tail energy {tail:.3e}; try K={suggested}")]
    Truncation { k: usize, tail: f64, suggested: usize },
    #[error("axis is not a unit vector (norm {0})")]
    NonUnitAxis(f64),
    #[error("denominator {freq_hz:.3e} Hz at or below the exact tolerance {tol_hz:.3e} Hz")]
    DenominatorUnderflow { freq_hz: f64, tol_hz: f64 },
    #[error("near resonance {delta_hz:.3} Hz exceeds allowed {limit_hz:.3} Hz")]
    NearResonanceTooLarge { delta_hz: f64, limit_hz: f64 },
    #[error("no frame for spin {0}")]
    MissingSpin(usize),
    #[error("AM split has nonzero net rotation ({0:.3e} turns)")]
    NetRotation(f64),
    #[error(transparent)]
    Quaternion(#[from] QuaternionError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Truncation and quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientOptions {
    pub k_max: usize,
    /// quadrature samples per period; `None` → `max(64·K, 4096)`
    pub samples: Option<usize>,
    pub tail_tol: f64,
    /// grow K until the tail tolerance is met instead of failing
    pub auto_k: bool,
}

impl Default for CoefficientOptions {
    fn default() -> Self {
        CoefficientOptions { k_max: 30, samples: None, tail_tol: 1e-6, auto_k: false }
    }
}

impl CoefficientOptions {
    pub fn auto(tail_tol: f64) -> Self {
        CoefficientOptions { k_max: 10, samples: Some(16384), tail_tol, auto_k: true }
    }

    fn n_samples(&self) -> usize {
        self.samples.unwrap_or((64 * self.k_max).max(4096))
    }
}

/// Fourier coefficients of the interaction-frame spin operators of one spin.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficientSet {
    pub tau_m: f64,
    /// Hz, signed
    pub omega_cw: f64,
    pub axis: [f64; 3],
    /// rows: x′, y′, z′ in lab coordinates; z′ ∥ axis
    pub basis: [[f64; 3]; 3],
    pub k_max: usize,
    /// expansion carries the `l = ±1` split about `axis`
    pub split: bool,
    /// `a[j][j′][k + K]`: coefficient of `I_{j′}` (rotated basis) in `P†I_jP`
    pub a: [[Vec<Complex64>; 3]; 3],
    pub tail_energy: f64,
}

/// One term of a spin's expansion: `Ĩ_j(t) ∋ e^{i(kω_m + lω_cw)t} Σ_i m[j][i] I_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinTerm {
    pub k: i32,
    pub l: i32,
    pub m: [[Complex64; 3]; 3],
}

impl FourierCoefficientSet {
    pub fn omega_m(&self) -> f64 {
        1.0 / self.tau_m
    }

    pub fn rotating(&self) -> bool {
        self.split
    }

    pub fn coeff(&self, j: usize, jp: usize, k: i32) -> Complex64 {
        let idx = k + self.k_max as i32;
        if idx < 0 || idx as usize >= self.a[j][jp].len() {
            return Complex64::new(0.0, 0.0);
        }
        self.a[j][jp][idx as usize]
    }

    /// Expansion over `(k, l)` in conventional coordinates.
    pub fn expansion(&self) -> Vec<SpinTerm> {
        let kk = self.k_max as i32;
        let e = &self.basis;
        let mut out = Vec::new();
        let zero = Complex64::new(0.0, 0.0);
        for k in -kk..=kk {
            if !self.rotating() {
                let mut m = [[zero; 3]; 3];
                for j in 0..3 {
                    for jp in 0..3 {
                        let c = self.coeff(j, jp, k);
                        for i in 0..3 {
                            m[j][i] += c * e[jp][i];
                        }
                    }
                }
                out.push(SpinTerm { k, l: 0, m });
                continue;
            }
            for l in -1..=1i32 {
                let mut m = [[zero; 3]; 3];
                for j in 0..3 {
                    if l == 0 {
                        let c = self.coeff(j, 2, k);
                        for i in 0..3 {
                            m[j][i] = c * e[2][i];
                        }
                    } else {
                        let ax = self.coeff(j, 0, k);
                        let ay = self.coeff(j, 1, k);
                        let il = Complex64::new(0.0, l as f64);
                        let cx = (ax - il * ay) * 0.5;
                        let cy = (ay + il * ax) * 0.5;
                        for i in 0..3 {
                            m[j][i] = cx * e[0][i] + cy * e[1][i];
                        }
                    }
                }
                out.push(SpinTerm { k, l, m });
            }
        }
        out
    }

    /// Share of `Σ_{j′,k} |a[j][j′][k]|²` carried by `|k| > k_cut`.
    pub fn tail_fraction(&self, j: usize, k_cut: usize) -> f64 {
        let kk = self.k_max as i32;
        let (mut tail, mut total) = (0.0, 0.0);
        for jp in 0..3 {
            for k in -kk..=kk {
                let e = self.coeff(j, jp, k).norm_sqr();
                total += e;
                if k.unsigned_abs() as usize > k_cut {
                    tail += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Conventional coefficients of `Ĩ_j(t)` rebuilt from the stored coefficients.
    pub fn reconstruct(&self, j: usize, t: f64) -> [Complex64; 3] {
        let mut v = [Complex64::new(0.0, 0.0); 3];
        for term in self.expansion() {
            let ph = Complex64::from_polar(1.0, TAU * (term.k as f64 * self.omega_m() + term.l as f64 * self.omega_cw) * t);
            for i in 0..3 {
                v[i] += term.m[j][i] * ph;
            }
        }
        v
    }
}

fn basis_for_axis(axis: [f64; 3]) -> [[f64; 3]; 3] {
    let z = axis;
    let refs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let r = refs
        .iter()
        .min_by(|a, b| {
            let da = (a[0] * z[0] + a[1] * z[1] + a[2] * z[2]).abs();
            let db = (b[0] * z[0] + b[1] * z[1] + b[2] * z[2]).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let d = r[0] * z[0] + r[1] * z[1] + r[2] * z[2];
    let mut x = [r[0] - d * z[0], r[1] - d * z[1], r[2] - d * z[2]];
    let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    for c in x.iter_mut() {
        *c /= n;
    }
    let y = [z[1] * x[2] - z[2] * x[1], z[2] * x[0] - z[0] * x[2], z[0] * x[1] - z[1] * x[0]];
    [x, y, z]
}

/// Discrete Fourier coefficients `k = −K..=K` of nine real series sampled at midpoints.
fn fourier_series(samples: &[[[f64; 3]; 3]], k_max: usize) -> [[Vec<Complex64>; 3]; 3] {
    let n = samples.len();
    let mut out: [[Vec<Complex64>; 3]; 3] = Default::default();
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = vec![Complex64::new(0.0, 0.0); 2 * k_max + 1];
        }
    }
    for k in 0..=k_max as i64 {
        let mut acc = [[Complex64::new(0.0, 0.0); 3]; 3];
        let step = Complex64::from_polar(1.0, -TAU * k as f64 / n as f64);
        let mut w = Complex64::from_polar(1.0, -TAU * k as f64 * 0.5 / n as f64);
        for s in samples {
            for j in 0..3 {
                for jp in 0..3 {
                    acc[j][jp] += w * s[j][jp];
                }
            }
            w *= step;
        }
        for j in 0..3 {
            for jp in 0..3 {
                let c = acc[j][jp] / n as f64;
                out[j][jp][k_max + k as usize] = c;
                out[j][jp][k_max - k as usize] = c.conj();
            }
        }
    }
    out
}

fn tail_energy(samples: &[[[f64; 3]; 3]], a: &[[Vec<Complex64>; 3]; 3]) -> f64 {
    let n = samples.len() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        let total: f64 = samples.iter().map(|s| (0..3).map(|jp| s[j][jp].powi(2)).sum::<f64>()).sum::<f64>() / n;
        let kept: f64 = (0..3).map(|jp| a[j][jp].iter().map(|c| c.norm_sqr()).sum::<f64>()).sum();
        worst = worst.max((total - kept) / total.max(1e-300));
    }
    worst.max(0.0)
}

/// Fourier-analyses sampled projections, growing K when allowed.
fn analyse(
    samples: &[[[f64; 3]; 3]],
    opts: &CoefficientOptions,
) -> Result<([[Vec<Complex64>; 3]; 3], usize, f64), AhtError> {
    let cap = samples.len() / 2 - 1;
    let mut k = opts.k_max.min(cap);
    loop {
        let a = fourier_series(samples, k);
        let tail = tail_energy(samples, &a);
        if tail <= opts.tail_tol {
            return Ok((a, k, tail));
        }
        if !opts.auto_k || k >= cap {
            let mut suggested = k;
            while suggested < cap {
                suggested = (suggested * 2).min(cap);
                if tail_energy(samples, &fourier_series(samples, suggested)) <= opts.tail_tol {
                    break;
                }
            }
            return Err(AhtError::Truncation { k, tail, suggested });
        }
        k = ((k as f64 * 1.5).ceil() as usize).min(cap);
    }
}

/// Coefficients of `cos β_m(t)` and `sin β_m(t)` for an amplitude-modulated channel.
pub fn am_coefficients(split: &AmSplit, opts: &CoefficientOptions) -> Result<FourierCoefficientSet, AhtError> {
    let net = split.am_integral_turns();
    if net.abs() > 1e-10 {
        return Err(AhtError::NetRotation(net));
    }
    let tau_m = split.period();
    let n = opts.n_samples();
    let (s0, c0) = split.axis_phase.sin_cos();
    let basis = [[-s0, c0, 0.0], [0.0, 0.0, 1.0], [c0, s0, 0.0]];
    // cumulative angle at segment starts
    let mut starts = Vec::with_capacity(split.am_component.len());
    let mut t = 0.0;
    let mut beta = 0.0;
    for s in &split.am_component {
        starts.push((t, beta));
        t += s.duration;
        beta += TAU * s.amplitude * s.duration;
    }
    let mut samples = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let ts = (i as f64 + 0.5) * tau_m / n as f64;
        while seg + 1 < starts.len() && ts >= starts[seg + 1].0 {
            seg += 1;
        }
        let (t0, b0) = starts[seg];
        let b = b0 + TAU * split.am_component[seg].amplitude * (ts - t0);
        let (sb, cb) = b.sin_cos();
        let mut c = [[0.0; 3]; 3];
        for (j, row) in c.iter_mut().enumerate() {
            let ex = basis[0][j];
            let ey = basis[1][j];
            row[0] = ex * cb + ey * sb;
            row[1] = -ex * sb + ey * cb;
            row[2] = basis[2][j];
        }
        samples.push(c);
    }
    let (a, k_max, tail) = analyse(&samples, opts)?;
    Ok(FourierCoefficientSet {
        tau_m,
        omega_cw: split.omega_cw,
        axis: basis[2],
        basis,
        k_max,
        split: split.omega_cw != 0.0,
        a,
        tail_energy: tail,
    })
}

/// Interaction-frame coefficients for the rf on `channel` plus a constant `offset` (Hz).
pub fn general_coefficients(
    seq: &PulseSequence,
    channel: &str,
    offset: f64,
    opts: &CoefficientOptions,
) -> Result<FourierCoefficientSet, AhtError> {
    let rot = effective_rotation(seq, channel, offset)?;
    frame_coefficients(seq.segments(channel)?, rot, offset, opts)
}

/// Same as [`general_coefficients`] for an explicit segment list and effective rotation.
pub fn frame_coefficients(
    segs: &[crate::pulse::PulseSegment],
    rot: EffectiveRotation,
    offset: f64,
    opts: &CoefficientOptions,
) -> Result<FourierCoefficientSet, AhtError> {
    let norm = (rot.axis[0].powi(2) + rot.axis[1].powi(2) + rot.axis[2].powi(2)).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(AhtError::NonUnitAxis(norm));
    }
    let tau_m = rot.tau_m;
    let rotating = rot.omega_cw != 0.0;
    let basis = if rotating { basis_for_axis(rot.axis) } else { [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };
    let n = opts.n_samples();
    let mut samples = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut q_start = Quaternion::<f64>::identity();
    let w = TAU * rot.omega_cw;
    for i in 0..n {
        let ts = (i as f64 + 0.5) * tau_m / n as f64;
        while seg < segs.len() && ts >= seg_start + segs[seg].duration {
            let s = segs[seg];
            q_start = compose(&Quaternion::from_segment(offset, s.amplitude, s.phase, s.duration), &q_start);
            seg_start += s.duration;
            seg += 1;
        }
        let u = if seg < segs.len() {
            let s = segs[seg];
            compose(&Quaternion::from_segment(offset, s.amplitude, s.phase, ts - seg_start), &q_start)
        } else {
            q_start
        };
        let p = if rotating { compose(&u, &Quaternion::from_axis_angle(rot.axis, -w * ts)) } else { u };
        let r = p.rotation_matrix();
        let mut c = [[0.0; 3]; 3];
        for (j, row) in c.iter_mut().enumerate() {
            for (jp, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|i| r[j][i] * basis[jp][i]).sum();
            }
        }
        samples.push(c);
    }
    let (a, k_max, tail) = analyse(&samples, opts)?;
    Ok(FourierCoefficientSet {
        tau_m,
        omega_cw: rot.omega_cw,
        axis: rot.axis,
        basis,
        k_max,
        split: rotating,
        a,
        tail_energy: tail,
    })
}

/// Identity frame: no rf and no offset over period `tau_m`.
pub fn static_frame(tau_m: f64) -> FourierCoefficientSet {
    let zero = Complex64::new(0.0, 0.0);
    let mut a: [[Vec<Complex64>; 3]; 3] = Default::default();
    for j in 0..3 {
        for jp in 0..3 {
            a[j][jp] = vec![if j == jp { Complex64::new(1.0, 0.0) } else { zero }];
        }
    }
    FourierCoefficientSet {
        tau_m,
        omega_cw: 0.0,
        axis: [0.0, 0.0, 1.0],
        basis: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        k_max: 0,
        split: false,
        a,
        tail_energy: 0.0,
    }
}

/// Integer frequency labels; spins not involved carry zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrequencyTuple {
    pub n: i32,
    pub k: [i32; 3],
    pub l: [i32; 3],
}

/// Fundamental frequencies (Hz) entering the resonance sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    pub omega_r: f64,
    /// per spin `(ω_m, ω_cw, K, l split)`
    pub spins: Vec<(f64, f64, usize, bool)>,
}

impl FrequencySet {
    pub fn sum(&self, t: &FrequencyTuple) -> f64 {
        let mut s = t.n as f64 * self.omega_r;
        for (q, (wm, wcw, _, _)) in self.spins.iter().enumerate() {
            s += t.k[q] as f64 * wm + t.l[q] as f64 * wcw;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearResonanceReport {
    pub tuple: FrequencyTuple,
    /// Hz
    pub delta_omega_near: f64,
    pub absorbed_into_spin: usize,
}

fn absorbing_spin(t: &FrequencyTuple, n_spins: usize) -> Option<usize> {
    (0..n_spins).find(|&q| t.l[q] == 1).or_else(|| (0..n_spins).find(|&q| t.l[q] == -1))
}

/// All tuples with `|n| ≤ n_max`, `|k_q| ≤ K_q`, `l_q ∈ {−1,0,1}` (only 0 when `ω_cw = 0`).
pub fn enumerate_resonances(
    freqs: &FrequencySet,
    n_max: i32,
    exact_tol: f64,
    near_threshold: f64,
) -> (Vec<FrequencyTuple>, Vec<NearResonanceReport>) {
    let mut resonant = Vec::new();
    let mut near = Vec::new();
    let ns = freqs.spins.len();
    let mut ranges: Vec<Vec<(i32, i32)>> = Vec::with_capacity(ns);
    for (_, _, kk, split) in &freqs.spins {
        let ls: &[i32] = if *split { &[-1, 0, 1] } else { &[0] };
        let kk = *kk as i32;
        ranges.push((-kk..=kk).flat_map(|k| ls.iter().map(move |l| (k, *l))).collect());
    }
    let mut idx = vec![0usize; ns];
    loop {
        for n in -n_max..=n_max {
            let mut t = FrequencyTuple { n, k: [0; 3], l: [0; 3] };
            for q in 0..ns {
                let (k, l) = ranges[q][idx[q]];
                t.k[q] = k;
                t.l[q] = l;
            }
            let s = freqs.sum(&t);
            if s.abs() <= exact_tol {
                resonant.push(t);
            } else if s.abs() <= near_threshold {
                if let Some(q) = absorbing_spin(&t, ns) {
                    near.push(NearResonanceReport { tuple: t, delta_omega_near: s, absorbed_into_spin: q });
                }
            }
        }
        let mut q = 0;
        loop {
            if q == ns {
                return (resonant, near);
            }
            idx[q] += 1;
            if idx[q] < ranges[q].len() {
                break;
            }
            idx[q] = 0;
            q += 1;
        }
    }
}

/// Structure of one Hamiltonian term in the interaction frame.
#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// `ω(t) I_qz`
    Shift { spin: usize },
    /// `ω(t) Σ_ab G_ab I_ia I_jb`
    Pair { i: usize, j: usize, g: [[f64; 3]; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTerm {
    pub kind: TermKind,
    /// indices into `SpinSystem::interactions` whose spatial parts add up here
    pub sources: Vec<usize>,
    /// isotropic offset already carried by the frame, Hz (subtracted at n = 0)
    pub frame_offset: f64,
}

/// Spin system plus per-spin interaction frames.
#[derive(Debug, Clone)]
pub struct AhtModel {
    pub system: SpinSystem,
    pub spin_rate: f64,
    pub rotor_angle: f64,
    pub frames: Vec<FourierCoefficientSet>,
    pub terms: Vec<ModelTerm>,
    /// constant single-spin corrections `(spin, Hz)` along the spin's axis
    pub field_corrections: Vec<(usize, f64)>,
    pub exact_tol: f64,
}

impl AhtModel {
    /// `frame_offsets[q]` is the isotropic offset (Hz) included in spin `q`'s frame.
    pub fn new(
        system: &SpinSystem,
        spin_rate: f64,
        frames: Vec<FourierCoefficientSet>,
        frame_offsets: &[f64],
    ) -> Result<Self, AhtError> {
        let ns = system.n_spins();
        if frames.len() != ns {
            return Err(AhtError::MissingSpin(frames.len()));
        }
        let mut terms = Vec::new();
        for q in 0..ns {
            let sources: Vec<usize> = system
                .interactions
                .iter()
                .enumerate()
                .filter(|(_, t)| t.kind == InteractionKind::ChemicalShift && t.spin == q)
                .map(|(i, _)| i)
                .collect();
            let off = frame_offsets.get(q).copied().unwrap_or(0.0);
            if !sources.is_empty() || off != 0.0 {
                terms.push(ModelTerm { kind: TermKind::Shift { spin: q }, sources, frame_offset: off });
            }
        }
        for (i, t) in system.interactions.iter().enumerate() {
            if t.kind != InteractionKind::ChemicalShift {
                let (a, b) = (t.spin, t.partner.unwrap());
                terms.push(ModelTerm {
                    kind: TermKind::Pair { i: a, j: b, g: system.coupling_tensor(t) },
                    sources: vec![i],
                    frame_offset: 0.0,
                });
            }
        }
        Ok(AhtModel {
            system: system.clone(),
            spin_rate,
            rotor_angle: magic_angle(),
            frames,
            terms,
            field_corrections: Vec::new(),
            exact_tol: 1e-3,
        })
    }

    /// Model whose frames are the full rf + isotropic-offset evolution of each spin.
    pub fn general(
        system: &SpinSystem,
        seq: &PulseSequence,
        spin_rate: f64,
        opts: &CoefficientOptions,
    ) -> Result<Self, AhtError> {
        let mut frames = Vec::new();
        let mut offsets = Vec::new();
        for q in 0..system.n_spins() {
            let off = isotropic_offset(system, q);
            let ch = &system.spins[q].channel;
            let frame = if seq.channels.contains_key(ch) {
                general_coefficients(seq, ch, off, opts)?
            } else {
                let free = PulseSequence::new("free").with_channel(ch, vec![crate::pulse::PulseSegment::delay(seq.cycle_time())]);
                general_coefficients(&free, ch, off, opts)?
            };
            frames.push(frame);
            offsets.push(off);
        }
        Self::new(system, spin_rate, frames, &offsets)
    }

    pub fn n_spins(&self) -> usize {
        self.system.n_spins()
    }

    pub fn frequencies(&self) -> FrequencySet {
        FrequencySet {
            omega_r: self.spin_rate,
            spins: self.frames.iter().map(|f| (f.omega_m(), f.omega_cw, f.k_max, f.split)).collect(),
        }
    }

    /// Spatial parts per term for one crystallite (rad/s).
    pub fn spatial(&self, crystal: &EulerAngles<f64>) -> Result<Vec<SpatialFourierComponents<f64>>, AhtError> {
        let mut out = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut w = SpatialFourierComponents::isotropic(-TAU * term.frame_offset);
            for &s in &term.sources {
                let c = mas_fourier_components(&self.system.interactions[s], crystal, self.spin_rate, self.rotor_angle)?;
                for (a, b) in w.omega_n.iter_mut().zip(c.omega_n.iter()) {
                    *a += b;
                }
            }
            out.push(w);
        }
        Ok(out)
    }

    /// Orientation-averaged magnitude of `ω^(n)` for a term (rad/s).
    pub fn spatial_rms(&self, term: &ModelTerm, n: i32) -> f64 {
        let mut s: f64 = term
            .sources
            .iter()
            .map(|&i| self.system.interactions[i].powder_rms(n, self.rotor_angle))
            .sum();
        if n == 0 {
            let iso: f64 = term
                .sources
                .iter()
                .map(|&i| {
                    let t = &self.system.interactions[i];
                    if t.kind == InteractionKind::Dipolar {
                        0.0
                    } else {
                        t.delta_iso
                    }
                })
                .sum();
            s += (TAU * (iso - term.frame_offset)).abs();
        }
        s
    }

    fn spin_ops(&self) -> Vec<[CMatrix<f64>; 3]> {
        (0..self.n_spins())
            .map(|q| [self.system.op(q, Axis::X), self.system.op(q, Axis::Y), self.system.op(q, Axis::Z)])
            .collect()
    }

    /// Spin-part terms of one model term: tuple (with n = 0) and coefficient matrix.
    fn spin_terms(&self, term: &ModelTerm) -> Vec<(FrequencyTuple, [[Complex64; 3]; 3])> {
        let zero = Complex64::new(0.0, 0.0);
        let mut out = Vec::new();
        match &term.kind {
            TermKind::Shift { spin } => {
                for st in self.frames[*spin].expansion() {
                    let mut m = [[zero; 3]; 3];
                    m[0] = st.m[2];
                    if m[0].iter().all(|c| c.norm() < 1e-14) {
                        continue;
                    }
                    let mut t = FrequencyTuple { n: 0, k: [0; 3], l: [0; 3] };
                    t.k[*spin] = st.k;
                    t.l[*spin] = st.l;
                    out.push((t, m));
                }
            }
            TermKind::Pair { i, j, g } => {
                let e1 = self.frames[*i].expansion();
                let e2 = self.frames[*j].expansion();
                // rows of G·M2 per a: Σ_b G_ab M2[b][d]
                for s2 in &e2 {
                    let mut gm2 = [[zero; 3]; 3];
                    for a in 0..3 {
                        for d in 0..3 {
                            gm2[a][d] = (0..3).map(|b| s2.m[b][d] * g[a][b]).sum();
                        }
                    }
                    let n2: f64 = gm2.iter().flatten().map(|c| c.norm_sqr()).sum();
                    if n2 < 1e-28 {
                        continue;
                    }
                    for s1 in &e1 {
                        let mut m = [[zero; 3]; 3];
                        let mut norm = 0.0;
                        for c in 0..3 {
                            for d in 0..3 {
                                let v: Complex64 = (0..3).map(|a| s1.m[a][c] * gm2[a][d]).sum();
                                norm += v.norm_sqr();
                                m[c][d] = v;
                            }
                        }
                        if norm < 1e-28 {
                            continue;
                        }
                        let mut t = FrequencyTuple { n: 0, k: [0; 3], l: [0; 3] };
                        t.k[*i] = s1.k;
                        t.l[*i] = s1.l;
                        t.k[*j] = s2.k;
                        t.l[*j] = s2.l;
                        out.push((t, m));
                    }
                }
            }
        }
        out
    }

    fn operator(&self, term: &ModelTerm, m: &[[Complex64; 3]; 3], ops: &[[CMatrix<f64>; 3]]) -> CMatrix<f64> {
        let dim = self.system.dim();
        let mut h = CMatrix::zeros(dim, dim);
        match &term.kind {
            TermKind::Shift { spin } => {
                for i in 0..3 {
                    if m[0][i] != Complex64::new(0.0, 0.0) {
                        h += &ops[*spin][i] * m[0][i];
                    }
                }
            }
            TermKind::Pair { i, j, .. } => {
                for c in 0..3 {
                    for d in 0..3 {
                        if m[c][d] != Complex64::new(0.0, 0.0) {
                            h += (&ops[*i][c] * &ops[*j][d]) * m[c][d];
                        }
                    }
                }
            }
        }
        h
    }

    /// Every Fourier component for one crystallite, restricted to the selected terms.
    pub fn assemble_components(
        &self,
        spatial: &[SpatialFourierComponents<f64>],
        include: &dyn Fn(&ModelTerm) -> bool,
    ) -> FourierComponentSet {
        let ops = self.spin_ops();
        let mut map: BTreeMap<FrequencyTuple, CMatrix<f64>> = BTreeMap::new();
        for (term, w) in self.terms.iter().zip(spatial) {
            if !include(term) {
                continue;
            }
            for (t, m) in self.spin_terms(term) {
                let base = self.operator(term, &m, &ops);
                for n in -2..=2i32 {
                    let wn = w.get(n);
                    if wn.norm() < 1e-300 {
                        continue;
                    }
                    let key = FrequencyTuple { n, ..t };
                    let add = &base * wn;
                    map.entry(key).and_modify(|x| *x += &add).or_insert(add);
                }
            }
        }
        FourierComponentSet { freqs: self.frequencies(), dim: self.system.dim(), components: map }
    }

    /// Resonant spin parts grouped by `n`, reusable across crystallites.
    pub fn first_order_kernel(&self) -> FirstOrderKernel {
        let ops = self.spin_ops();
        let freqs = self.frequencies();
        let dim = self.system.dim();
        let mut mats = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut per_n: [CMatrix<f64>; 5] = std::array::from_fn(|_| CMatrix::zeros(dim, dim));
            for (t, m) in self.spin_terms(term) {
                let mut built: Option<CMatrix<f64>> = None;
                for n in -2..=2i32 {
                    let s = freqs.sum(&FrequencyTuple { n, ..t });
                    if s.abs() <= self.exact_tol {
                        let op = built.get_or_insert_with(|| self.operator(term, &m, &ops));
                        per_n[(n + 2) as usize] += &*op;
                    }
                }
            }
            mats.push(per_n);
        }
        let mut constant = CMatrix::zeros(dim, dim);
        for (q, delta) in &self.field_corrections {
            let ax = self.frames[*q].axis;
            let v = [ax[0], ax[1], ax[2]].map(|x| Complex64::new(x * TAU * delta, 0.0));
            constant += spin_vector(*q, &v, self.n_spins()).unwrap();
        }
        FirstOrderKernel { mats, constant }
    }

    /// Absorbs every effective field with `0 < |ω_cw| ≤ threshold` into a constant term.
    pub fn absorb_small_fields(&self, threshold: f64) -> AhtModel {
        let mut out = self.clone();
        for q in 0..self.n_spins() {
            let w = self.frames[q].omega_cw;
            if w != 0.0 && w.abs() <= threshold {
                let mut t = FrequencyTuple { n: 0, k: [0; 3], l: [0; 3] };
                t.l[q] = 1;
                let r = NearResonanceReport { tuple: t, delta_omega_near: w, absorbed_into_spin: q };
                out = near_resonance_correction(&out, &r, None).expect("no limit");
            }
        }
        out
    }

    /// Near resonances of all spin terms, with a crystallite-independent weight.
    pub fn near_resonances(&self, threshold: f64) -> Vec<(NearResonanceReport, f64)> {
        let freqs = self.frequencies();
        let mut out = Vec::new();
        for term in &self.terms {
            for (t, m) in self.spin_terms(term) {
                let mnorm: f64 = m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                for n in -2..=2i32 {
                    let tup = FrequencyTuple { n, ..t };
                    let s = freqs.sum(&tup);
                    if s.abs() > self.exact_tol && s.abs() <= threshold {
                        let w = self.spatial_rms(term, n);
                        if w == 0.0 {
                            continue;
                        }
                        if let Some(q) = absorbing_spin(&tup, self.n_spins()) {
                            out.push((
                                NearResonanceReport { tuple: tup, delta_omega_near: s, absorbed_into_spin: q },
                                w * mnorm,
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// Near resonance carrying the largest aggregated weight, if any.
    pub fn dominant_near_resonance(&self, threshold: f64) -> Option<NearResonanceReport> {
        let reports = self.near_resonances(threshold);
        let mut groups: BTreeMap<(i64, usize, i32), (f64, NearResonanceReport)> = BTreeMap::new();
        for (r, w) in reports {
            let q = r.absorbed_into_spin;
            let l = r.tuple.l[q];
            // normalise so the absorbing spin carries l = +1
            let d = r.delta_omega_near * l as f64;
            let key = ((d / self.exact_tol.max(1e-9)).round() as i64, q, 1);
            let e = groups.entry(key).or_insert((0.0, r.clone()));
            e.0 += w;
        }
        groups
            .into_values()
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .map(|(_, r)| r)
    }

    /// Per-spin effective rotations of the frames.
    pub fn big_effective(&self) -> Vec<EffectiveRotation> {
        self.frames
            .iter()
            .map(|f| EffectiveRotation { omega_cw: f.omega_cw, axis: f.axis, tau_m: f.tau_m })
            .collect()
    }

    /// Sub-period `τ_c′`: least common multiple of the rotor and modulation periods.
    pub fn sub_period(&self) -> Option<f64> {
        let mut periods = vec![1.0 / self.spin_rate];
        periods.extend(self.frames.iter().map(|f| f.tau_m));
        common_period(&periods)
    }

    /// Tab-separated tuple list for one crystallite: `Σω`, component norm and
    /// class (`resonant`, `near`, `off`). Off-resonant rows are kept only
    /// within ten times the near threshold.
    pub fn tuple_dump(&self, crystal: &EulerAngles<f64>, near_threshold: f64) -> Result<String, AhtError> {
        let spatial = self.spatial(crystal)?;
        let freqs = self.frequencies();
        let ns = self.n_spins();
        let mut rows: Vec<(f64, usize, FrequencyTuple, f64, &str)> = Vec::new();
        for (ti, (term, w)) in self.terms.iter().zip(&spatial).enumerate() {
            for (t, m) in self.spin_terms(term) {
                let mnorm: f64 = m.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                for n in -2..=2i32 {
                    let wn = w.get(n).norm();
                    if wn < 1e-12 {
                        continue;
                    }
                    let tup = FrequencyTuple { n, ..t };
                    let sum = freqs.sum(&tup);
                    let class = if sum.abs() <= self.exact_tol {
                        "resonant"
                    } else if sum.abs() <= near_threshold {
                        "near"
                    } else if sum.abs() <= 10.0 * near_threshold {
                        "off"
                    } else {
                        continue;
                    };
                    rows.push((sum, ti, tup, wn * mnorm / TAU, class));
                }
            }
        }
        rows.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut out = String::from("term\tn");
        for q in 0..ns {
            out.push_str(&format!("\tk{0}\tl{0}", q + 1));
        }
        out.push_str("\tsum_hz\tnorm_hz\tclass\n");
        for (sum, ti, t, norm, class) in rows {
            out.push_str(&format!("{}\t{}", ti, t.n));
            for q in 0..ns {
                out.push_str(&format!("\t{}\t{}", t.k[q], t.l[q]));
            }
            out.push_str(&format!("\t{sum:.6}\t{norm:.6e}\t{class}\n"));
        }
        Ok(out)
    }

    pub fn first_order(&self, crystal: &EulerAngles<f64>) -> Result<EffectiveHamiltonian, AhtError> {
        let spatial = self.spatial(crystal)?;
        let h = self.first_order_kernel().evaluate(&spatial);
        Ok(self.wrap(1, h))
    }

    pub fn wrap(&self, order: u8, matrix: CMatrix<f64>) -> EffectiveHamiltonian {
        let tau_c_prime = self.sub_period().unwrap_or(self.frames[0].tau_m);
        let mut all = vec![self.spin_rate];
        all.extend(self.frames.iter().map(|f| f.omega_m()));
        all.extend(self.frames.iter().filter(|f| f.omega_cw != 0.0).map(|f| f.omega_cw.abs()));
        let tau_c = common_period(&all.iter().map(|f| 1.0 / f).collect::<Vec<_>>());
        EffectiveHamiltonian { order, matrix, tau_c, tau_c_prime, big_effective: self.big_effective() }
    }
}

/// Absorbs a near resonance: the absorbing spin's ω_cw moves by `−l·Δ` and the
/// constant term `l·Δ·F̂_q` joins the first-order Hamiltonian.
pub fn near_resonance_correction(
    model: &AhtModel,
    report: &NearResonanceReport,
    max_fraction_of_rf: Option<(f64, f64)>,
) -> Result<AhtModel, AhtError> {
    if let Some((mean_rf, frac)) = max_fraction_of_rf {
        let limit = mean_rf * frac;
        if report.delta_omega_near.abs() > limit {
            return Err(AhtError::NearResonanceTooLarge { delta_hz: report.delta_omega_near, limit_hz: limit });
        }
    }
    let q = report.absorbed_into_spin;
    let l = report.tuple.l[q] as f64;
    let mut out = model.clone();
    out.frames[q].omega_cw -= l * report.delta_omega_near;
    out.field_corrections.push((q, l * report.delta_omega_near));
    Ok(out)
}

/// Resonant spin parts per term and `n`, plus constant corrections.
#[derive(Debug, Clone)]
pub struct FirstOrderKernel {
    pub mats: Vec<[CMatrix<f64>; 5]>,
    pub constant: CMatrix<f64>,
}

impl FirstOrderKernel {
    pub fn evaluate(&self, spatial: &[SpatialFourierComponents<f64>]) -> CMatrix<f64> {
        let mut h = self.constant.clone();
        for (per_n, w) in self.mats.iter().zip(spatial) {
            for n in -2..=2i32 {
                let wn = w.get(n);
                if wn.norm() > 0.0 {
                    h += &per_n[(n + 2) as usize] * wn;
                }
            }
        }
        h
    }
}

/// Operator-valued Fourier components for one crystallite.
#[derive(Debug, Clone)]
pub struct FourierComponentSet {
    pub freqs: FrequencySet,
    pub dim: usize,
    pub components: BTreeMap<FrequencyTuple, CMatrix<f64>>,
}

impl FourierComponentSet {
    /// `Σ_tuples H_tuple e^{iΣω t}`.
    pub fn at(&self, t: f64) -> CMatrix<f64> {
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for (tup, m) in &self.components {
            h += m * Complex64::from_polar(1.0, TAU * self.freqs.sum(tup) * t);
        }
        h
    }

    /// Sum over tuples with `|Σω| ≤ exact_tol`.
    pub fn first_order(&self, exact_tol: f64) -> CMatrix<f64> {
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for (tup, m) in &self.components {
            if self.freqs.sum(tup).abs() <= exact_tol {
                h += m;
            }
        }
        h
    }

    /// Components grouped by total frequency (Hz); groups merge within `tol`.
    pub fn by_frequency(&self, tol: f64) -> Vec<(f64, CMatrix<f64>)> {
        let mut items: Vec<(f64, &CMatrix<f64>)> =
            self.components.iter().map(|(t, m)| (self.freqs.sum(t), m)).collect();
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut groups: Vec<(f64, CMatrix<f64>)> = Vec::new();
        for (f, m) in items {
            match groups.last_mut() {
                Some((g, acc)) if (f - *g).abs() <= tol => *acc += m,
                _ => groups.push((f, m.clone())),
            }
        }
        groups
    }

    /// `−½ Σ_{ω≠0} [H_{−ω}, H_ω]/ω + Σ_{ω≠0} [H_0, H_ω]/ω` (ω angular).
    pub fn second_order(&self, exact_tol: f64) -> Result<CMatrix<f64>, AhtError> {
        let groups = self.by_frequency(exact_tol);
        let mut h0 = CMatrix::zeros(self.dim, self.dim);
        let mut rest = Vec::new();
        for (f, m) in groups {
            if f.abs() <= exact_tol {
                h0 += m;
            } else {
                rest.push((f, m));
            }
        }
        let mut out = CMatrix::zeros(self.dim, self.dim);
        let mut sum_over_w = CMatrix::zeros(self.dim, self.dim);
        for (f, m) in &rest {
            if f.abs() <= exact_tol {
                return Err(AhtError::DenominatorUnderflow { freq_hz: *f, tol_hz: exact_tol });
            }
            let w = TAU * f;
            if let Some((_, mneg)) = rest.iter().find(|(g, _)| (g + f).abs() <= exact_tol) {
                out -= commutator(mneg, m).unwrap() * Complex64::new(0.5 / w, 0.0);
            }
            sum_over_w += m * Complex64::new(1.0 / w, 0.0);
        }
        out += commutator(&h0, &sum_over_w).unwrap();
        Ok(out)
    }
}

/// Time-independent effective Hamiltonian (rad/s) with the data needed to propagate it.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub order: u8,
    pub matrix: CMatrix<f64>,
    pub tau_c: Option<f64>,
    pub tau_c_prime: f64,
    pub big_effective: Vec<EffectiveRotation>,
}

impl EffectiveHamiltonian {
    pub fn plus(&self, other: &CMatrix<f64>, order: u8) -> EffectiveHamiltonian {
        EffectiveHamiltonian { order, matrix: &self.matrix + other, ..self.clone() }
    }

    /// `Σ_q 2π ω_cw^(q) F̂_q·I_q`.
    pub fn big_hamiltonian(&self) -> CMatrix<f64> {
        let n_spins = self.big_effective.len();
        let dim = 1 << n_spins;
        let mut h = CMatrix::zeros(dim, dim);
        for (q, r) in self.big_effective.iter().enumerate() {
            if r.omega_cw != 0.0 {
                let v = r.axis.map(|x| Complex64::new(TAU * r.omega_cw * x, 0.0));
                h += spin_vector(q, &v, n_spins).unwrap();
            }
        }
        h
    }

    /// Interaction-frame propagator `exp(−i H̄ N τ_c′)`.
    pub fn interaction_propagator(&self, n: usize) -> CMatrix<f64> {
        expm_hermitian(&self.matrix, n as f64 * self.tau_c_prime)
    }
}

/// Rotating-frame propagator `exp(−i H_big N τ_c′) · exp(−i H̄ N τ_c′)`.
pub fn effective_propagate(h: &EffectiveHamiltonian, n: usize) -> CMatrix<f64> {
    if n == 0 {
        return identity(h.matrix.nrows());
    }
    let t = n as f64 * h.tau_c_prime;
    expm_hermitian(&h.big_hamiltonian(), t) * expm_hermitian(&h.matrix, t)
}

fn rational(x: f64, max_den: u64) -> Option<(u64, u64)> {
    // continued fraction convergents
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - x).abs() <= 1e-9 * x.abs().max(1.0) {
            return Some((h1, k1));
        }
        let frac = v - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        v = 1.0 / frac;
    }
    (k1 > 0 && ((h1 as f64 / k1 as f64) - x).abs() <= 1e-9 * x.abs().max(1.0)).then_some((h1, k1))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of periods, or `None` when incommensurate
/// (rational approximation with denominators above 10⁶).
pub fn common_period(periods: &[f64]) -> Option<f64> {
    let base = *periods.first()?;
    let mut num = 1u64;
    for p in &periods[1..] {
        let (a, b) = rational(p / base, 1_000_000)?;
        // lcm of num/1 and a/b in units of base: lcm(num·b, a)/b, tracked as integer multiple
        let l = (num * b) / gcd(num * b, a) * a;
        num = l / b;
        if l % b != 0 {
            return None;
        }
    }
    Some(base * num as f64)
}

/// Isotropic shift of spin `q` summed over its shift tensors, Hz.
pub fn isotropic_offset(system: &SpinSystem, q: usize) -> f64 {
    system
        .interactions
        .iter()
        .filter(|t| t.kind == InteractionKind::ChemicalShift && t.spin == q)
        .map(|t| t.delta_iso)
        .sum()
}

/// Mean rf amplitude of a channel, Hz.
pub fn mean_amplitude(seq: &PulseSequence, channel: &str) -> Result<f64, AhtError> {
    let segs = seq.segments(channel)?;
    let period = seq.period(channel)?;
    Ok(segs.iter().map(|s| s.amplitude * s.duration).sum::<f64>() / period)
}

/// Default near-resonance threshold: `min(1 kHz, ω̄_rf/10)`.
pub fn default_near_threshold(mean_rf: f64) -> f64 {
    1000.0f64.min(mean_rf / 10.0)
}

/// Direct interaction-frame Hamiltonian `U_big† H_small U_big` of a model at time `t`.
pub fn direct_interaction_hamiltonian(
    model: &AhtModel,
    seq: &PulseSequence,
    frame_offsets: &[f64],
    crystal: &EulerAngles<f64>,
    t: f64,
) -> Result<CMatrix<f64>, AhtError> {
    let n_spins = model.n_spins();
    // H_small(t) in the rotating frame
    let spatial = model.spatial(crystal)?;
    let ops: Vec<[CMatrix<f64>; 3]> = (0..n_spins)
        .map(|q| [0, 1, 2].map(|i| single_spin_operator(q, Axis::cartesian(i), n_spins).unwrap()))
        .collect();
    let dim = 1 << n_spins;
    let mut h = CMatrix::zeros(dim, dim);
    for (term, w) in model.terms.iter().zip(&spatial) {
        let f = w.at(t, model.spin_rate);
        let op = match &term.kind {
            TermKind::Shift { spin } => ops[*spin][2].clone(),
            TermKind::Pair { i, j, g } => {
                let mut m = CMatrix::zeros(dim, dim);
                for a in 0..3 {
                    for b in 0..3 {
                        if g[a][b] != 0.0 {
                            m += (&ops[*i][a] * &ops[*j][b]) * Complex64::new(g[a][b], 0.0);
                        }
                    }
                }
                m
            }
        };
        h += op * Complex64::new(f, 0.0);
    }
    // U_big(t) as a product of single-spin rotations
    let mut u = CMatrix::<f64>::identity(1, 1);
    for q in 0..n_spins {
        let ch = &model.system.spins[q].channel;
        let tau = model.frames[q].tau_m;
        let mut qt = Quaternion::<f64>::identity();
        let segs: Vec<crate::pulse::PulseSegment> = seq.segments(ch).map(|s| s.to_vec()).unwrap_or_default();
        let reps = (t / tau).floor();
        let full = if segs.is_empty() {
            Quaternion::from_segment(frame_offsets[q], 0.0, 0.0, tau)
        } else {
            segs.iter().fold(Quaternion::identity(), |acc, s| {
                compose(&Quaternion::from_segment(frame_offsets[q], s.amplitude, s.phase, s.duration), &acc)
            })
        };
        for _ in 0..reps as usize {
            qt = compose(&full, &qt);
        }
        let mut rem = t - reps * tau;
        if segs.is_empty() {
            qt = compose(&Quaternion::from_segment(frame_offsets[q], 0.0, 0.0, rem), &qt);
        } else {
            for s in &segs {
                if rem <= 0.0 {
                    break;
                }
                let d = s.duration.min(rem);
                qt = compose(&Quaternion::from_segment(frame_offsets[q], s.amplitude, s.phase, d), &qt);
                rem -= d;
            }
        }
        u = u.kronecker(&qt.to_su2());
    }
    Ok(u.adjoint() * h * u)
}
