//! Piecewise-constant pulse sequences and their generators.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use thiserror::Error;

const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("pulse geometry overlaps: {0}")]
    Overlap(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("channel {0} is not amplitude modulated (non-collinear phases)")]
    NotAmplitudeModulated(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSegment {
    /// seconds
    pub duration: f64,
    /// rf nutation frequency, Hz
    pub amplitude: f64,
    /// radians
    pub phase: f64,
}

impl PulseSegment {
    pub fn new(duration: f64, amplitude: f64, phase: f64) -> Self {
        PulseSegment { duration, amplitude, phase }
    }

    pub fn delay(duration: f64) -> Self {
        Self::new(duration, 0.0, 0.0)
    }

    /// Flip angle in radians.
    pub fn flip(&self) -> f64 {
        TAU * self.amplitude * self.duration
    }
}

/// Per-channel segment lists. Each channel repeats with its own period.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub name: String,
    pub channels: BTreeMap<String, Vec<PulseSegment>>,
    /// Rotor period the sequence was built for, if rotor synchronized.
    pub tau_r: Option<f64>,
}

impl PulseSequence {
    pub fn new(name: &str) -> Self {
        PulseSequence { name: name.to_string(), channels: BTreeMap::new(), tau_r: None }
    }

    pub fn with_channel(mut self, label: &str, segments: Vec<PulseSegment>) -> Self {
        let segs = segments.into_iter().filter(|s| s.duration > TIME_EPS).collect();
        self.channels.insert(label.to_string(), segs);
        self
    }

    pub fn segments(&self, channel: &str) -> Result<&[PulseSegment], SequenceError> {
        self.channels
            .get(channel)
            .map(|v| v.as_slice())
            .ok_or_else(|| SequenceError::UnknownChannel(channel.to_string()))
    }

    pub fn period(&self, channel: &str) -> Result<f64, SequenceError> {
        Ok(self.segments(channel)?.iter().map(|s| s.duration).sum())
    }

    /// Longest channel period.
    pub fn cycle_time(&self) -> f64 {
        self.channels
            .values()
            .map(|v| v.iter().map(|s| s.duration).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Ratio of the cycle to the rotor period when it is an integer.
    pub fn rotor_periods_per_cycle(&self) -> Option<u32> {
        let tr = self.tau_r?;
        let r = self.cycle_time() / tr;
        let n = r.round();
        ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as u32)
    }

    /// Segment active on `channel` at time `t`, periodically extended;
    /// returns the segment and the absolute time at which it ends.
    pub fn segment_at(&self, channel: &str, t: f64) -> Result<(PulseSegment, f64), SequenceError> {
        let segs = self.segments(channel)?;
        let period = self.period(channel)?;
        if segs.is_empty() || period <= 0.0 {
            return Ok((PulseSegment::delay(f64::INFINITY), f64::INFINITY));
        }
        let reps = (t / period).floor();
        let base = reps * period;
        let mut acc = base;
        for s in segs {
            let end = acc + s.duration;
            if t < end - TIME_EPS {
                return Ok((*s, end));
            }
            acc = end;
        }
        let first = segs[0];
        Ok((first, acc + first.duration))
    }

    /// Channel segments repeated `n` times.
    pub fn unrolled(&self, channel: &str, n: usize) -> Result<Vec<PulseSegment>, SequenceError> {
        let segs = self.segments(channel)?;
        Ok((0..n).flat_map(|_| segs.iter().copied()).collect())
    }

    /// Same sequence with every phase advanced by `phi0`.
    pub fn phase_shifted(&self, phi0: f64) -> PulseSequence {
        let mut out = self.clone();
        for segs in out.channels.values_mut() {
            for s in segs.iter_mut() {
                s.phase += phi0;
            }
        }
        out
    }

    /// One line per segment: channel, duration_s, amplitude_Hz, phase_rad.
    pub fn dump(&self) -> String {
        let mut out = String::from("channel,duration_s,amplitude_hz,phase_rad\n");
        for (ch, segs) in &self.channels {
            for s in segs {
                let _ = writeln!(out, "{},{:.12e},{:.9e},{:.12}", ch, s.duration, s.amplitude, s.phase);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseCycle {
    None,
    XY4,
    XY8,
}

impl PhaseCycle {
    fn phases(self) -> &'static [f64] {
        const X: f64 = 0.0;
        const Y: f64 = FRAC_PI_2;
        match self {
            PhaseCycle::None => &[X, X],
            PhaseCycle::XY4 => &[X, Y, X, Y],
            PhaseCycle::XY8 => &[X, Y, X, Y, Y, X, Y, X],
        }
    }
}

/// The four free delays of one two-rotor-period RFDR unit.
pub fn rfdr_delays(tau_r: f64, pi_duration: f64, delta_tau: f64) -> [f64; 4] {
    let t_for = tau_r / 2.0 + delta_tau - pi_duration / 2.0;
    let t_rev = tau_r / 2.0 - delta_tau - pi_duration / 2.0;
    [t_for, tau_r - t_for - pi_duration, t_rev, tau_r - t_rev - pi_duration]
}

fn rfdr_unit(
    tau_r: f64,
    p: f64,
    amp: f64,
    delta_tau: f64,
    phases: [f64; 2],
) -> Result<Vec<PulseSegment>, SequenceError> {
    let d = rfdr_delays(tau_r, p, delta_tau);
    if d.iter().any(|x| *x < -1e-12) {
        return Err(SequenceError::Overlap(format!(
            "delta_tau {delta_tau:e} s leaves a negative delay with tau_r {tau_r:e} s and pulse {p:e} s"
        )));
    }
    Ok(vec![
        PulseSegment::delay(d[0].max(0.0)),
        PulseSegment::new(p, amp, phases[0]),
        PulseSegment::delay(d[1].max(0.0)),
        PulseSegment::delay(d[2].max(0.0)),
        PulseSegment::new(p, amp, phases[1]),
        PulseSegment::delay(d[3].max(0.0)),
    ])
}

fn rfdr_segments(
    tau_r: f64,
    p: f64,
    amp: f64,
    delta_tau: f64,
    cycle: PhaseCycle,
) -> Result<Vec<PulseSegment>, SequenceError> {
    if !(p > 0.0 && p < tau_r) {
        return Err(SequenceError::InvalidParameter(format!("pi duration {p:e} must lie in (0, tau_r)")));
    }
    let mut out = Vec::new();
    for pair in cycle.phases().chunks(2) {
        out.extend(rfdr_unit(tau_r, p, amp, delta_tau, [pair[0], pair[1]])?);
    }
    Ok(out)
}

/// RFDR with π pulses centred at `τ_r/2 + Δτ` and `3τ_r/2 − Δτ`.
pub fn build_rfdr(
    channel: &str,
    tau_r: f64,
    pi_duration: f64,
    pi_amplitude: f64,
    delta_tau: f64,
    cycle: PhaseCycle,
) -> Result<PulseSequence, SequenceError> {
    let segs = rfdr_segments(tau_r, pi_duration, pi_amplitude, delta_tau, cycle)?;
    let mut seq = PulseSequence::new("rfdr").with_channel(channel, segs);
    seq.tau_r = Some(tau_r);
    Ok(seq)
}

/// True when the two π pulses of a unit coincide or sit 2τ_r apart.
pub fn rfdr_is_degenerate(tau_r: f64, pi_duration: f64, delta_tau: f64) -> bool {
    ((tau_r - pi_duration) / 2.0 - delta_tau.abs()).abs() < 1e-12
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub n_blocks: usize,
    pub tau_sweep: f64,
    pub x_co: f64,
    pub delta_tau: Vec<f64>,
}

pub fn tangential_sweep(n: usize, tau_sweep: f64, x_co: f64) -> Result<SweepSchedule, SequenceError> {
    if n == 0 {
        return Err(SequenceError::InvalidParameter("N must be at least 1".into()));
    }
    if n >= 2 && !(x_co > 0.0) {
        return Err(SequenceError::InvalidParameter("x_co must be positive for N >= 2".into()));
    }
    if n >= 4 && x_co >= FRAC_PI_2 {
        return Err(SequenceError::InvalidParameter("x_co must be below pi/2".into()));
    }
    let delta_tau = if n == 1 {
        vec![0.0]
    } else {
        let t = x_co.tan();
        (0..n)
            .map(|i| {
                let x = x_co * (-1.0 + 2.0 * i as f64 / (n - 1) as f64);
                tau_sweep / 2.0 * x.tan() / t
            })
            .collect()
    };
    Ok(SweepSchedule { n_blocks: n, tau_sweep, x_co, delta_tau })
}

/// Adiabatic RFDR: one XY-8 block (8 τ_r) per schedule entry.
pub fn build_adiabatic_rfdr(
    channel: &str,
    tau_r: f64,
    pi_duration: f64,
    pi_amplitude: f64,
    schedule: &SweepSchedule,
) -> Result<PulseSequence, SequenceError> {
    let mut segs = Vec::new();
    for dt in &schedule.delta_tau {
        segs.extend(rfdr_segments(tau_r, pi_duration, pi_amplitude, *dt, PhaseCycle::XY8)?);
    }
    let mut seq = PulseSequence::new("adiabatic_rfdr").with_channel(channel, segs);
    seq.tau_r = Some(tau_r);
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RespirationVariant {
    Plain,
    BbSync,
    BbAsync,
    BbNoPhase,
}

/// Linear ramp of the phase-alternating amplitude on one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeRamp {
    /// total span Δ, Hz
    pub span: f64,
    /// centre offset added to the nominal amplitude, Hz
    pub center: f64,
    /// number of rotor periods the ramp covers
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RespirationParams {
    pub tau_r: f64,
    pub tau_p: f64,
    /// channel label and rf amplitude (Hz)
    pub channels: Vec<(String, f64)>,
    pub variant: RespirationVariant,
    pub tau_com: f64,
    /// compensation pulse amplitude per channel (defaults to the channel amplitude)
    pub com_amplitudes: Vec<Option<f64>>,
    /// ramp applied to the first channel
    pub sweep: Option<AmplitudeRamp>,
    /// per channel: rotor echo runs −x then +x instead of +x then −x
    pub inverted_echo: Vec<bool>,
}

impl RespirationParams {
    pub fn plain(tau_r: f64, tau_p: f64, channels: &[(&str, f64)]) -> Self {
        RespirationParams {
            tau_r,
            tau_p,
            channels: channels.iter().map(|(c, a)| (c.to_string(), *a)).collect(),
            variant: RespirationVariant::Plain,
            tau_com: 0.0,
            com_amplitudes: vec![None; channels.len()],
            sweep: None,
            inverted_echo: (0..channels.len()).map(|i| i % 2 == 1).collect(),
        }
    }
}

/// Rotor-echo element: +x for half of the free time, −x for the other half
/// (or the reverse), optional compensation pulse in the middle, then the short +x pulse.
fn respiration_period(
    tau_r: f64,
    tau_p: f64,
    amp: f64,
    com: Option<(f64, f64, f64)>,
    inverted: bool,
) -> Vec<PulseSegment> {
    let free = tau_r - tau_p - com.map_or(0.0, |c| c.0);
    let first = if inverted { PI } else { 0.0 };
    let mut v = vec![PulseSegment::new(free / 2.0, amp, first)];
    if let Some((d, a, ph)) = com {
        v.push(PulseSegment::new(d, a, ph));
    }
    v.push(PulseSegment::new(free / 2.0, amp, first + PI));
    v.push(PulseSegment::new(tau_p, amp, 0.0));
    v
}

pub fn build_respiration_cp(p: &RespirationParams) -> Result<PulseSequence, SequenceError> {
    if !(p.tau_p > 0.0 && p.tau_p < p.tau_r) {
        return Err(SequenceError::InvalidParameter("tau_p must lie in (0, tau_r)".into()));
    }
    let bb = p.variant != RespirationVariant::Plain;
    if bb && !(p.tau_com > 0.0 && p.tau_com + p.tau_p < p.tau_r) {
        return Err(SequenceError::Overlap("tau_com + tau_p must stay below tau_r".into()));
    }
    let alternating = matches!(p.variant, RespirationVariant::BbSync | RespirationVariant::BbAsync);
    let mut repeats = if alternating { 2 } else { 1 };
    if let Some(r) = p.sweep {
        if r.repeats == 0 {
            return Err(SequenceError::InvalidParameter("ramp needs at least one repeat".into()));
        }
        repeats = r.repeats.max(repeats);
        if alternating && repeats % 2 == 1 {
            repeats += 1;
        }
    }
    let mut seq = PulseSequence::new("respiration_cp");
    for (ci, (label, amp)) in p.channels.iter().enumerate() {
        let mut segs = Vec::new();
        for m in 0..repeats {
            let mut a = *amp;
            if let (0, Some(r)) = (ci, p.sweep) {
                let frac = if r.repeats > 1 { m.min(r.repeats - 1) as f64 / (r.repeats - 1) as f64 } else { 0.5 };
                a = amp + r.center + r.span * (frac - 0.5);
            }
            let com = bb.then(|| {
                let ca = p.com_amplitudes.get(ci).copied().flatten().unwrap_or(*amp);
                let flip_sign = match p.variant {
                    RespirationVariant::BbSync => m % 2,
                    RespirationVariant::BbAsync => (m + ci) % 2,
                    _ => 0,
                };
                (p.tau_com, ca, PI * flip_sign as f64)
            });
            let inverted = p.inverted_echo.get(ci).copied().unwrap_or(false);
            let mut period = respiration_period(p.tau_r, p.tau_p, a, com, inverted);
            if p.sweep.is_some() && ci == 0 {
                // the short pulse keeps its nominal amplitude
                let last = period.len() - 1;
                period[last].amplitude = *amp;
            }
            segs.extend(period);
        }
        seq = seq.with_channel(label, segs);
    }
    seq.tau_r = Some(p.tau_r);
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C7Element {
    C7,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseDirection {
    Increment,
    Decrement,
}

pub fn build_c7(
    channel: &str,
    element: C7Element,
    spin_rate: f64,
    direction: PhaseDirection,
) -> Result<PulseSequence, SequenceError> {
    if !(spin_rate > 0.0) {
        return Err(SequenceError::InvalidParameter("spin rate must be positive".into()));
    }
    let tau_r = 1.0 / spin_rate;
    let amp = 7.0 * spin_rate;
    let t_elem = 2.0 * tau_r / 7.0;
    let mut segs = Vec::new();
    for j in 0..7 {
        let sgn = if direction == PhaseDirection::Increment { 1.0 } else { -1.0 };
        let phi = sgn * TAU * j as f64 / 7.0;
        let parts: &[(f64, f64)] = match element {
            C7Element::C7 => &[(0.5, 0.0), (0.5, PI)],
            C7Element::Post => &[(1.0 / 8.0, 0.0), (0.5, PI), (3.0 / 8.0, 0.0)],
        };
        for (frac, dphi) in parts {
            segs.push(PulseSegment::new(frac * t_elem, amp, phi + dphi));
        }
    }
    let name = match element {
        C7Element::C7 => "c7",
        C7Element::Post => "post_c7",
    };
    let mut seq = PulseSequence::new(name).with_channel(channel, segs);
    seq.tau_r = Some(tau_r);
    Ok(seq)
}

/// Piecewise-constant Gaussian pulse with total flip `flip` and phase 0.
pub fn gaussian_pulse(channel: &str, duration: f64, sigma: f64, flip: f64, n_steps: usize) -> PulseSequence {
    let dt = duration / n_steps as f64;
    let shape: Vec<f64> = (0..n_steps)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt - duration / 2.0;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let area: f64 = shape.iter().sum::<f64>() * dt;
    let peak = flip / TAU / area;
    let segs = shape.iter().map(|s| PulseSegment::new(dt, peak * s, 0.0)).collect();
    PulseSequence::new("gaussian").with_channel(channel, segs)
}

/// Signed amplitude (Hz) of an amplitude-modulated segment: phase 0 → +, π → −.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedSegment {
    pub duration: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmSplit {
    /// mean signed amplitude, Hz
    pub omega_cw: f64,
    /// phase of the positive direction, radians
    pub axis_phase: f64,
    /// signed amplitude minus `omega_cw`
    pub am_component: Vec<SignedSegment>,
}

impl AmSplit {
    pub fn period(&self) -> f64 {
        self.am_component.iter().map(|s| s.duration).sum()
    }

    /// Net rotation of the AM component in turns.
    pub fn am_integral_turns(&self) -> f64 {
        self.am_component.iter().map(|s| s.duration * s.amplitude).sum()
    }

    pub fn reconstructed(&self) -> Vec<SignedSegment> {
        self.am_component
            .iter()
            .map(|s| SignedSegment { duration: s.duration, amplitude: s.amplitude + self.omega_cw })
            .collect()
    }
}

pub fn split_am(seq: &PulseSequence, channel: &str) -> Result<AmSplit, SequenceError> {
    let segs = seq.segments(channel)?;
    let reference = segs
        .iter()
        .find(|s| s.amplitude > 0.0)
        .map(|s| s.phase)
        .unwrap_or(0.0);
    let mut signed = Vec::with_capacity(segs.len());
    for s in segs {
        let d = (s.phase - reference).rem_euclid(TAU);
        let sign = if s.amplitude == 0.0 || d.min(TAU - d) < 1e-9 {
            1.0
        } else if (d - PI).abs() < 1e-9 {
            -1.0
        } else {
            return Err(SequenceError::NotAmplitudeModulated(channel.to_string()));
        };
        signed.push(SignedSegment { duration: s.duration, amplitude: sign * s.amplitude });
    }
    let period: f64 = signed.iter().map(|s| s.duration).sum();
    let mean = signed.iter().map(|s| s.duration * s.amplitude).sum::<f64>() / period;
    Ok(AmSplit {
        omega_cw: mean,
        axis_phase: reference,
        am_component: signed
            .into_iter()
            .map(|s| SignedSegment { duration: s.duration, amplitude: s.amplitude - mean })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_lookup_wraps_periodically() {
        let seq = build_rfdr("C", 100e-6, 5e-6, 100e3, 0.0, PhaseCycle::None).unwrap();
        let (s, end) = seq.segment_at("C", 200e-6 + 48e-6).unwrap();
        assert!(s.amplitude > 0.0);
        assert!((end - (200e-6 + 52.5e-6)).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_nonpositive_cutoff() {
        assert!(tangential_sweep(3, 1e-6, 0.0).is_err());
        assert!(tangential_sweep(5, 1e-6, 2.0).is_err());
    }
}
