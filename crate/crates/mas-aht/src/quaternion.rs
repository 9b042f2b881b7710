//! Unit quaternions for spin-1/2 rotations and effective-field extraction.

use num_complex::Complex;
use thiserror::Error;

use crate::num::{CMatrix, Real};
use crate::pulse::{PulseSequence, SequenceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuaternionError {
    #[error("rotation is the identity; axis undefined")]
    IdentityRotation,
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// `U = D − i(A σ_x + B σ_y + C σ_z)`, i.e. `exp(−iβ l·I)` with
/// `(A,B,C) = l sin(β/2)`, `D = cos(β/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T: Real = f64> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> Quaternion<T> {
    pub fn identity() -> Self {
        Quaternion { a: T::zero(), b: T::zero(), c: T::zero(), d: T::one() }
    }

    pub fn from_axis_angle(axis: [T; 3], beta: T) -> Self {
        let (s, c) = (beta / T::of(2.0)).sin_cos();
        Quaternion { a: axis[0] * s, b: axis[1] * s, c: axis[2] * s, d: c }
    }

    /// Free evolution under `offset·I_z + amplitude·(cosφ I_x + sinφ I_y)` (Hz) for `duration`.
    pub fn from_segment(offset: T, amplitude: T, phase: T, duration: T) -> Self {
        let theta = amplitude.atan2(offset);
        let field = (offset * offset + amplitude * amplitude).sqrt();
        let beta = T::two_pi() * field * duration;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phase.sin_cos();
        Self::from_axis_angle([st * cp, st * sp, ct], beta)
    }

    pub fn norm(&self) -> T {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion { a: self.a / n, b: self.b / n, c: self.c / n, d: self.d / n }
    }

    pub fn inverse(&self) -> Self {
        Quaternion { a: -self.a, b: -self.b, c: -self.c, d: self.d }
    }

    pub fn negated(&self) -> Self {
        Quaternion { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
    }

    pub fn vector(&self) -> [T; 3] {
        [self.a, self.b, self.c]
    }

    /// 2×2 unitary on the spin-1/2 space.
    pub fn to_su2(&self) -> CMatrix<T> {
        let z = T::zero();
        CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(self.d, -self.c),
                Complex::new(-self.b, -self.a),
                Complex::new(self.b, -self.a),
                Complex::new(self.d, self.c),
            ],
        )
        .map(|v| v + Complex::new(z, z))
    }

    pub fn from_su2(u: &CMatrix<T>) -> Self {
        let half = T::of(0.5);
        let d = (u[(0, 0)].re + u[(1, 1)].re) * half;
        let c = (u[(1, 1)].im - u[(0, 0)].im) * half;
        let b = (u[(1, 0)].re - u[(0, 1)].re) * half;
        let a = -(u[(0, 1)].im + u[(1, 0)].im) * half;
        Quaternion { a, b, c, d }
    }

    /// Active rotation matrix `R` with `U I_j U† = Σ_i R_ij I_i`.
    pub fn rotation_matrix(&self) -> [[T; 3]; 3] {
        let (x, y, z, w) = (self.a, self.b, self.c, self.d);
        let one = T::one();
        let two = T::of(2.0);
        [
            [one - two * (y * y + z * z), two * (x * y - z * w), two * (x * z + y * w)],
            [two * (x * y + z * w), one - two * (x * x + z * z), two * (y * z - x * w)],
            [two * (x * z - y * w), two * (y * z + x * w), one - two * (x * x + y * y)],
        ]
    }

    /// Distance to `±identity`, whichever is closer.
    pub fn distance_to_identity(&self) -> T {
        let v = (self.a * self.a + self.b * self.b + self.c * self.c).sqrt();
        v.max((T::one() - self.d.abs()).abs())
    }
}

/// Apply `earlier` first, then `later`.
pub fn compose<T: Real>(later: &Quaternion<T>, earlier: &Quaternion<T>) -> Quaternion<T> {
    let (a1, b1, c1, d1) = (later.a, later.b, later.c, later.d);
    let (a2, b2, c2, d2) = (earlier.a, earlier.b, earlier.c, earlier.d);
    Quaternion {
        a: d1 * a2 + d2 * a1 + (b1 * c2 - c1 * b2),
        b: d1 * b2 + d2 * b1 + (c1 * a2 - a1 * c2),
        c: d1 * c2 + d2 * c1 + (a1 * b2 - b1 * a2),
        d: d1 * d2 - (a1 * a2 + b1 * b2 + c1 * c2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCosines<T: Real = f64> {
    pub lx: T,
    pub ly: T,
    pub lz: T,
    pub beta: T,
}

/// `β = 2 acos(D)` in `[0, 2π]`, `l = (A,B,C)/sin(β/2)`; `−q` gives `−l`
/// and `2π − β`, the same rotation.
pub fn directional_cosines<T: Real>(q: &Quaternion<T>) -> Result<DirectionalCosines<T>, QuaternionError> {
    let d = q.d.max(-T::one()).min(T::one());
    let beta = T::of(2.0) * d.acos();
    let s = (beta / T::of(2.0)).sin();
    if s.abs() < T::of(1e-12) {
        return Err(QuaternionError::IdentityRotation);
    }
    Ok(DirectionalCosines { lx: q.a / s, ly: q.b / s, lz: q.c / s, beta })
}

pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRotation {
    /// Hz; the flip per period is `2π·omega_cw·tau_m`, within `[0, π]`
    pub omega_cw: f64,
    pub axis: [f64; 3],
    pub tau_m: f64,
}

impl EffectiveRotation {
    pub fn from_quaternion(q: &Quaternion<f64>, tau_m: f64) -> Self {
        let q = q.normalized();
        if q.distance_to_identity() < IDENTITY_TOL {
            return EffectiveRotation { omega_cw: 0.0, axis: [0.0, 0.0, 1.0], tau_m };
        }
        let q = if q.d < 0.0 { q.negated() } else { q };
        let beta = 2.0 * q.d.min(1.0).acos();
        let s = (beta / 2.0).sin();
        let axis = [q.a / s, q.b / s, q.c / s];
        let n = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        EffectiveRotation {
            omega_cw: beta / (std::f64::consts::TAU * tau_m),
            axis: [axis[0] / n, axis[1] / n, axis[2] / n],
            tau_m,
        }
    }

    /// Flip angle over one period, radians.
    pub fn flip(&self) -> f64 {
        std::f64::consts::TAU * self.omega_cw * self.tau_m
    }

    pub fn quaternion(&self) -> Quaternion<f64> {
        Quaternion::from_axis_angle(self.axis, self.flip())
    }
}

/// Overall quaternion of one channel period at a given offset (Hz).
pub fn sequence_quaternion(seq: &PulseSequence, channel: &str, offset: f64) -> Result<Quaternion<f64>, QuaternionError> {
    let mut q = Quaternion::identity();
    for s in seq.segments(channel)? {
        q = compose(&Quaternion::from_segment(offset, s.amplitude, s.phase, s.duration), &q);
    }
    Ok(q)
}

pub fn effective_rotation(seq: &PulseSequence, channel: &str, offset: f64) -> Result<EffectiveRotation, QuaternionError> {
    let q = sequence_quaternion(seq, channel, offset)?;
    Ok(EffectiveRotation::from_quaternion(&q, seq.period(channel)?))
}

/// One row of an offset sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub offsets: Vec<f64>,
    pub rotations: Vec<EffectiveRotation>,
    /// continuity-tracked signed ω_cw per channel, Hz
    pub signed_omega_cw: Vec<f64>,
    /// `|ω_cw^(1)| − |ω_cw^(2)|`
    pub hetero_metric: f64,
    /// `|ω_cw^(1) + ω_cw^(2)|` with signed values
    pub dq_metric: f64,
}

/// Sweeps the offsets of each listed channel jointly along `grid`
/// (`grid[i][q]` is the offset of channel `q` at point `i`).
pub fn offset_sweep(
    seq: &PulseSequence,
    channels: &[&str],
    grid: &[Vec<f64>],
) -> Result<Vec<SweepRow>, QuaternionError> {
    let mut rows: Vec<SweepRow> = Vec::with_capacity(grid.len());
    let mut prev_axis: Vec<Option<[f64; 3]>> = vec![None; channels.len()];
    for point in grid {
        let mut rots = Vec::with_capacity(channels.len());
        let mut signed = Vec::with_capacity(channels.len());
        for (qi, ch) in channels.iter().enumerate() {
            let r = effective_rotation(seq, ch, point[qi])?;
            let mut w = r.omega_cw;
            if let Some(pa) = prev_axis[qi] {
                let dot = pa[0] * r.axis[0] + pa[1] * r.axis[1] + pa[2] * r.axis[2];
                if dot < 0.0 {
                    w = -w;
                }
            }
            if r.omega_cw > 0.0 {
                let sign = w.signum();
                prev_axis[qi] = Some([sign * r.axis[0], sign * r.axis[1], sign * r.axis[2]]);
            }
            rots.push(r);
            signed.push(w);
        }
        let hetero = if signed.len() >= 2 { rots[0].omega_cw.abs() - rots[1].omega_cw.abs() } else { 0.0 };
        let dq = if signed.len() >= 2 { (signed[0] + signed[1]).abs() } else { signed[0].abs() };
        rows.push(SweepRow {
            offsets: point.clone(),
            rotations: rots,
            signed_omega_cw: signed,
            hetero_metric: hetero,
            dq_metric: dq,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_is_identity() {
        let q = Quaternion::from_segment(3.0, 2.0, 0.4, 0.0);
        assert!(q.distance_to_identity() < 1e-15);
    }

    #[test]
    fn identity_has_no_axis() {
        assert!(directional_cosines(&Quaternion::<f64>::identity()).is_err());
    }
}
