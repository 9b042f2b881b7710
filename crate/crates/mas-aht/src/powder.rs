//! Crystallite orientation sets and powder averaging.

use std::f64::consts::TAU;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use num_complex::Complex64;

use crate::tensor::{mas_fourier_components, EulerAngles, InteractionTensor, TensorError};

#[derive(Debug, Error)]
pub enum PowderError {
    #[error("empty orientation set")]
    Empty,
    #[error("weights do not sum to a positive value")]
    BadWeights,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Orientations (crystal → rotor) with normalised weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalliteSet {
    pub name: String,
    pub angles: Vec<EulerAngles<f64>>,
    pub weights: Vec<f64>,
}

fn fibonacci(m: usize) -> (usize, usize) {
    // returns (F_m, F_{m-2})
    let mut f = vec![1usize, 1];
    while f.len() <= m {
        let n = f.len();
        f.push(f[n - 1] + f[n - 2]);
    }
    (f[m], f[m.saturating_sub(2)])
}

impl CrystalliteSet {
    pub fn new(name: &str, angles: Vec<EulerAngles<f64>>, weights: Vec<f64>) -> Result<Self, PowderError> {
        if angles.is_empty() || angles.len() != weights.len() {
            return Err(PowderError::Empty);
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(PowderError::BadWeights);
        }
        Ok(CrystalliteSet { name: name.into(), angles, weights: weights.iter().map(|w| w / s).collect() })
    }

    pub fn single(angle: EulerAngles<f64>) -> Self {
        CrystalliteSet { name: "single".into(), angles: vec![angle], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Zaremba–Conroy–Wolfsberg (α, β) set with the smallest Fibonacci size ≥ `min_count`; γ = 0.
    pub fn zcw(min_count: usize) -> Self {
        let mut m = 2;
        while fibonacci(m).0 < min_count.max(1) {
            m += 1;
        }
        let (n, g) = fibonacci(m);
        let angles = (0..n)
            .map(|j| {
                let a = TAU * ((j * g) as f64 / n as f64).fract();
                let b = (1.0 - 2.0 * ((j as f64 + 0.5) / n as f64).fract()).acos();
                EulerAngles::new(a, b, 0.0)
            })
            .collect();
        CrystalliteSet { name: format!("zcw{n}"), angles, weights: vec![1.0 / n as f64; n] }
    }

    /// Appends `n_gamma` equally spaced third angles to every orientation.
    pub fn with_gamma(&self, n_gamma: usize) -> Self {
        let n_gamma = n_gamma.max(1);
        let mut angles = Vec::with_capacity(self.len() * n_gamma);
        let mut weights = Vec::with_capacity(self.len() * n_gamma);
        for (a, w) in self.angles.iter().zip(&self.weights) {
            for k in 0..n_gamma {
                angles.push(EulerAngles::new(a.alpha, a.beta, TAU * k as f64 / n_gamma as f64));
                weights.push(w / n_gamma as f64);
            }
        }
        CrystalliteSet { name: format!("{}x{}", self.name, n_gamma), angles, weights }
    }

    /// Product grid, midpoint nodes in cos β.
    pub fn grid(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Self {
        let mut angles = Vec::new();
        for i in 0..n_alpha.max(1) {
            for j in 0..n_beta.max(1) {
                for k in 0..n_gamma.max(1) {
                    let c = 1.0 - 2.0 * (j as f64 + 0.5) / n_beta.max(1) as f64;
                    angles.push(EulerAngles::new(
                        TAU * i as f64 / n_alpha.max(1) as f64,
                        c.acos(),
                        TAU * k as f64 / n_gamma.max(1) as f64,
                    ));
                }
            }
        }
        let n = angles.len();
        CrystalliteSet { name: format!("grid{n_alpha}x{n_beta}x{n_gamma}"), angles, weights: vec![1.0 / n as f64; n] }
    }

    /// Text file: `alpha beta [gamma] [weight]` per line in degrees; `#` comments.
    pub fn from_text(name: &str, text: &str) -> Result<Self, PowderError> {
        let mut angles = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let v: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let v = v.map_err(|e| PowderError::Parse { line: i + 1, msg: e.to_string() })?;
            if v.len() < 2 || v.len() > 4 {
                return Err(PowderError::Parse { line: i + 1, msg: format!("expected 2-4 columns, got {}", v.len()) });
            }
            angles.push(EulerAngles::from_degrees(v[0], v[1], v.get(2).copied().unwrap_or(0.0)));
            weights.push(v.get(3).copied().unwrap_or(1.0));
        }
        Self::new(name, angles, weights)
    }

    pub fn from_file(path: &Path) -> Result<Self, PowderError> {
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_text(&name, &text)
    }

    /// Named sets: `zcwN`, `zcwNxG`, `gridAxBxC`, `single`, or `repN[xG]`.
    /// REPULSION tables are not bundled; `repN` resolves to `zcwN`.
    pub fn by_name(name: &str) -> Option<Self> {
        if name == "single" {
            return Some(Self::single(EulerAngles::zero()));
        }
        if let Some(rest) = name.strip_prefix("rep") {
            return Self::by_name(&format!("zcw{rest}"));
        }
        if let Some(rest) = name.strip_prefix("zcw") {
            let mut it = rest.split('x');
            let n: usize = it.next()?.parse().ok()?;
            let g: usize = it.next().map(|s| s.parse().ok()).unwrap_or(Some(1))?;
            return Some(Self::zcw(n).with_gamma(g));
        }
        if let Some(rest) = name.strip_prefix("grid") {
            let v: Vec<usize> = rest.split('x').map(|s| s.parse().ok()).collect::<Option<_>>()?;
            if v.len() == 3 {
                return Some(Self::grid(v[0], v[1], v[2]));
            }
        }
        None
    }

    /// Default set for powder curves.
    pub fn default_powder() -> Self {
        Self::zcw(89).with_gamma(9)
    }

    /// Weighted mean of `f` over orientations (parallel).
    pub fn average(&self, f: impl Fn(&EulerAngles<f64>) -> f64 + Sync) -> f64 {
        let vals: Vec<f64> = self.angles.par_iter().map(&f).collect();
        vals.iter().zip(&self.weights).map(|(v, w)| w * v).sum()
    }
}

/// Weighted average of per-crystallite curves; all curves must share a length.
pub fn powder_average<E: Send>(
    set: &CrystalliteSet,
    f: impl Fn(&EulerAngles<f64>) -> Result<Vec<f64>, E> + Sync,
) -> Result<Vec<f64>, E> {
    let curves: Result<Vec<Vec<f64>>, E> = set.angles.par_iter().map(&f).collect();
    let curves = curves?;
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![0.0; len];
    for (c, w) in curves.iter().zip(&set.weights) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Weighted mean of a function of β.
pub fn sphere_moment(set: &CrystalliteSet, f: impl Fn(f64) -> f64) -> f64 {
    set.angles.iter().zip(&set.weights).map(|(a, w)| w * f(a.beta)).sum()
}

/// Recoupled zero-quantum dipolar strength of a two-pulse element with ideal
/// π pulses at `τr/2 + Δτ` and `3τr/2 − Δτ`, for one crystallite.
///
/// The chemical-shift difference `omega_diff` (Hz) is split into its mean and
/// a modulated part; `sqrt(|ωx|² + |ωy|²)` of the resonant (`k = −2n`) terms
/// is returned in rad/s.
pub fn recoupled_zq_strength(
    dipole: &InteractionTensor<f64>,
    crystal: &EulerAngles<f64>,
    omega_diff: f64,
    spin_rate: f64,
    delta_tau: f64,
    rotor_angle: f64,
) -> Result<f64, TensorError> {
    let (cos_c, sin_c) = zq_modulation(omega_diff, spin_rate, delta_tau, 4);
    strength_from(dipole, crystal, spin_rate, rotor_angle, &cos_c, &sin_c)
}

fn strength_from(
    dipole: &InteractionTensor<f64>,
    crystal: &EulerAngles<f64>,
    spin_rate: f64,
    rotor_angle: f64,
    cos_c: &[Complex64],
    sin_c: &[Complex64],
) -> Result<f64, TensorError> {
    let w = mas_fourier_components(dipole, crystal, spin_rate, rotor_angle)?;
    let mut x = Complex64::new(0.0, 0.0);
    let mut y = Complex64::new(0.0, 0.0);
    for n in -2..=2i32 {
        let k = (4 - 2 * n) as usize;
        x += w.get(n) * cos_c[k];
        y += w.get(n) * sin_c[k];
    }
    Ok((x.norm_sqr() + y.norm_sqr()).sqrt())
}

/// Fourier coefficients `k = −kmax..kmax` of `cos φ(t)` and `sin φ(t)` over
/// `2τr`, where φ is the integrated modulated part of `omega_diff·ε(t)`.
fn zq_modulation(omega_diff: f64, spin_rate: f64, delta_tau: f64, kmax: i32) -> (Vec<Complex64>, Vec<Complex64>) {
    let tr = 1.0 / spin_rate;
    let period = 2.0 * tr;
    let t1 = tr / 2.0 + delta_tau;
    let t2 = 1.5 * tr - delta_tau;
    let mean = 2.0 * delta_tau / tr;
    let eps = |t: f64| if t < t1 || t >= t2 { 1.0 } else { -1.0 };
    let n = 8192;
    let dt = period / n as f64;
    let len = (2 * kmax + 1) as usize;
    let mut c = vec![Complex64::new(0.0, 0.0); len];
    let mut s = vec![Complex64::new(0.0, 0.0); len];
    let mut phi = 0.0;
    for i in 0..n {
        let t = (i as f64 + 0.5) * dt;
        let mid = phi + TAU * omega_diff * (eps(t) - mean) * dt / 2.0;
        phi += TAU * omega_diff * (eps(t) - mean) * dt;
        for (j, k) in (-kmax..=kmax).enumerate() {
            let e = Complex64::from_polar(1.0 / n as f64, -TAU * k as f64 * t / period);
            c[j] += e * mid.cos();
            s[j] += e * mid.sin();
        }
    }
    (c, s)
}

/// Powder-averaged recoupled strength versus Δτ, scaled to unity at Δτ = 0.
pub fn recoupled_strength_profile(
    set: &CrystalliteSet,
    dipole: &InteractionTensor<f64>,
    omega_diff: f64,
    spin_rate: f64,
    delta_taus: &[f64],
    rotor_angle: f64,
) -> Result<Vec<f64>, TensorError> {
    let eval = |dt: f64| -> Result<f64, TensorError> {
        let (c, s) = zq_modulation(omega_diff, spin_rate, dt, 4);
        let vals: Result<Vec<f64>, TensorError> = set
            .angles
            .par_iter()
            .map(|a| strength_from(dipole, a, spin_rate, rotor_angle, &c, &s))
            .collect();
        Ok(vals?.iter().zip(&set.weights).map(|(v, w)| v * w).sum())
    };
    let reference = eval(0.0)?;
    delta_taus.iter().map(|&d| Ok(eval(d)? / reference)).collect()
}
