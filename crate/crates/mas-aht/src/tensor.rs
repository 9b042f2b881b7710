//! Spherical tensors, Wigner rotations and MAS spatial Fourier components.

use num_complex::Complex;
use thiserror::Error;

use crate::num::{cabs, cis, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid Wigner indices l={l}, m'={mp}, m={m}")]
    InvalidIndices { l: i32, mp: i32, m: i32 },
    #[error("asymmetry eta={0} outside [0, 1]")]
    EtaOutOfRange(f64),
    #[error("spin rate must be positive, got {0}")]
    NonPositiveSpinRate(f64),
    #[error("expected {expected} components, got {got}")]
    ComponentCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles<T: Real = f64> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> EulerAngles<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Self {
        EulerAngles { alpha, beta, gamma }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_degrees(a: f64, b: f64, g: f64) -> Self {
        Self::new(T::of(a.to_radians()), T::of(b.to_radians()), T::of(g.to_radians()))
    }

    /// `Rz(α)·Ry(β)·Rz(γ)`.
    pub fn matrix(&self) -> [[T; 3]; 3] {
        let rz = |a: T| {
            let (s, c) = a.sin_cos();
            [[c, -s, T::zero()], [s, c, T::zero()], [T::zero(), T::zero(), T::one()]]
        };
        let (s, c) = self.beta.sin_cos();
        let ry = [[c, T::zero(), s], [T::zero(), T::one(), T::zero()], [-s, T::zero(), c]];
        mat3_mul(&mat3_mul(&rz(self.alpha), &ry), &rz(self.gamma))
    }

    /// Inverse of [`EulerAngles::matrix`] on the principal branch.
    pub fn from_matrix(r: &[[T; 3]; 3]) -> Self {
        let cb = r[2][2].max(-T::one()).min(T::one());
        let beta = cb.acos();
        if beta.sin().abs() < T::of(1e-12) {
            let alpha = r[1][0].atan2(r[0][0]);
            let alpha = if cb > T::zero() { alpha } else { -alpha };
            return Self::new(alpha, beta, T::zero());
        }
        let alpha = r[1][2].atan2(r[0][2]);
        let gamma = r[2][1].atan2(-r[2][0]);
        Self::new(alpha, beta, gamma)
    }

    /// Frame change `self` followed by `next`.
    pub fn then(&self, next: &EulerAngles<T>) -> EulerAngles<T> {
        Self::from_matrix(&mat3_mul(&self.matrix(), &next.matrix()))
    }
}

pub(crate) fn mat3_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).fold(T::zero(), |s, k| s + a[i][k] * b[k][j]);
        }
    }
    out
}

/// Irreducible spherical components of a rank ≤ 2 Cartesian tensor.
/// `rank1[m+1]` and `rank2[m+2]` hold `R_{1,m}` and `R_{2,m}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalComponents<T: Real = f64> {
    pub rank0: Complex<T>,
    pub rank1: [Complex<T>; 3],
    pub rank2: [Complex<T>; 5],
}

impl<T: Real> SphericalComponents<T> {
    pub fn zero() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        SphericalComponents { rank0: z, rank1: [z; 3], rank2: [z; 5] }
    }

    pub fn r2(&self, m: i32) -> Complex<T> {
        self.rank2[(m + 2) as usize]
    }

    pub fn rotated(&self, omega: &EulerAngles<T>) -> Self {
        SphericalComponents {
            rank0: self.rank0,
            rank1: wigner_rotate(&self.rank1, omega, 1).unwrap().try_into().unwrap(),
            rank2: wigner_rotate(&self.rank2, omega, 2).unwrap().try_into().unwrap(),
        }
    }
}

pub fn cart_to_spherical<T: Real>(l: &[[T; 3]; 3]) -> SphericalComponents<T> {
    let re = |x: T| Complex::new(x, T::zero());
    let (x, y, z) = (0, 1, 2);
    let half = T::of(0.5);
    let i = Complex::new(T::zero(), T::one());
    let r00 = re(-(l[x][x] + l[y][y] + l[z][z]) / T::of(3f64.sqrt()));
    let r10 = i * re(T::of(std::f64::consts::FRAC_1_SQRT_2) * (l[x][y] - l[y][x]));
    let r1p = re(half * (l[z][x] - l[x][z])) + i * re(half * (l[z][y] - l[y][z]));
    let r1m = re(half * (l[z][x] - l[x][z])) - i * re(half * (l[z][y] - l[y][z]));
    let r20 = re((T::of(2.0) * l[z][z] - l[x][x] - l[y][y]) / T::of(6f64.sqrt()));
    let r2p1 = -(re(half * (l[x][z] + l[z][x])) + i * re(half * (l[y][z] + l[z][y])));
    let r2m1 = re(half * (l[x][z] + l[z][x])) - i * re(half * (l[y][z] + l[z][y]));
    let r2p2 = re(half * (l[x][x] - l[y][y])) + i * re(half * (l[x][y] + l[y][x]));
    let r2m2 = re(half * (l[x][x] - l[y][y])) - i * re(half * (l[x][y] + l[y][x]));
    SphericalComponents {
        rank0: r00,
        rank1: [r1m, r10, r1p],
        rank2: [r2m2, r2m1, r20, r2p1, r2p2],
    }
}

/// Inverse of [`cart_to_spherical`].
pub fn spherical_to_cart<T: Real>(s: &SphericalComponents<T>) -> [[T; 3]; 3] {
    let s3 = T::of(3f64.sqrt());
    let s2 = T::of(2f64.sqrt());
    let s6 = T::of(6f64.sqrt());
    let iso = -s.rank0.re / s3;
    // antisymmetric parts
    let axy = s.rank1[1].im / s2; // (λxy − λyx)/2
    let azx = s.rank1[2].re; // (λzx − λxz)/2
    let azy = s.rank1[2].im; // (λzy − λyz)/2
    // symmetric traceless parts
    let szz = s.rank2[2].re * s6 / T::of(3.0);
    let sxx_m_syy = s.rank2[4].re; // (λxx − λyy)/2
    let sxy = s.rank2[4].im; // (λxy + λyx)/2
    let sxz = s.rank2[1].re; // (λxz + λzx)/2
    let syz = -s.rank2[1].im; // (λyz + λzy)/2
    let sxx = -szz / T::of(2.0) + sxx_m_syy;
    let syy = -szz / T::of(2.0) - sxx_m_syy;
    [
        [iso + sxx, sxy + axy, sxz - azx],
        [sxy - axy, iso + syy, syz - azy],
        [sxz + azx, syz + azy, iso + szz],
    ]
}

pub fn pas_components<T: Real>(delta_iso: T, delta_aniso: T, eta: T) -> Result<SphericalComponents<T>, TensorError> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(TensorError::EtaOutOfRange(eta.to_f64_lossy()));
    }
    let mut s = SphericalComponents::zero();
    s.rank0 = Complex::new(-T::of(3f64.sqrt()) * delta_iso, T::zero());
    s.rank2[2] = Complex::new(T::of(1.5f64.sqrt()) * delta_aniso, T::zero());
    let e = Complex::new(-delta_aniso * eta / T::of(2.0), T::zero());
    s.rank2[0] = e;
    s.rank2[4] = e;
    Ok(s)
}

fn factorial(n: i32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Reduced Wigner element `d^l_{m′m}(β) = ⟨l m′| exp(−iβ L_y) |l m⟩`.
pub fn reduced_wigner<T: Real>(l: i32, mp: i32, m: i32, beta: T) -> Result<T, TensorError> {
    if !(0..=2).contains(&l) || mp.abs() > l || m.abs() > l {
        return Err(TensorError::InvalidIndices { l, mp, m });
    }
    let (s, c) = (beta / T::of(2.0)).sin_cos();
    let pref = (factorial(l + mp) * factorial(l - mp) * factorial(l + m) * factorial(l - m)).sqrt();
    let kmin = 0.max(m - mp);
    let kmax = (l + m).min(l - mp);
    let mut sum = T::zero();
    for k in kmin..=kmax {
        let den = factorial(l + m - k) * factorial(k) * factorial(l - k - mp) * factorial(k - m + mp);
        let sign = if (k - m + mp) % 2 == 0 { 1.0 } else { -1.0 };
        let pc = 2 * l - 2 * k + m - mp;
        let ps = 2 * k - m + mp;
        sum += T::of(sign * pref / den) * c.powi(pc) * s.powi(ps);
    }
    Ok(sum)
}

/// Full `(2l+1)×(2l+1)` reduced Wigner matrix, rows `m′`, columns `m`.
pub fn reduced_wigner_matrix<T: Real>(l: i32, beta: T) -> Vec<Vec<T>> {
    (-l..=l)
        .map(|mp| (-l..=l).map(|m| reduced_wigner(l, mp, m, beta).unwrap()).collect())
        .collect()
}

/// `R_{lm}(new) = Σ_{m′} e^{−iαm′} d^l_{m′m}(β) e^{−iγm} R_{lm′}(old)`.
pub fn wigner_rotate<T: Real>(
    comps: &[Complex<T>],
    omega: &EulerAngles<T>,
    l: i32,
) -> Result<Vec<Complex<T>>, TensorError> {
    let n = (2 * l + 1) as usize;
    if comps.len() != n {
        return Err(TensorError::ComponentCount { expected: n, got: comps.len() });
    }
    let d = reduced_wigner_matrix(l, omega.beta);
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for (mi, m) in (-l..=l).enumerate() {
        let eg = cis(-omega.gamma * T::of(m as f64));
        let mut acc = Complex::new(T::zero(), T::zero());
        for (mpi, mp) in (-l..=l).enumerate() {
            let ea = cis(-omega.alpha * T::of(mp as f64));
            acc += ea * Complex::new(d[mpi][mi], T::zero()) * comps[mpi];
        }
        out[mi] = acc * eg;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionKind {
    ChemicalShift,
    Dipolar,
    JCoupling,
}

/// One anisotropic interaction. Frequencies are in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTensor<T: Real = f64> {
    pub kind: InteractionKind,
    /// Spin the shift acts on, or first spin of a coupled pair.
    pub spin: usize,
    pub partner: Option<usize>,
    pub delta_iso: T,
    pub delta_aniso: T,
    pub eta: T,
    pub euler_pas_to_crystal: EulerAngles<T>,
}

impl<T: Real> InteractionTensor<T> {
    pub fn shift(spin: usize, iso: T, aniso: T, eta: T, euler: EulerAngles<T>) -> Self {
        InteractionTensor {
            kind: InteractionKind::ChemicalShift,
            spin,
            partner: None,
            delta_iso: iso,
            delta_aniso: aniso,
            eta,
            euler_pas_to_crystal: euler,
        }
    }

    /// Dipolar coupling with constant `b` (Hz); axial, traceless.
    pub fn dipolar(i: usize, j: usize, b: T, euler: EulerAngles<T>) -> Self {
        InteractionTensor {
            kind: InteractionKind::Dipolar,
            spin: i,
            partner: Some(j),
            delta_iso: T::zero(),
            delta_aniso: b,
            eta: T::zero(),
            euler_pas_to_crystal: euler,
        }
    }

    pub fn j_coupling(i: usize, j: usize, j_hz: T) -> Self {
        InteractionTensor {
            kind: InteractionKind::JCoupling,
            spin: i,
            partner: Some(j),
            delta_iso: j_hz,
            delta_aniso: T::zero(),
            eta: T::zero(),
            euler_pas_to_crystal: EulerAngles::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if !(self.eta >= T::zero() && self.eta <= T::one()) {
            return Err(TensorError::EtaOutOfRange(self.eta.to_f64_lossy()));
        }
        Ok(())
    }

    /// Root-mean-square over orientations of `|ω^(n)|`, rad/s.
    pub fn powder_rms(&self, n: i32, rotor_angle: T) -> T {
        let pas = pas_components(T::zero(), self.delta_aniso, self.eta).unwrap();
        let norm2 = pas.rank2.iter().fold(T::zero(), |s, z| s + z.norm_sqr());
        let d = reduced_wigner(2, -n, 0, rotor_angle).unwrap();
        T::two_pi() * T::of((2.0f64 / 3.0).sqrt()) * d.abs() * (norm2 / T::of(5.0)).sqrt()
    }
}

/// `ω^(n)` for n = −2…2 (rad/s), index `n + 2`; the time signal is `Σ ω^(n) e^{inω_r t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialFourierComponents<T: Real = f64> {
    pub omega_n: [Complex<T>; 5],
}

impl<T: Real> SpatialFourierComponents<T> {
    pub fn get(&self, n: i32) -> Complex<T> {
        self.omega_n[(n + 2) as usize]
    }

    pub fn isotropic(omega0: T) -> Self {
        let mut w = [Complex::new(T::zero(), T::zero()); 5];
        w[2] = Complex::new(omega0, T::zero());
        SpatialFourierComponents { omega_n: w }
    }

    /// Real-valued frequency at time `t` for spinning rate `spin_rate` (Hz).
    pub fn at(&self, t: T, spin_rate: T) -> T {
        let wr = T::two_pi() * spin_rate;
        let mut s = T::zero();
        for n in -2..=2 {
            let ph = cis(wr * T::of(n as f64) * t);
            s += (self.get(n) * ph).re;
        }
        s
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut w = self.omega_n;
        for z in w.iter_mut() {
            *z *= s;
        }
        SpatialFourierComponents { omega_n: w }
    }

    pub fn conjugate_defect(&self) -> T {
        (0..=2)
            .map(|n| cabs(self.get(-n) - self.get(n).conj()))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

pub fn magic_angle<T: Real>() -> T {
    T::of((1.0f64 / 3f64.sqrt()).acos())
}

/// Rotor-frame rank-2 components of an interaction for one crystallite.
pub fn rotor_frame_components<T: Real>(
    tensor: &InteractionTensor<T>,
    crystal: &EulerAngles<T>,
) -> Result<SphericalComponents<T>, TensorError> {
    tensor.validate()?;
    let pas = pas_components(T::zero(), tensor.delta_aniso, tensor.eta)?;
    Ok(pas.rotated(&tensor.euler_pas_to_crystal).rotated(crystal))
}

pub fn mas_fourier_components<T: Real>(
    tensor: &InteractionTensor<T>,
    crystal: &EulerAngles<T>,
    spin_rate: T,
    rotor_angle: T,
) -> Result<SpatialFourierComponents<T>, TensorError> {
    if !(spin_rate > T::zero()) {
        return Err(TensorError::NonPositiveSpinRate(spin_rate.to_f64_lossy()));
    }
    let rotor = rotor_frame_components(tensor, crystal)?;
    let scale = T::two_pi() * T::of((2.0f64 / 3.0).sqrt());
    let mut w = [Complex::new(T::zero(), T::zero()); 5];
    for n in -2..=2i32 {
        let d = reduced_wigner(2, -n, 0, rotor_angle)?;
        w[(n + 2) as usize] = rotor.r2(-n) * (d * scale);
    }
    if tensor.kind != InteractionKind::Dipolar {
        w[2] += Complex::new(T::two_pi() * tensor.delta_iso, T::zero());
    }
    Ok(SpatialFourierComponents { omega_n: w })
}
