//! Spin-1/2 operators for up to three nuclei, with ħ = 1.

use nalgebra::SymmetricEigen;
use num_complex::Complex;
use thiserror::Error;

use crate::num::{cis, cplx, identity, max_abs, zeros, CMatrix, Real};

pub const MAX_SPINS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("spin index {index} out of range for {n_spins} spins")]
    IndexOutOfRange { index: usize, n_spins: usize },
    #[error("unsupported number of spins {0} (1..=3)")]
    BadSpinCount(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("axis triple is not orthonormal (defect {0:.3e})")]
    NotOrthonormal(f64),
}

/// Cartesian or ladder component of a single spin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
    /// `I_x + i I_y`
    Plus,
    /// `I_x - i I_y`
    Minus,
}

impl Axis {
    pub fn cartesian(i: usize) -> Axis {
        [Axis::X, Axis::Y, Axis::Z][i]
    }
}

fn pauli_half<T: Real>(axis: Axis) -> CMatrix<T> {
    let (a, b, c, d) = match axis {
        Axis::X => (cplx(0., 0.), cplx(0.5, 0.), cplx(0.5, 0.), cplx(0., 0.)),
        Axis::Y => (cplx(0., 0.), cplx(0., -0.5), cplx(0., 0.5), cplx(0., 0.)),
        Axis::Z => (cplx(0.5, 0.), cplx(0., 0.), cplx(0., 0.), cplx(-0.5, 0.)),
        Axis::Plus => (cplx(0., 0.), cplx(1., 0.), cplx(0., 0.), cplx(0., 0.)),
        Axis::Minus => (cplx(0., 0.), cplx(0., 0.), cplx(1., 0.), cplx(0., 0.)),
    };
    CMatrix::from_row_slice(2, 2, &[a, b, c, d])
}

fn check(spin: usize, n_spins: usize) -> Result<(), SpinError> {
    if n_spins == 0 || n_spins > MAX_SPINS {
        return Err(SpinError::BadSpinCount(n_spins));
    }
    if spin >= n_spins {
        return Err(SpinError::IndexOutOfRange { index: spin, n_spins });
    }
    Ok(())
}

/// Embeds a 2×2 operator acting on `spin` into the full product space.
/// Spin 0 is the most significant tensor factor.
pub fn embed<T: Real>(local: &CMatrix<T>, spin: usize, n_spins: usize) -> Result<CMatrix<T>, SpinError> {
    check(spin, n_spins)?;
    let mut out = CMatrix::<T>::identity(1, 1);
    for q in 0..n_spins {
        let f = if q == spin { local.clone() } else { identity::<T>(2) };
        out = out.kronecker(&f);
    }
    Ok(out)
}

pub fn single_spin_operator<T: Real>(
    spin: usize,
    axis: Axis,
    n_spins: usize,
) -> Result<CMatrix<T>, SpinError> {
    embed(&pauli_half::<T>(axis), spin, n_spins)
}

/// Ladder operators of the rotated convention `I_z ± i I_y`.
pub fn zy_ladder<T: Real>(spin: usize, raising: bool, n_spins: usize) -> Result<CMatrix<T>, SpinError> {
    let z = single_spin_operator::<T>(spin, Axis::Z, n_spins)?;
    let y = single_spin_operator::<T>(spin, Axis::Y, n_spins)?;
    let s = if raising { T::one() } else { -T::one() };
    Ok(z + y * Complex::new(T::zero(), s))
}

/// `v·I` for a complex 3-vector of coefficients on spin `spin`.
pub fn spin_vector<T: Real>(
    spin: usize,
    v: &[Complex<T>; 3],
    n_spins: usize,
) -> Result<CMatrix<T>, SpinError> {
    let mut local = zeros::<T>(2);
    for (i, c) in v.iter().enumerate() {
        local += pauli_half::<T>(Axis::cartesian(i)) * *c;
    }
    embed(&local, spin, n_spins)
}

pub fn spin_vector_re<T: Real>(spin: usize, v: &[T; 3], n_spins: usize) -> Result<CMatrix<T>, SpinError> {
    let c = [
        Complex::new(v[0], T::zero()),
        Complex::new(v[1], T::zero()),
        Complex::new(v[2], T::zero()),
    ];
    spin_vector(spin, &c, n_spins)
}

/// Product of two operators already embedded in the same space.
pub fn two_spin_product<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<CMatrix<T>, SpinError> {
    if a.nrows() != b.nrows() {
        return Err(SpinError::DimensionMismatch(a.nrows(), b.nrows()));
    }
    Ok(a * b)
}

pub fn commutator<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<CMatrix<T>, SpinError> {
    if a.nrows() != b.nrows() {
        return Err(SpinError::DimensionMismatch(a.nrows(), b.nrows()));
    }
    Ok(a * b - b * a)
}

#[derive(Debug, Clone)]
pub struct DensityOperator<T: Real> {
    pub matrix: CMatrix<T>,
    pub time: T,
}

impl<T: Real> DensityOperator<T> {
    pub fn new(matrix: CMatrix<T>) -> Self {
        DensityOperator { matrix, time: T::zero() }
    }

    /// `U ρ U†`, advancing the clock by `dt`.
    pub fn evolve(&self, u: &CMatrix<T>, dt: T) -> Self {
        DensityOperator {
            matrix: u * &self.matrix * u.adjoint(),
            time: self.time + dt,
        }
    }
}

/// `Tr{ρ O}`.
pub fn expectation<T: Real>(rho: &DensityOperator<T>, op: &CMatrix<T>) -> Result<Complex<T>, SpinError> {
    trace_product(&rho.matrix, op)
}

/// `Tr{A B}` without forming the product.
pub fn trace_product<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<Complex<T>, SpinError> {
    if a.nrows() != b.nrows() {
        return Err(SpinError::DimensionMismatch(a.nrows(), b.nrows()));
    }
    let n = a.nrows();
    let mut s = Complex::new(T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(s)
}

pub fn hermiticity_defect<T: Real>(m: &CMatrix<T>) -> T {
    max_abs(&(m - m.adjoint()))
}

pub fn unitarity_defect<T: Real>(u: &CMatrix<T>) -> T {
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - identity::<T>(n)))
}

/// `exp(-i H t)` for Hermitian `H` via eigendecomposition.
pub fn expm_hermitian<T: Real>(h: &CMatrix<T>, t: T) -> CMatrix<T> {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let mut vd = v.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let ph = cis(-(*lam * t));
        for i in 0..vd.nrows() {
            vd[(i, j)] *= ph;
        }
    }
    vd * v.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceKind {
    ZQ,
    DQ,
}

/// Fictitious spin-1/2 operators of a two-spin zero- or double-quantum subspace.
#[derive(Debug, Clone)]
pub struct SubspaceBasis<T: Real> {
    pub kind: SubspaceKind,
    pub x: CMatrix<T>,
    pub y: CMatrix<T>,
    pub z: CMatrix<T>,
}

impl<T: Real> SubspaceBasis<T> {
    pub fn axes(&self) -> [&CMatrix<T>; 3] {
        [&self.x, &self.y, &self.z]
    }

    /// Coefficients of `op` along the three axes, `Tr{A_i O}/Tr{A_i A_i}`.
    pub fn project(&self, op: &CMatrix<T>) -> [Complex<T>; 3] {
        let mut out = [Complex::new(T::zero(), T::zero()); 3];
        for (i, a) in self.axes().iter().enumerate() {
            let num = trace_product(a, op).unwrap();
            let den = trace_product(a, a).unwrap();
            out[i] = num / den;
        }
        out
    }
}

/// Row `i` of each triple is the unit vector of axis x′, y′, z′ in lab coordinates.
pub type AxisTriple<T> = [[T; 3]; 3];

pub fn conventional_axes<T: Real>() -> AxisTriple<T> {
    let o = T::one();
    let z = T::zero();
    [[o, z, z], [z, o, z], [z, z, o]]
}

fn orthonormality_defect<T: Real>(a: &AxisTriple<T>) -> T {
    let mut worst = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            let d: T = (0..3).fold(T::zero(), |s, c| s + a[i][c] * a[j][c]);
            let target = if i == j { T::one() } else { T::zero() };
            let e = (d - target).abs();
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

pub fn zq_dq_basis<T: Real>(
    kind: SubspaceKind,
    axes1: &AxisTriple<T>,
    axes2: &AxisTriple<T>,
) -> Result<SubspaceBasis<T>, SpinError> {
    for a in [axes1, axes2] {
        let d = orthonormality_defect(a);
        if d > T::of(1e-10) {
            return Err(SpinError::NotOrthonormal(d.to_f64_lossy()));
        }
    }
    let op = |spin: usize, axes: &AxisTriple<T>, i: usize| spin_vector_re(spin, &axes[i], 2).unwrap();
    let (x1, y1, z1) = (op(0, axes1, 0), op(0, axes1, 1), op(0, axes1, 2));
    let (x2, y2, z2) = (op(1, axes2, 0), op(1, axes2, 1), op(1, axes2, 2));
    let half = Complex::new(T::of(0.5), T::zero());
    let basis = match kind {
        SubspaceKind::ZQ => SubspaceBasis {
            kind,
            x: &x1 * &x2 + &y1 * &y2,
            y: &y1 * &x2 - &x1 * &y2,
            z: (z1 - z2) * half,
        },
        SubspaceKind::DQ => SubspaceBasis {
            kind,
            x: &x1 * &x2 - &y1 * &y2,
            y: &x1 * &y2 + &y1 * &x2,
            z: (z1 + z2) * half,
        },
    };
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_eigenvalues_have_equal_multiplicity() {
        let z = single_spin_operator::<f64>(1, Axis::Z, 3).unwrap();
        let eig = SymmetricEigen::new(z).eigenvalues;
        let plus = eig.iter().filter(|v| (**v - 0.5).abs() < 1e-14).count();
        let minus = eig.iter().filter(|v| (**v + 0.5).abs() < 1e-14).count();
        assert_eq!((plus, minus), (4, 4));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(single_spin_operator::<f64>(2, Axis::X, 2).is_err());
        assert!(single_spin_operator::<f64>(0, Axis::X, 4).is_err());
    }

    #[test]
    fn expm_matches_power_series_for_small_matrix() {
        let h = single_spin_operator::<f64>(0, Axis::X, 2).unwrap()
            + single_spin_operator::<f64>(1, Axis::Z, 2).unwrap() * Complex::new(0.3, 0.0);
        let u = expm_hermitian(&h, 0.7);
        let mut series = identity::<f64>(4);
        let mut term = identity::<f64>(4);
        for k in 1..30 {
            term = &term * &h * Complex::new(0.0, -0.7 / k as f64);
            series += &term;
        }
        assert!(max_abs(&(u - series)) < 1e-13);
    }
}
