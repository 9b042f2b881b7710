//! Scalar abstraction shared by the numeric kernels.

use nalgebra::{DMatrix, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the kernels: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync {
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense complex matrix.
pub type CMatrix<T> = DMatrix<Complex<T>>;

pub(crate) fn cplx<T: Real>(re: f64, im: f64) -> Complex<T> {
    Complex::new(T::of(re), T::of(im))
}

/// Largest elementwise modulus.
pub fn max_abs<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| {
        let a = cabs(*z);
        if a > acc {
            a
        } else {
            acc
        }
    })
}

pub fn identity<T: Real>(dim: usize) -> CMatrix<T> {
    CMatrix::<T>::identity(dim, dim)
}

pub fn zeros<T: Real>(dim: usize) -> CMatrix<T> {
    CMatrix::<T>::zeros(dim, dim)
}

pub fn scale<T: Real>(m: &CMatrix<T>, s: Complex<T>) -> CMatrix<T> {
    m.map(|z| z * s)
}

pub fn scale_re<T: Real>(m: &CMatrix<T>, s: T) -> CMatrix<T> {
    m.map(|z| z * Complex::new(s, T::zero()))
}

/// Frobenius norm.
pub fn fro<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

/// `e^{iθ}`.
pub fn cis<T: Real>(theta: T) -> Complex<T> {
    let (s, c) = theta.sin_cos();
    Complex::new(c, s)
}

pub fn cabs<T: Real>(z: Complex<T>) -> T {
    z.norm_sqr().sqrt()
}
