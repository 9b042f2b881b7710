//! Static description of the spin system.

use thiserror::Error;

use crate::num::CMatrix;
use crate::spin::{single_spin_operator, Axis, MAX_SPINS};
use crate::tensor::{InteractionKind, InteractionTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("spin system needs 1..=3 spins, got {0}")]
    SpinCount(usize),
    #[error("interaction references missing spin {0}")]
    MissingSpin(usize),
    #[error("coupling needs two distinct spins")]
    BadPair,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown operator label {0}")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    /// isotope label, e.g. "13C"; spins with equal labels share an rf channel
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub spins: Vec<Nucleus>,
    pub interactions: Vec<InteractionTensor<f64>>,
}

impl SpinSystem {
    pub fn new(channels: &[&str]) -> Self {
        SpinSystem {
            spins: channels.iter().map(|c| Nucleus { channel: c.to_string() }).collect(),
            interactions: Vec::new(),
        }
    }

    pub fn with(mut self, t: InteractionTensor<f64>) -> Self {
        self.interactions.push(t);
        self
    }

    pub fn n_spins(&self) -> usize {
        self.spins.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn homonuclear(&self, i: usize, j: usize) -> bool {
        self.spins[i].channel == self.spins[j].channel
    }

    pub fn channels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.spins.iter().map(|s| s.channel.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let n = self.n_spins();
        if n == 0 || n > MAX_SPINS {
            return Err(SystemError::SpinCount(n));
        }
        for t in &self.interactions {
            t.validate()?;
            if t.spin >= n {
                return Err(SystemError::MissingSpin(t.spin));
            }
            match (t.kind, t.partner) {
                (InteractionKind::ChemicalShift, _) => {}
                (_, Some(p)) if p < n && p != t.spin => {}
                (_, Some(p)) if p >= n => return Err(SystemError::MissingSpin(p)),
                _ => return Err(SystemError::BadPair),
            }
        }
        Ok(())
    }

    pub fn op(&self, spin: usize, axis: Axis) -> CMatrix<f64> {
        single_spin_operator(spin, axis, self.n_spins()).expect("validated spin index")
    }

    /// Cartesian coupling tensor `G` with spin part `Σ G_ab I_ia I_jb`, excluding the scalar prefactor.
    pub fn coupling_tensor(&self, t: &InteractionTensor<f64>) -> [[f64; 3]; 3] {
        let j = t.partner.expect("coupling has a partner");
        let homo = self.homonuclear(t.spin, j);
        match (t.kind, homo) {
            (InteractionKind::Dipolar, true) => [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]],
            (InteractionKind::Dipolar, false) => [[0.0; 3], [0.0; 3], [0.0, 0.0, 2.0]],
            (InteractionKind::JCoupling, true) => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            (InteractionKind::JCoupling, false) => [[0.0; 3], [0.0; 3], [0.0, 0.0, 1.0]],
            (InteractionKind::ChemicalShift, _) => unreachable!("shift is a single-spin term"),
        }
    }

    /// Spin operator multiplying the interaction's spatial frequency.
    pub fn spin_part(&self, t: &InteractionTensor<f64>) -> CMatrix<f64> {
        match t.kind {
            InteractionKind::ChemicalShift => self.op(t.spin, Axis::Z),
            _ => {
                let j = t.partner.unwrap();
                let g = self.coupling_tensor(t);
                let mut m = CMatrix::zeros(self.dim(), self.dim());
                for a in 0..3 {
                    for b in 0..3 {
                        if g[a][b] != 0.0 {
                            let p = self.op(t.spin, Axis::cartesian(a)) * self.op(j, Axis::cartesian(b));
                            m += p * num_complex::Complex::new(g[a][b], 0.0);
                        }
                    }
                }
                m
            }
        }
    }

    /// Operator for labels such as `I1z`, `I2x`, `Ix`, `Sx`, `I3y`.
    pub fn operator_from_label(&self, label: &str) -> Result<CMatrix<f64>, SystemError> {
        let bad = || SystemError::UnknownLabel(label.to_string());
        let chars: Vec<char> = label.chars().collect();
        if chars.len() < 2 || chars.len() > 3 {
            return Err(bad());
        }
        let axis = match chars[chars.len() - 1] {
            'x' => Axis::X,
            'y' => Axis::Y,
            'z' => Axis::Z,
            '+' => Axis::Plus,
            '-' => Axis::Minus,
            _ => return Err(bad()),
        };
        let spin = match (chars[0], chars.len()) {
            ('I', 2) => 0,
            ('S', 2) => 1,
            ('I', 3) => chars[1].to_digit(10).ok_or_else(bad)? as usize,
            _ => return Err(bad()),
        };
        let spin = if chars.len() == 3 {
            spin.checked_sub(1).ok_or_else(bad)?
        } else {
            spin
        };
        if spin >= self.n_spins() {
            return Err(bad());
        }
        Ok(self.op(spin, axis))
    }
}
