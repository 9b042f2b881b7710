//! Grid searches over adiabatic-RFDR sweep parameters and delay-list I/O.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::num::{identity, CMatrix};
use crate::powder::CrystalliteSet;
use crate::propagation::{normalized_signal, PropagationError, RotorCache, TransferCurve};
use crate::pulse::{build_rfdr, rfdr_delays, tangential_sweep, PhaseCycle, SequenceError, SweepSchedule};
use crate::system::{SpinSystem, SystemError};
use crate::tensor::magic_angle;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("empty scan axis {0}")]
    EmptyAxis(String),
    #[error("negative delay {0:e} s")]
    NegativeDelay(f64),
    #[error("delay list line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Cartesian parameter scan; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub axes: Vec<(String, Vec<f64>)>,
}

impl ScanSpec {
    pub fn new(axes: Vec<(String, Vec<f64>)>) -> Result<Self, OptimizerError> {
        if let Some((name, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(OptimizerError::EmptyAxis(name.clone()));
        }
        Ok(ScanSpec { axes })
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for (_, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// Objective values over a scan; `best` is the first maximiser in scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub best: usize,
}

pub fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn scan(spec: &ScanSpec, objective: impl Fn(&[f64]) -> f64 + Sync) -> ScanResult {
    let points = spec.points();
    let values: Vec<f64> = points.par_iter().map(|p| objective(p)).collect();
    let best = first_max(&values);
    ScanResult { points, values, best }
}

/// Homonuclear RFDR experiment on one channel.
#[derive(Debug, Clone)]
pub struct RfdrSetup {
    pub system: SpinSystem,
    pub channel: String,
    pub spin_rate: f64,
    pub pi_duration: f64,
    pub pi_amplitude: f64,
    pub rho0: String,
    pub detect: String,
    pub crystallites: CrystalliteSet,
    /// rotor-phase grid of the propagator cache
    pub grid: usize,
}

impl RfdrSetup {
    pub fn tau_r(&self) -> f64 {
        1.0 / self.spin_rate
    }
}

/// Per-crystallite XY-8 block propagators keyed by Δτ.
struct BlockCache {
    rotor: RotorCache,
    blocks: HashMap<i64, CMatrix<f64>>,
}

impl BlockCache {
    fn block(&mut self, setup: &RfdrSetup, delta_tau: f64) -> Result<CMatrix<f64>, OptimizerError> {
        let key = (delta_tau * 1e12).round() as i64;
        if let Some(u) = self.blocks.get(&key) {
            return Ok(u.clone());
        }
        let tr = setup.tau_r();
        let seq = build_rfdr(&setup.channel, tr, setup.pi_duration, setup.pi_amplitude, delta_tau, PhaseCycle::XY8)?;
        let u = self.rotor.propagate(&seq, 0.0, 8.0 * tr);
        self.blocks.insert(key, u.clone());
        Ok(u)
    }
}

fn block_curve(
    cache: &mut BlockCache,
    setup: &RfdrSetup,
    delta_tau: &[f64],
    rho0: &CMatrix<f64>,
    detect: &CMatrix<f64>,
) -> Result<Vec<f64>, OptimizerError> {
    let mut u = identity::<f64>(setup.system.dim());
    let mut out = Vec::with_capacity(delta_tau.len() + 1);
    out.push(normalized_signal(rho0, rho0, detect));
    for dt in delta_tau {
        u = cache.block(setup, *dt)? * u;
        out.push(normalized_signal(&(&u * rho0 * u.adjoint()), rho0, detect));
    }
    Ok(out)
}

/// Powder-averaged curves for several Δτ lists, sampled at XY-8 block ends.
pub fn block_curves(setup: &RfdrSetup, schedules: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OptimizerError> {
    let rho0 = setup.system.operator_from_label(&setup.rho0)?;
    let detect = setup.system.operator_from_label(&setup.detect)?;
    let per: Result<Vec<Vec<Vec<f64>>>, OptimizerError> = setup
        .crystallites
        .angles
        .par_iter()
        .map(|cr| {
            let rotor = RotorCache::new(&setup.system, cr, setup.spin_rate, magic_angle(), setup.grid)?;
            let mut cache = BlockCache { rotor, blocks: HashMap::new() };
            schedules.iter().map(|s| block_curve(&mut cache, setup, s, &rho0, &detect)).collect()
        })
        .collect();
    let per = per?;
    let mut out: Vec<Vec<f64>> = schedules.iter().map(|s| vec![0.0; s.len() + 1]).collect();
    for (curves, w) in per.iter().zip(&setup.crystallites.weights) {
        for (acc, c) in out.iter_mut().zip(curves) {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += w * v;
            }
        }
    }
    Ok(out)
}

/// Transfer curve of one sweep schedule sampled at block ends.
pub fn adiabatic_curve(setup: &RfdrSetup, schedule: &SweepSchedule) -> Result<TransferCurve, OptimizerError> {
    let curve = block_curves(setup, std::slice::from_ref(&schedule.delta_tau))?.remove(0);
    let tb = 8.0 * setup.tau_r();
    Ok(TransferCurve { times: (0..curve.len()).map(|i| i as f64 * tb).collect(), efficiency: curve })
}

/// Standard RFDR (Δτ = 0) sampled after each of `n_blocks` XY-8 blocks.
pub fn rfdr_curve(setup: &RfdrSetup, n_blocks: usize) -> Result<TransferCurve, OptimizerError> {
    let s = SweepSchedule { n_blocks, tau_sweep: 0.0, x_co: 0.0, delta_tau: vec![0.0; n_blocks] };
    adiabatic_curve(setup, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub n_blocks: usize,
    pub tau_sweep: f64,
    pub x_co: f64,
    pub max_efficiency: f64,
    /// block index of the maximum (0 = start)
    pub cycle_index: usize,
}

/// Best `(τ_sweep, x_co)` per N; ties resolve to the first grid point (τ_sweep outer).
pub fn grid_search_adiabatic(
    setup: &RfdrSetup,
    n_list: &[usize],
    sweep_grid: &[f64],
    xco_grid: &[f64],
) -> Result<Vec<GridRow>, OptimizerError> {
    let mut keys = Vec::new();
    let mut schedules = Vec::new();
    for &n in n_list {
        if n == 1 {
            keys.push((n, 0.0, 0.0));
            schedules.push(vec![0.0]);
            continue;
        }
        // the sweep shape only matters from four blocks on
        let xcos = if n <= 3 { &xco_grid[..xco_grid.len().min(1)] } else { xco_grid };
        for &ts in sweep_grid {
            for &xc in xcos {
                keys.push((n, ts, xc));
                schedules.push(tangential_sweep(n, ts, xc)?.delta_tau);
            }
        }
    }
    let curves = block_curves(setup, &schedules)?;
    let mut rows: Vec<GridRow> = Vec::new();
    for (&(n, ts, xc), c) in keys.iter().zip(&curves) {
        let idx = first_max(c);
        let row = GridRow { n_blocks: n, tau_sweep: ts, x_co: xc, max_efficiency: c[idx], cycle_index: idx };
        match rows.iter_mut().find(|r| r.n_blocks == n) {
            Some(r) if row.max_efficiency > r.max_efficiency => *r = row,
            Some(_) => {}
            None => rows.push(row),
        }
    }
    Ok(rows)
}

pub fn grid_table_tsv(rows: &[GridRow]) -> String {
    let mut s = String::from("N\ttau_sweep_us\tx_co_deg\tmax_efficiency\tcycle_index\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.3}\t{:.1}\t{:.6}\t{}\n",
            r.n_blocks,
            r.tau_sweep * 1e6,
            r.x_co.to_degrees(),
            r.max_efficiency,
            r.cycle_index
        ));
    }
    s
}

/// Spectrometer delay list: per block the four delays of a two-rotor-period unit,
/// written four times (one XY-8 block), as `<µs>u` lines.
pub fn emit_delay_list(schedule: &SweepSchedule, tau_r: f64, pi_duration: f64) -> Result<String, OptimizerError> {
    let mut s = String::new();
    for dt in &schedule.delta_tau {
        let d = rfdr_delays(tau_r, pi_duration, *dt);
        if let Some(neg) = d.iter().find(|x| **x < -1e-12) {
            return Err(OptimizerError::NegativeDelay(*neg));
        }
        for _ in 0..4 {
            for x in d {
                s.push_str(&format!("{:.6}u\n", x.max(0.0) * 1e6));
            }
        }
    }
    Ok(s)
}

/// Recovers Δτ per block from an emitted list.
pub fn parse_delay_list(text: &str, tau_r: f64, pi_duration: f64) -> Result<Vec<f64>, OptimizerError> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .strip_suffix('u')
            .ok_or_else(|| OptimizerError::Parse { line: i + 1, msg: "missing unit suffix".into() })?
            .parse::<f64>()
            .map_err(|e| OptimizerError::Parse { line: i + 1, msg: e.to_string() })?;
        values.push(v * 1e-6);
    }
    if values.len() % 16 != 0 {
        return Err(OptimizerError::Parse { line: values.len(), msg: "expected 16 lines per block".into() });
    }
    Ok(values.chunks(16).map(|b| b[0] - tau_r / 2.0 + pi_duration / 2.0).collect())
}

/// Coarse grid: τ_sweep 0..5 µs step 0.5 µs, x_co 60°..85° step 5°.
pub fn coarse_grid() -> (Vec<f64>, Vec<f64>) {
    let sweep = (0..=10).map(|i| i as f64 * 0.5e-6).collect();
    let xco = (0..6).map(|i| (60.0 + 5.0 * i as f64).to_radians()).collect();
    (sweep, xco)
}

/// Full grid: τ_sweep 0..20 µs step 0.1 µs, x_co 1°..89°.
pub fn full_grid() -> (Vec<f64>, Vec<f64>) {
    let sweep = (0..=200).map(|i| i as f64 * 0.1e-6).collect();
    let xco = (1..=89).map(|d| (d as f64).to_radians()).collect();
    (sweep, xco)
}
