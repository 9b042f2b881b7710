use mas_aht::aht::*;
use mas_aht::num::{fro, identity, max_abs};
use mas_aht::propagation::HamiltonianAssembly;
use mas_aht::pulse::*;
use mas_aht::quaternion::{compose, Quaternion};
use mas_aht::spin::{expm_hermitian, single_spin_operator, Axis};
use mas_aht::system::SpinSystem;
use mas_aht::tensor::{EulerAngles, InteractionTensor};
use mas_aht::OperatorMatrix;
use num_complex::Complex64;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Rotating-frame rf propagator of one channel at time `t` (periodic continuation).
fn rf_su2(segs: &[PulseSegment], offset: f64, t: f64) -> OperatorMatrix {
    let period: f64 = segs.iter().map(|s| s.duration).sum();
    let mut q = Quaternion::<f64>::identity();
    let full = segs
        .iter()
        .fold(Quaternion::identity(), |acc, s| compose(&Quaternion::from_segment(offset, s.amplitude, s.phase, s.duration), &acc));
    let reps = (t / period).floor();
    for _ in 0..reps as usize {
        q = compose(&full, &q);
    }
    let mut rem = t - reps * period;
    for s in segs {
        if rem <= 0.0 {
            break;
        }
        let d = s.duration.min(rem);
        q = compose(&Quaternion::from_segment(offset, s.amplitude, s.phase, d), &q);
        rem -= d;
    }
    q.to_su2()
}

fn ops() -> [OperatorMatrix; 3] {
    [Axis::X, Axis::Y, Axis::Z].map(|a| single_spin_operator(0, a, 1).unwrap())
}

/// Largest deviation between the reconstructed and the directly rotated spin operators.
fn reconstruction_error(frame: &FourierCoefficientSet, segs: &[PulseSegment], offset: f64, times: &[f64]) -> f64 {
    let i = ops();
    let mut worst = 0.0f64;
    for &t in times {
        let u = rf_su2(segs, offset, t);
        for j in 0..3 {
            let want = u.adjoint() * &i[j] * &u;
            let v = frame.reconstruct(j, t);
            let got = &i[0] * v[0] + &i[1] * v[1] + &i[2] * v[2];
            worst = worst.max(max_abs(&(got - want)));
        }
    }
    worst
}

fn sample_times(n: usize, span: f64) -> Vec<f64> {
    // fixed irrational-looking fractions so nothing lands on a segment edge
    (0..n).map(|i| span * ((i as f64 * 0.618_033_988_7 + 0.1234) % 1.0)).collect()
}

/// Removes a global phase before measuring the distance of two unitaries.
fn phase_free_distance(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    let tr = (b.adjoint() * a).trace();
    let ph = if tr.norm() > 0.0 { tr / tr.norm() } else { c(1.0) };
    fro(&(a - b * ph))
}

#[test]
fn constant_amplitude_has_only_the_static_coefficient() {
    let seq = PulseSequence::new("cw").with_channel("I", vec![PulseSegment::new(100e-6, 30e3, 0.4)]);
    let split = split_am(&seq, "I").unwrap();
    let f = am_coefficients(&split, &CoefficientOptions::default()).unwrap();
    for j in 0..3 {
        for jp in 0..3 {
            assert!((f.coeff(j, jp, 0) - c(f.basis[jp][j])).norm() < 1e-12);
            for k in 1..=f.k_max as i32 {
                assert!(f.coeff(j, jp, k).norm() < 1e-12 && f.coeff(j, jp, -k).norm() < 1e-12);
            }
        }
    }
    assert!(f.tail_energy < 1e-12);
}

#[test]
fn coefficients_obey_parseval() {
    let p = RespirationParams::plain(50e-6, 4e-6, &[("I", 40e3), ("S", 40e3)]);
    let seq = build_respiration_cp(&p).unwrap();
    let opts = CoefficientOptions { k_max: 200, samples: Some(8192), tail_tol: 1.0, auto_k: false };
    let f = general_coefficients(&seq, "I", 0.0, &opts).unwrap();
    for j in 0..3 {
        let kept: f64 = (0..3)
            .map(|jp| (-200..=200).map(|k| f.coeff(j, jp, k).norm_sqr()).sum::<f64>())
            .sum();
        assert!(kept <= 1.0 + 1e-12);
        assert!(kept + f.tail_energy >= 1.0 - 1e-8, "j={j}: {kept} + {}", f.tail_energy);
    }
}

#[test]
fn cw_frame_is_a_pure_rotation() {
    let seq = PulseSequence::new("cw").with_channel("I", vec![PulseSegment::new(100e-6, 2300.0, 0.0)]);
    let f = general_coefficients(&seq, "I", 0.0, &CoefficientOptions::default()).unwrap();
    assert!((f.omega_cw - 2300.0).abs() < 1e-6);
    for term in f.expansion() {
        let norm: f64 = term.m.iter().flatten().map(|z| z.norm_sqr()).sum();
        if norm > 1e-20 {
            assert_eq!(term.k, 0, "only k = 0 survives");
        }
    }
    // I_y and I_z rotate with l = ±1, I_x stays at l = 0
    let weight = |j: usize, l: i32| -> f64 {
        f.expansion().iter().filter(|t| t.l == l).map(|t| t.m[j].iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    };
    assert!((weight(0, 0) - 1.0).abs() < 1e-12);
    for j in [1, 2] {
        assert!(weight(j, 0) < 1e-12);
        assert!((weight(j, 1) - 0.5).abs() < 1e-12 && (weight(j, -1) - 0.5).abs() < 1e-12);
    }
    let err = reconstruction_error(&f, seq.segments("I").unwrap(), 0.0, &sample_times(20, 300e-6));
    assert!(err < 1e-10, "{err}");
}

#[test]
fn offset_only_frame() {
    let seq = PulseSequence::new("free").with_channel("I", vec![PulseSegment::delay(100e-6)]);
    let f = general_coefficients(&seq, "I", 1500.0, &CoefficientOptions::default()).unwrap();
    assert!((f.omega_cw.abs() - 1500.0).abs() < 1e-6);
    assert!((f.axis[2].abs() - 1.0).abs() < 1e-12);
    let err = reconstruction_error(&f, seq.segments("I").unwrap(), 1500.0, &sample_times(20, 1e-3));
    assert!(err < 1e-10, "{err}");
}

#[test]
fn respiration_frame_reconstructs() {
    let p = RespirationParams::plain(50e-6, 4e-6, &[("I", 40e3), ("S", 40e3)]);
    let seq = build_respiration_cp(&p).unwrap();
    let f = general_coefficients(&seq, "I", 2000.0, &CoefficientOptions::auto(1e-10)).unwrap();
    let err = reconstruction_error(&f, seq.segments("I").unwrap(), 2000.0, &sample_times(15, 400e-6));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn c7_frame_reconstruction_improves_with_k() {
    let seq = build_c7("C", C7Element::C7, 5000.0, PhaseDirection::Increment).unwrap();
    let segs = seq.segments("C").unwrap();
    let times = sample_times(12, 800e-6);
    let err = |k: usize| {
        let opts = CoefficientOptions { k_max: k, samples: Some(16384), tail_tol: 1.0, auto_k: false };
        let f = general_coefficients(&seq, "C", 300.0, &opts).unwrap();
        reconstruction_error(&f, segs, 300.0, &times)
    };
    let (coarse, fine) = (err(40), err(400));
    assert!(fine < coarse / 4.0, "{coarse} -> {fine}");
    assert!(fine < 5e-3, "{fine}");
}

fn fixed_k(k: usize) -> CoefficientOptions {
    CoefficientOptions { k_max: k, samples: Some(8192), tail_tol: 1.0, auto_k: false }
}

fn two_spin_system(scale: f64, homo: bool, iso: bool) -> SpinSystem {
    let ch = if homo { ["C", "C"] } else { ["N", "C"] };
    let (i1, i2) = if iso { (1200.0, -900.0) } else { (0.0, 0.0) };
    SpinSystem::new(&ch)
        .with(InteractionTensor::shift(0, i1, 2500.0 * scale, 0.3, EulerAngles::new(0.2, 0.8, 1.1)))
        .with(InteractionTensor::shift(1, i2, -1800.0 * scale, 0.6, EulerAngles::new(1.3, 0.4, 2.0)))
        .with(InteractionTensor::dipolar(0, 1, -2000.0 * scale, EulerAngles::new(0.0, 1.0, 0.3)))
}

#[test]
fn fourier_components_rebuild_the_interaction_frame_hamiltonian() {
    let sys = two_spin_system(1.0, true, true);
    let seq = PulseSequence::new("cw").with_channel("C", vec![PulseSegment::new(100e-6, 20e3, 0.3)]);
    let model = AhtModel::general(&sys, &seq, 10e3, &CoefficientOptions::default()).unwrap();
    let cr = EulerAngles::new(0.7, 1.2, -0.4);
    let comps = model.assemble_components(&model.spatial(&cr).unwrap(), &|_| true);
    let offsets = [isotropic_offset(&sys, 0), isotropic_offset(&sys, 1)];
    for t in sample_times(10, 500e-6) {
        let direct = direct_interaction_hamiltonian(&model, &seq, &offsets, &cr, t).unwrap();
        let scale = fro(&direct);
        assert!(max_abs(&(comps.at(t) - &direct)) < 1e-6 * scale, "t={t}");
    }
}

#[test]
fn rfdr_components_converge_with_truncation() {
    let sys = two_spin_system(1.0, true, false);
    let seq = build_rfdr("C", 100e-6, 5e-6, 100e3, 0.0, PhaseCycle::XY4).unwrap();
    let cr = EulerAngles::new(0.1, 2.0, 0.9);
    // pulses are short next to the period, so compare RMS errors over the cycle
    let rms = |k: usize| {
        let model = AhtModel::general(&sys, &seq, 10e3, &fixed_k(k)).unwrap();
        let comps = model.assemble_components(&model.spatial(&cr).unwrap(), &|_| true);
        let n = 200;
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) * seq.cycle_time() / n as f64;
            let direct = direct_interaction_hamiltonian(&model, &seq, &[0.0, 0.0], &cr, t).unwrap();
            err += fro(&(comps.at(t) - &direct)).powi(2);
            norm += fro(&direct).powi(2);
        }
        (err / norm).sqrt()
    };
    let (coarse, fine) = (rms(20), rms(80));
    assert!(fine < coarse / 2.0, "{coarse} -> {fine}");
    assert!(fine < 0.05, "{fine}");
}

#[test]
fn resonance_enumeration_matches_brute_force() {
    let freqs = FrequencySet { omega_r: 10e3, spins: vec![(2500.0, 1250.0, 4, true), (5000.0, 0.0, 3, false)] };
    let (res, near) = enumerate_resonances(&freqs, 2, 1e-6, 300.0);
    let mut brute = Vec::new();
    for n in -2..=2 {
        for k1 in -4..=4 {
            for l1 in -1..=1 {
                for k2 in -3..=3 {
                    let t = FrequencyTuple { n, k: [k1, k2, 0], l: [l1, 0, 0] };
                    let s = n as f64 * 10e3 + k1 as f64 * 2500.0 + l1 as f64 * 1250.0 + k2 as f64 * 5000.0;
                    if s.abs() <= 1e-6 {
                        brute.push(t);
                    }
                }
            }
        }
    }
    let mut got = res.clone();
    got.sort();
    brute.sort();
    assert_eq!(got, brute);
    assert!(near.is_empty(), "all sums are multiples of 1250 Hz");
}

#[test]
fn incommensurate_field_never_resonates() {
    let wcw = 10e3 * 2f64.sqrt() / 7.0;
    let freqs = FrequencySet { omega_r: 10e3, spins: vec![(10e3, wcw, 6, true)] };
    let (res, _) = enumerate_resonances(&freqs, 2, 1e-3, 50.0);
    assert!(!res.is_empty());
    assert!(res.iter().all(|t| t.l[0] == 0));
}

#[test]
fn second_order_vanishes_for_commuting_terms() {
    let sys = two_spin_system(1.0, false, true);
    let tau = 100e-6;
    let model = AhtModel::new(&sys, 10e3, vec![static_frame(tau), static_frame(tau)], &[0.0, 0.0]).unwrap();
    let comps = model.assemble_components(&model.spatial(&EulerAngles::new(0.3, 1.0, 2.0)).unwrap(), &|_| true);
    assert!(comps.components.len() > 3);
    let h2 = comps.second_order(1e-3).unwrap();
    assert!(max_abs(&h2) < 1e-9, "{}", max_abs(&h2));
}

#[test]
fn zero_cycles_give_identity() {
    let sys = two_spin_system(1.0, true, false);
    let seq = build_rfdr("C", 100e-6, 5e-6, 100e3, 0.0, PhaseCycle::XY4).unwrap();
    let model = AhtModel::general(&sys, &seq, 10e3, &fixed_k(40)).unwrap();
    let h = model.first_order(&EulerAngles::new(0.1, 0.2, 0.3)).unwrap();
    assert_eq!(effective_propagate(&h, 0), identity::<f64>(4));
}

#[test]
fn rotating_frame_factorises() {
    let sys = two_spin_system(1.0, true, true);
    let seq = PulseSequence::new("cw").with_channel("C", vec![PulseSegment::new(100e-6, 20e3, 0.0)]);
    let model = AhtModel::general(&sys, &seq, 10e3, &CoefficientOptions::default()).unwrap();
    let h = model.first_order(&EulerAngles::new(0.4, 0.5, 0.6)).unwrap();
    let n = 3;
    let t = n as f64 * h.tau_c_prime;
    let want = expm_hermitian(&h.big_hamiltonian(), t) * h.interaction_propagator(n);
    assert!(max_abs(&(effective_propagate(&h, n) - want)) < 1e-12);
}

#[test]
fn first_order_error_shrinks_with_coupling_strength() {
    let seq = build_rfdr("C", 100e-6, 5e-6, 100e3, 0.0, PhaseCycle::XY4).unwrap();
    let cr = EulerAngles::new(0.6, 1.1, 2.2);
    let defect = |s: f64| {
        let sys = two_spin_system(s, true, false);
        let model = AhtModel::general(&sys, &seq, 10e3, &fixed_k(60)).unwrap();
        let h = model.first_order(&cr).unwrap();
        assert!((h.tau_c_prime - seq.cycle_time()).abs() < 1e-12);
        let exact = HamiltonianAssembly::new(&sys, &seq, cr, 10e3).unwrap().propagate(0.0, h.tau_c_prime).unwrap().matrix;
        phase_free_distance(&exact, &effective_propagate(&h, 1))
    };
    let (d1, d2) = (defect(1.0), defect(0.5));
    assert!(d2 <= 0.35 * d1, "{d1} -> {d2}");
}

#[test]
fn tuple_dump_lists_resonances_first() {
    let sys = two_spin_system(1.0, true, false);
    let seq = build_rfdr("C", 100e-6, 5e-6, 100e3, 0.0, PhaseCycle::XY4).unwrap();
    let model = AhtModel::general(&sys, &seq, 10e3, &fixed_k(40)).unwrap();
    let dump = model.tuple_dump(&EulerAngles::new(0.2, 0.9, 0.1), 500.0).unwrap();
    let mut lines = dump.lines();
    assert!(lines.next().unwrap().starts_with("term\tn\tk1\tl1\tk2\tl2"));
    let first = lines.next().unwrap();
    assert!(first.ends_with("resonant"), "{first}");
}
