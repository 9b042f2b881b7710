use std::f64::consts::{FRAC_PI_2, PI, TAU};

use mas_aht::pulse::*;
use mas_aht::quaternion::{compose, Quaternion};

const TAU_R: f64 = 100e-6;
const P: f64 = 5e-6;

fn pulse_centres(seq: &PulseSequence, ch: &str) -> Vec<f64> {
    let mut t = 0.0;
    let mut out = Vec::new();
    for s in seq.segments(ch).unwrap() {
        if s.amplitude > 0.0 {
            out.push(t + s.duration / 2.0);
        }
        t += s.duration;
    }
    out
}

#[test]
fn standard_rfdr_pulse_positions() {
    let seq = build_rfdr("C", TAU_R, P, 100e3, 0.0, PhaseCycle::None).unwrap();
    let c = pulse_centres(&seq, "C");
    assert_eq!(c.len(), 2);
    assert!((c[0] - TAU_R / 2.0).abs() < 1e-12);
    assert!((c[1] - 1.5 * TAU_R).abs() < 1e-12);
    assert!((seq.cycle_time() - 2.0 * TAU_R).abs() < 1e-15);
}

#[test]
fn displaced_rfdr_delays() {
    let dt = -TAU_R / 4.0;
    let d = rfdr_delays(TAU_R, P, dt);
    assert!((d[0] - (TAU_R / 2.0 - TAU_R / 4.0 - P / 2.0)).abs() < 1e-15);
    let seq = build_rfdr("C", TAU_R, P, 100e3, dt, PhaseCycle::None).unwrap();
    let c = pulse_centres(&seq, "C");
    assert!((c[0] - (TAU_R / 2.0 + dt)).abs() < 1e-12);
    assert!((c[1] - (1.5 * TAU_R - dt)).abs() < 1e-12);
}

#[test]
fn degenerate_displacement_flagged() {
    let edge = (TAU_R - P) / 2.0;
    assert!(rfdr_is_degenerate(TAU_R, P, edge));
    assert!(rfdr_is_degenerate(TAU_R, P, -edge));
    assert!(!rfdr_is_degenerate(TAU_R, P, 0.0));
    assert!(build_rfdr("C", TAU_R, P, 100e3, edge * 1.01, PhaseCycle::None).is_err());
}

#[test]
fn xy8_rfdr_phases() {
    let seq = build_rfdr("C", TAU_R, P, 100e3, 0.0, PhaseCycle::XY8).unwrap();
    let ph: Vec<f64> = seq.segments("C").unwrap().iter().filter(|s| s.amplitude > 0.0).map(|s| s.phase).collect();
    let (x, y) = (0.0, FRAC_PI_2);
    assert_eq!(ph, vec![x, y, x, y, y, x, y, x]);
    assert!((seq.cycle_time() - 8.0 * TAU_R).abs() < 1e-15);
    assert_eq!(seq.rotor_periods_per_cycle(), Some(8));
}

#[test]
fn tangential_sweep_examples() {
    assert_eq!(tangential_sweep(1, 3e-6, 1.0).unwrap().delta_tau, vec![0.0]);
    for xco in [0.3, 1.0, 1.4] {
        let s = tangential_sweep(2, 3e-6, xco).unwrap();
        assert!((s.delta_tau[0] + 1.5e-6).abs() < 1e-18 && (s.delta_tau[1] - 1.5e-6).abs() < 1e-18);
    }
    let (ts, xco) = (3.3e-6, 80f64.to_radians());
    let s = tangential_sweep(5, ts, xco).unwrap();
    for (i, got) in s.delta_tau.iter().enumerate() {
        let x = -xco + 2.0 * xco * i as f64 / 4.0;
        let want = ts / 2.0 * x.tan() / xco.tan();
        assert!((got - want).abs() < 1e-18);
    }
    assert!(tangential_sweep(0, 1e-6, 1.0).is_err());
    assert!(tangential_sweep(5, 1e-6, FRAC_PI_2).is_err());
}

#[test]
fn adiabatic_rfdr_spans_one_xy8_block_per_entry() {
    let s = tangential_sweep(3, 2.5e-6, 1.0).unwrap();
    let seq = build_adiabatic_rfdr("C", TAU_R, P, 100e3, &s).unwrap();
    assert!((seq.cycle_time() - 24.0 * TAU_R).abs() < 1e-13);
    let c = pulse_centres(&seq, "C");
    assert_eq!(c.len(), 24);
    // first pulse of block b sits at τ_r/2 + Δτ_b from the block start
    for (b, dt) in s.delta_tau.iter().enumerate() {
        assert!((c[16 * b / 2] - (8.0 * TAU_R * b as f64 + TAU_R / 2.0 + dt)).abs() < 1e-12);
    }
}

#[test]
fn plain_respiration_am_block_has_zero_flip() {
    let tau_r = 50e-6;
    let tau_p = tau_r / 15.0;
    let amp = 40e3;
    let p = RespirationParams::plain(tau_r, tau_p, &[("15N", amp), ("13C", amp)]);
    let seq = build_respiration_cp(&p).unwrap();
    for ch in ["15N", "13C"] {
        let split = split_am(&seq, ch).unwrap();
        assert!(split.am_integral_turns().abs() < 1e-12);
        // the short pulse carries the only net flip; the inverted echo measures it against −x
        assert!((split.omega_cw.abs() * tau_r - amp * tau_p).abs() < 1e-9);
        let short = seq.segments(ch).unwrap().last().unwrap();
        assert!((short.flip() - TAU * amp * tau_p).abs() < 1e-12);
    }
}

#[test]
fn compensation_pulse_flip() {
    let nu_r: f64 = 20e3;
    let rf = 2.0 * nu_r;
    let tau_com = 0.5 / rf;
    assert!((tau_com - 12.5e-6).abs() < 1e-15);
    let mut p = RespirationParams::plain(1.0 / nu_r, 2e-6, &[("I", rf), ("S", rf)]);
    p.variant = RespirationVariant::BbSync;
    p.tau_com = tau_com;
    let seq = build_respiration_cp(&p).unwrap();
    let com = seq.segments("I").unwrap()[1];
    assert!((com.flip() - PI).abs() < 1e-12);
    // two periods with opposite compensation phases
    assert_eq!(seq.rotor_periods_per_cycle(), Some(2));
    let coms: Vec<f64> = seq.segments("I").unwrap().chunks(4).map(|c| c[1].phase).collect();
    assert!(((coms[1] - coms[0]).abs() - PI).abs() < 1e-12);
}

#[test]
fn amplitude_ramp_is_linear() {
    let mut p = RespirationParams::plain(50e-6, 2e-6, &[("I", 40e3), ("S", 40e3)]);
    p.sweep = Some(AmplitudeRamp { span: 8e3, center: 0.0, repeats: 5 });
    let seq = build_respiration_cp(&p).unwrap();
    let amps: Vec<f64> = seq.segments("I").unwrap().chunks(3).map(|c| c[0].amplitude).collect();
    assert_eq!(amps.len(), 5);
    for (i, a) in amps.iter().enumerate() {
        assert!((a - (36e3 + 2e3 * i as f64)).abs() < 1e-9);
    }
    // S keeps a constant amplitude
    assert!(seq.segments("S").unwrap().iter().all(|s| s.amplitude == 40e3));
}

#[test]
fn c7_timing() {
    let nu_r = 5000.0;
    for el in [C7Element::C7, C7Element::Post] {
        let seq = build_c7("C", el, nu_r, PhaseDirection::Increment).unwrap();
        let segs = seq.segments("C").unwrap();
        assert!(segs.iter().all(|s| (s.amplitude - 35e3).abs() < 1e-9));
        assert!((seq.cycle_time() - 2.0 / nu_r).abs() < 1e-15);
        let per = segs.len() / 7;
        let elem: f64 = segs[..per].iter().map(|s| s.duration).sum();
        assert!((elem - 2.0 / (7.0 * nu_r)).abs() < 1e-15);
    }
}

#[test]
fn post_element_composes_to_identity() {
    let seq = build_c7("C", C7Element::Post, 5000.0, PhaseDirection::Increment).unwrap();
    let segs = seq.segments("C").unwrap();
    let per = segs.len() / 7;
    for e in 0..7 {
        let mut q = Quaternion::<f64>::identity();
        for s in &segs[e * per..(e + 1) * per] {
            q = compose(&Quaternion::from_segment(0.0, s.amplitude, s.phase, s.duration), &q);
        }
        assert!(q.distance_to_identity() < 1e-12, "element {e}");
    }
}

#[test]
fn am_split_examples() {
    let constant = PulseSequence::new("cw").with_channel("I", vec![PulseSegment::new(1e-3, 500.0, 0.3)]);
    let s = split_am(&constant, "I").unwrap();
    assert!((s.omega_cw - 500.0).abs() < 1e-12);
    assert!(s.am_component.iter().all(|c| c.amplitude.abs() < 1e-12));

    let f = 0.3;
    let single = PulseSequence::new("one").with_channel(
        "I",
        vec![PulseSegment::new(f * 1e-3, 2000.0, 0.0), PulseSegment::delay((1.0 - f) * 1e-3)],
    );
    assert!((split_am(&single, "I").unwrap().omega_cw - f * 2000.0).abs() < 1e-9);

    let alt = PulseSequence::new("alt").with_channel(
        "I",
        vec![PulseSegment::new(1e-3, 2000.0, 0.0), PulseSegment::new(1e-3, 2000.0, PI)],
    );
    let s = split_am(&alt, "I").unwrap();
    assert!(s.omega_cw.abs() < 1e-12);
    let back = s.reconstructed();
    assert!((back[1].amplitude + 2000.0).abs() < 1e-12);

    let quad = PulseSequence::new("q").with_channel("I", vec![PulseSegment::new(1e-3, 2000.0, FRAC_PI_2), PulseSegment::new(1e-3, 2000.0, 0.0)]);
    assert!(split_am(&quad, "I").is_err());
}

#[test]
fn phase_shift_and_unknown_channel() {
    let seq = build_rfdr("C", TAU_R, P, 100e3, 0.0, PhaseCycle::XY4).unwrap();
    let shifted = seq.phase_shifted(0.4);
    for (a, b) in seq.segments("C").unwrap().iter().zip(shifted.segments("C").unwrap()) {
        if a.amplitude > 0.0 {
            assert!(((b.phase - a.phase) - 0.4).abs() < 1e-12);
        }
    }
    assert!(seq.segments("H").is_err());
}
