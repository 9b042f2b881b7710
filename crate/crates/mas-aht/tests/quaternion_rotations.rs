use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use mas_aht::num::max_abs;
use mas_aht::pulse::*;
use mas_aht::quaternion::*;
use mas_aht::spin::{expm_hermitian, single_spin_operator, Axis};
use mas_aht::OperatorMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

type Q = Quaternion<f64>;

fn close(q: &Q, want: [f64; 4], tol: f64) -> bool {
    (q.a - want[0]).abs() < tol && (q.b - want[1]).abs() < tol && (q.c - want[2]).abs() < tol && (q.d - want[3]).abs() < tol
}

fn ops() -> [OperatorMatrix; 3] {
    [Axis::X, Axis::Y, Axis::Z].map(|a| single_spin_operator(0, a, 1).unwrap())
}

/// `exp(−i 2π (Ω I_z + a(cosφ I_x + sinφ I_y)) t)` by eigendecomposition.
fn su2_oracle(offset: f64, amp: f64, phase: f64, t: f64) -> OperatorMatrix {
    let [x, y, z] = ops();
    let h = (x * Complex64::new(amp * phase.cos(), 0.0) + y * Complex64::new(amp * phase.sin(), 0.0) + z * Complex64::new(offset, 0.0))
        * Complex64::new(TAU, 0.0);
    expm_hermitian(&h, t)
}

#[test]
fn segment_examples() {
    let a = 1000.0;
    let q = Q::from_segment(0.0, a, 0.0, 1.0 / (4.0 * a));
    assert!(close(&q, [FRAC_PI_4.sin(), 0.0, 0.0, FRAC_PI_4.cos()], 1e-15));

    let (om, t) = (300.0, 1e-3);
    let q = Q::from_segment(om, 0.0, 0.0, t);
    let beta = TAU * om * t;
    assert!(close(&q, [0.0, 0.0, (beta / 2.0).sin(), (beta / 2.0).cos()], 1e-15));

    assert!(close(&Q::from_segment(500.0, 200.0, 1.0, 0.0), [0.0, 0.0, 0.0, 1.0], 1e-15));
}

#[test]
fn composition_examples() {
    let h = Q::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
    let full = compose(&h, &h);
    assert!(close(&full, [1.0, 0.0, 0.0, 0.0], 1e-15));
    let q = Q::from_segment(120.0, 340.0, 0.7, 1.3e-3);
    assert!(compose(&q, &q.inverse()).distance_to_identity() < 1e-15);
}

#[test]
fn directional_cosine_examples() {
    let q = Q::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
    let dc = directional_cosines(&q).unwrap();
    assert!((dc.lx - 1.0).abs() < 1e-15 && dc.ly.abs() < 1e-15 && dc.lz.abs() < 1e-15);
    assert!((dc.beta - FRAC_PI_2).abs() < 1e-15);

    // double cover: −q reports the reversed axis and the complementary angle
    let q = Q::from_axis_angle([0.0, 0.6, 0.8], 1.1);
    let (p, m) = (directional_cosines(&q).unwrap(), directional_cosines(&q.negated()).unwrap());
    assert!((p.beta + m.beta - TAU).abs() < 1e-12);
    assert!((p.ly + m.ly).abs() < 1e-12 && (p.lz + m.lz).abs() < 1e-12);

    assert!(matches!(directional_cosines(&Q::identity()), Err(QuaternionError::IdentityRotation)));
}

#[test]
fn cyclic_sequence_has_no_effective_field() {
    let seq = PulseSequence::new("cyc").with_channel(
        "H",
        vec![PulseSegment::new(250e-6, 1000.0, 0.0), PulseSegment::new(250e-6, 1000.0, PI)],
    );
    let r = effective_rotation(&seq, "H", 0.0).unwrap();
    assert_eq!(r.omega_cw, 0.0);
}

#[test]
fn cw_effective_field() {
    let seq = PulseSequence::new("cw").with_channel("H", vec![PulseSegment::new(100e-6, 2000.0, 0.0)]);
    let r = effective_rotation(&seq, "H", 0.0).unwrap();
    assert!((r.omega_cw - 2000.0).abs() < 1e-9);
    assert!((r.axis[0] - 1.0).abs() < 1e-12);
}

#[test]
fn respiration_field_matches_am_split() {
    let p = RespirationParams::plain(50e-6, 4e-6, &[("I", 40e3), ("S", 40e3)]);
    let seq = build_respiration_cp(&p).unwrap();
    for ch in ["I", "S"] {
        let r = effective_rotation(&seq, ch, 0.0).unwrap();
        let split = split_am(&seq, ch).unwrap();
        let want = split.omega_cw.abs();
        assert!((r.omega_cw - want).abs() < 1e-6 * want, "{ch}: {} vs {want}", r.omega_cw);
    }
}

#[test]
fn phase_shift_rotates_axis_only() {
    let p = RespirationParams::plain(50e-6, 4e-6, &[("I", 40e3), ("S", 40e3)]);
    let seq = build_respiration_cp(&p).unwrap();
    let phi = 0.9;
    let shifted = seq.phase_shifted(phi);
    for off in [0.0, 3000.0, -7000.0] {
        let a = effective_rotation(&seq, "I", off).unwrap();
        let b = effective_rotation(&shifted, "I", off).unwrap();
        assert!((a.omega_cw - b.omega_cw).abs() < 1e-9);
        let (s, c) = phi.sin_cos();
        let rot = [c * a.axis[0] - s * a.axis[1], s * a.axis[0] + c * a.axis[1], a.axis[2]];
        for i in 0..3 {
            assert!((rot[i] - b.axis[i]).abs() < 1e-9);
        }
    }
}

/// Fig. 3-1 style Gaussian π/2 pulse swept in offset.
#[test]
fn gaussian_offset_sweep_is_continuous_in_quaternions() {
    let duration = 0.05;
    let seq = gaussian_pulse("H", duration, duration / 6.0, FRAC_PI_2, 500);
    let step = 0.1;
    let offsets: Vec<f64> = (0..=2000).map(|i| -100.0 + step * i as f64).collect();
    let qs: Vec<Q> = offsets.iter().map(|o| sequence_quaternion(&seq, "H", *o).unwrap()).collect();
    let bound = PI * duration * step;
    let mut max_jump = 0.0f64;
    for w in qs.windows(2) {
        for (x, y) in [(w[0].a, w[1].a), (w[0].b, w[1].b), (w[0].c, w[1].c), (w[0].d, w[1].d)] {
            max_jump = max_jump.max((x - y).abs());
        }
    }
    assert!(max_jump < bound, "quaternion jump {max_jump} vs bound {bound}");
    let lz: Vec<f64> = qs.iter().filter_map(|q| directional_cosines(q).ok()).map(|d| d.lz).collect();
    let lz_jump = lz.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    assert!(lz_jump > 0.5, "l_z jump {lz_jump}");
}

#[test]
fn offset_sweep_tracks_sign() {
    let seq = build_c7("C", C7Element::C7, 5000.0, PhaseDirection::Increment).unwrap();
    let grid: Vec<Vec<f64>> = (-20..=20).map(|i| vec![500.0 * i as f64]).collect();
    let rows = offset_sweep(&seq, &["C"], &grid).unwrap();
    for r in &rows {
        assert!((r.signed_omega_cw[0].abs() - r.rotations[0].omega_cw).abs() < 1e-9);
    }
    // the field passes through zero and changes sign across the sweep
    let first = rows.first().unwrap().signed_omega_cw[0];
    let last = rows.last().unwrap().signed_omega_cw[0];
    assert!(first * last < 0.0, "{first} {last}");
}

fn seg() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-5e3..5e3, 0.0..2e4, -PI..PI, 1e-6..2e-4)
}

proptest! {
    #[test]
    fn segment_matches_su2_oracle(s in seg()) {
        let q = Q::from_segment(s.0, s.1, s.2, s.3);
        let u = su2_oracle(s.0, s.1, s.2, s.3);
        prop_assert!(max_abs(&(q.to_su2() - &u)) < 1e-12);
        let back = Q::from_su2(&u);
        prop_assert!(close(&back, [q.a, q.b, q.c, q.d], 1e-12));
    }

    #[test]
    fn composition_is_a_homomorphism(s1 in seg(), s2 in seg()) {
        let (q1, q2) = (Q::from_segment(s1.0, s1.1, s1.2, s1.3), Q::from_segment(s2.0, s2.1, s2.2, s2.3));
        let prod = su2_oracle(s2.0, s2.1, s2.2, s2.3) * su2_oracle(s1.0, s1.1, s1.2, s1.3);
        prop_assert!(max_abs(&(compose(&q2, &q1).to_su2() - prod)) < 1e-12);
        prop_assert!((compose(&q2, &q1).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_matrix_matches_conjugation(s in seg()) {
        let q = Q::from_segment(s.0, s.1, s.2, s.3);
        let u = q.to_su2();
        let r = q.rotation_matrix();
        let i = ops();
        for j in 0..3 {
            let lhs = &u * &i[j] * u.adjoint();
            let mut rhs = OperatorMatrix::zeros(2, 2);
            for k in 0..3 {
                rhs += &i[k] * Complex64::new(r[k][j], 0.0);
            }
            prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
        }
    }

    #[test]
    fn effective_rotation_reproduces_period_quaternion(s1 in seg(), s2 in seg()) {
        let seq = PulseSequence::new("two").with_channel(
            "H",
            vec![PulseSegment::new(s1.3, s1.1, s1.2), PulseSegment::new(s2.3, s2.1, s2.2)],
        );
        let off = s1.0;
        let q = sequence_quaternion(&seq, "H", off).unwrap();
        let r = effective_rotation(&seq, "H", off).unwrap();
        prop_assert!(r.flip() >= 0.0 && r.flip() <= PI + 1e-12);
        let back = r.quaternion();
        let same = close(&back, [q.a, q.b, q.c, q.d], 1e-9) || close(&back.negated(), [q.a, q.b, q.c, q.d], 1e-9);
        prop_assert!(same);
    }
}
