use std::f64::consts::{FRAC_PI_2, PI};

use mas_aht::powder::*;
use mas_aht::tensor::{EulerAngles, InteractionTensor};

fn p2(beta: f64) -> f64 {
    (3.0 * beta.cos().powi(2) - 1.0) / 2.0
}

#[test]
fn zcw_weights_and_second_moment() {
    for n in [21, 89, 233] {
        let set = CrystalliteSet::zcw(n);
        assert!(set.len() >= n);
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sphere_moment(&set, p2).abs() < 0.01, "{}", set.name);
        assert!(set.angles.iter().all(|a| a.beta >= 0.0 && a.beta <= PI));
    }
}

#[test]
fn gamma_expansion_keeps_normalisation() {
    let set = CrystalliteSet::zcw(55).with_gamma(7);
    assert_eq!(set.len(), 55 * 7);
    assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(set.name, "zcw55x7");
}

#[test]
fn constant_observable_averages_to_itself() {
    let set = CrystalliteSet::default_powder();
    assert!((set.average(|_| 0.731) - 0.731).abs() < 1e-14);
}

#[test]
fn average_is_order_independent() {
    let set = CrystalliteSet::zcw(144).with_gamma(3);
    let f = |a: &EulerAngles<f64>| (a.alpha + 2.0 * a.beta).sin() * a.gamma.cos() + p2(a.beta);
    let mut idx: Vec<usize> = (0..set.len()).collect();
    // deterministic shuffle
    idx.sort_by_key(|i| (i * 7919) % set.len());
    let shuffled = CrystalliteSet::new(
        "shuffled",
        idx.iter().map(|&i| set.angles[i]).collect(),
        idx.iter().map(|&i| set.weights[i]).collect(),
    )
    .unwrap();
    assert!((set.average(f) - shuffled.average(f)).abs() < 1e-14);
}

#[test]
fn single_cell_grid() {
    let g = CrystalliteSet::grid(1, 1, 1);
    assert_eq!(g.len(), 1);
    let a = g.angles[0];
    assert_eq!((a.alpha, a.gamma), (0.0, 0.0));
    assert!((a.beta - FRAC_PI_2).abs() < 1e-15);
    assert_eq!(g.weights, vec![1.0]);
}

#[test]
fn named_sets() {
    assert_eq!(CrystalliteSet::by_name("zcw89x5").unwrap().len(), 445);
    assert_eq!(CrystalliteSet::by_name("grid4x3x2").unwrap().len(), 24);
    assert_eq!(CrystalliteSet::by_name("rep66").unwrap().angles, CrystalliteSet::zcw(66).angles);
    assert_eq!(CrystalliteSet::by_name("single").unwrap().len(), 1);
    assert!(CrystalliteSet::by_name("lebedev").is_none());
}

#[test]
fn text_sets() {
    let set = CrystalliteSet::from_text("t", "# alpha beta gamma weight\n0 90 0 1\n90 45 0 3\n").unwrap();
    assert_eq!(set.len(), 2);
    assert!((set.weights[1] - 0.75).abs() < 1e-15);
    assert!((set.angles[1].beta - PI / 4.0).abs() < 1e-15);
    assert!(matches!(CrystalliteSet::from_text("t", "1\n"), Err(PowderError::Parse { line: 1, .. })));
    assert!(matches!(CrystalliteSet::from_text("t", "0 0 0 -1\n"), Err(PowderError::BadWeights)));
    assert!(matches!(CrystalliteSet::from_text("t", "# nothing\n"), Err(PowderError::Empty)));
}

#[test]
fn curve_average_weights_each_point() {
    let set = CrystalliteSet::new("two", vec![EulerAngles::zero(), EulerAngles::new(0.0, 1.0, 0.0)], vec![1.0, 3.0]).unwrap();
    let avg = powder_average(&set, |a| Ok::<_, ()>(vec![a.beta, 2.0 * a.beta])).unwrap();
    assert!((avg[0] - 0.75).abs() < 1e-15 && (avg[1] - 1.5).abs() < 1e-15);
}

#[test]
fn recoupled_strength_vanishes_when_pulses_meet() {
    let dip = InteractionTensor::dipolar(0, 1, -2142.0, EulerAngles::zero());
    let nu_r = 10e3;
    let tr = 1.0 / nu_r;
    let set = CrystalliteSet::zcw(89).with_gamma(4);
    let shifts = [-tr / 2.0, -tr / 4.0, 0.0, tr / 4.0, tr / 2.0];
    let prof = recoupled_strength_profile(&set, &dip, 6000.0, nu_r, &shifts, mas_aht::tensor::magic_angle()).unwrap();
    assert!((prof[2] - 1.0).abs() < 1e-12);
    assert!(prof[0].abs() < 1e-6 && prof[4].abs() < 1e-6, "{prof:?}");
    assert!((prof[1] - prof[3]).abs() < 1e-6, "symmetric in the shift");
    assert!(prof[1] > 0.0);
}
