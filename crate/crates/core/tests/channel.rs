mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use uegroup::channel::{
    compute_multipath, prb_frequencies, prsg_frequencies, synthesize_ctf, ArrayConfig, MultipathComponent,
};
use uegroup::scene::{generate_trajectory, Pattern, ScenarioConfig};

fn path(delay: f64, az: f64, el: f64, amp: Complex64) -> MultipathComponent {
    MultipathComponent {
        delay,
        azimuth: az,
        elevation: el,
        amplitude_per_layer: vec![amp, amp * 0.5],
    }
}

#[test]
fn matches_direct_summation_for_five_paths() {
    let array = ArrayConfig::default();
    let mut rng = common::rng(11);
    let mpcs: Vec<_> = (0..5)
        .map(|_| {
            let mut p = common::random_multipath(&mut rng, 2).remove(0);
            p.delay = 1e-7;
            p
        })
        .collect();
    let freqs = prb_frequencies();
    let ctf = synthesize_ctf(&mpcs, &array, &freqs).unwrap();
    let oracle = common::naive_ctf(&mpcs, &array, &freqs);
    assert_eq!(ctf.values.dim(), (128, 273));
    assert!(common::frobenius_rel_err(&ctf.values, &oracle) <= 1e-12);
}

#[test]
fn two_path_ripple_period_is_inverse_delay_difference() {
    let array = ArrayConfig::default();
    let a = Complex64::new(1.0, 0.0);
    let mpcs = vec![path(0.0, 0.0, 0.0, a), path(1e-7, 0.0, 0.0, a)];
    // 100 ns apart: |H| vanishes every 10 MHz, peaks in between
    let freqs: Vec<f64> = (0..=40).map(|k| -50e6 + k as f64 * 2.5e6).collect();
    let ctf = synthesize_ctf(&mpcs, &array, &freqs).unwrap();
    let row = ctf.values.row(0);
    let peak = row.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for (k, &f) in freqs.iter().enumerate() {
        let cycles = f * 1e-7;
        let frac = cycles - cycles.floor();
        if (frac - 0.5).abs() < 1e-9 {
            assert!(row[k].norm() < 1e-3 * peak, "f={f}: {}", row[k].norm());
        }
        if frac.abs() < 1e-9 || (frac - 1.0).abs() < 1e-9 {
            assert!(row[k].norm() > 0.9 * peak, "f={f}");
        }
    }
}

#[test]
fn synthesis_is_linear_in_the_path_set() {
    let array = ArrayConfig::default();
    let mut rng = common::rng(3);
    let a = common::random_multipath(&mut rng, 2);
    let b = common::random_multipath(&mut rng, 2);
    let freqs = prsg_frequencies();
    let ha = synthesize_ctf(&a, &array, &freqs).unwrap().values;
    let hb = synthesize_ctf(&b, &array, &freqs).unwrap().values;
    let both: Vec<_> = a.iter().chain(&b).cloned().collect();
    let hab = synthesize_ctf(&both, &array, &freqs).unwrap().values;
    assert!(common::frobenius_rel_err(&(&ha + &hb), &hab) < 1e-12);

    let scaled: Vec<_> = a
        .iter()
        .map(|p| MultipathComponent {
            amplitude_per_layer: p.amplitude_per_layer.iter().map(|z| z * 3.0).collect(),
            ..p.clone()
        })
        .collect();
    let hs = synthesize_ctf(&scaled, &array, &freqs).unwrap().values;
    assert!(common::frobenius_rel_err(&(&ha * Complex64::new(3.0, 0.0)), &hs) < 1e-12);
}

#[test]
fn extra_delay_multiplies_by_a_linear_phase() {
    let array = ArrayConfig::default();
    let mut rng = common::rng(5);
    let a = common::random_multipath(&mut rng, 2);
    let shift = 37e-9;
    let shifted: Vec<_> = a
        .iter()
        .map(|p| MultipathComponent {
            delay: p.delay + shift,
            ..p.clone()
        })
        .collect();
    let freqs = prsg_frequencies();
    let h = synthesize_ctf(&a, &array, &freqs).unwrap().values;
    let hs = synthesize_ctf(&shifted, &array, &freqs).unwrap().values;
    let mut expected = h.clone();
    for (mut col, &f) in expected.columns_mut().into_iter().zip(&freqs) {
        col *= Complex64::from_polar(1.0, -2.0 * PI * f * shift);
    }
    assert!(common::frobenius_rel_err(&expected, &hs) < 1e-12);
}

#[test]
fn polarization_groups_carry_identical_rows() {
    let array = ArrayConfig::default();
    let mut rng = common::rng(8);
    let ctf = synthesize_ctf(&common::random_multipath(&mut rng, 2), &array, &prsg_frequencies()).unwrap();
    for layer in 0..2 {
        for b in 0..32 {
            assert_eq!(ctf.values.row(layer * 64 + b), ctf.values.row(layer * 64 + 32 + b));
        }
    }
}

#[test]
fn scene_channel_varies_with_heading_only_through_the_ue_antenna() {
    let scene = ScenarioConfig::los();
    let array = ArrayConfig::default();
    let lap = generate_trajectory(&scene, Pattern::Clockwise).unwrap();
    let pose = lap.poses[500];
    let turned = uegroup::scene::Pose {
        heading: uegroup::wrap_degrees(pose.heading + 180.0),
        ..pose
    };
    let a = compute_multipath(&pose, &scene, &array).unwrap();
    let b = compute_multipath(&turned, &scene, &array).unwrap();
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!((p.delay, p.azimuth, p.elevation), (q.delay, q.azimuth, q.elevation));
        assert!(p.amplitude_per_layer != q.amplitude_per_layer);
    }
}
