use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rddm_core::dsp::Signal;
use rddm_core::metrics::{evaluate, frechet_distance, hr_mae, rmse};
use rddm_core::synth::{gen_ecg, SynthSpec};
use rddm_core::Error;

/// Minimum over every monotone coupling path of the largest point distance,
/// by exhaustive enumeration.
fn brute_frechet(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, worst: f64, best: &mut f64) {
        let w = worst.max((a[i] - b[j]).abs());
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(w);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, w, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, w, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, w, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn frechet_dp_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(frechet_distance(&a, &b).unwrap(), brute_frechet(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn frechet_three_point_example() {
    assert_eq!(frechet_distance(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(brute_frechet(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 1.0);
}

#[test]
fn rmse_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let a: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ss = 0.0;
        for i in 0..512 {
            ss += (a[i] - b[i]).powi(2);
        }
        assert!((rmse(&a, &b).unwrap() - (ss / 512.0).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn evaluate_averages_per_window() {
    let a = vec![0.0; 1024];
    let mut b = vec![0.0; 1024];
    b[..512].fill(1.0);
    let r = evaluate(&a, &b, 512).unwrap();
    assert_eq!(r.n_windows, 2);
    assert!((r.rmse - 0.5).abs() < 1e-12);
    assert!((r.fd - 0.5).abs() < 1e-12);
    assert!(evaluate(&a, &b[..1000], 512).is_err());
}

fn clean_ecg(hr: f64, seed: u64) -> Signal {
    gen_ecg(&SynthSpec {
        hr_bpm: hr,
        duration_s: 8.0,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
    .0
}

#[test]
fn hr_mae_on_clean_copies_is_small() {
    let hrs = [55.0, 64.0, 72.0, 90.0, 110.0];
    let ecgs: Vec<Signal> = hrs.iter().enumerate().map(|(i, &h)| clean_ecg(h, i as u64)).collect();
    let r = hr_mae(&ecgs, &hrs).unwrap();
    assert!(r.mae < 1.0, "{r:?}");
    assert_eq!((r.scored, r.skipped), (5, 0));
}

#[test]
fn hr_mae_arithmetic() {
    let ecgs: Vec<Signal> = (0..10).map(|i| clean_ecg(60.0, i)).collect();
    let est: Vec<f64> = ecgs.iter().map(|e| rddm_core::qrs::estimate_hr(e).unwrap()).collect();
    assert_eq!(hr_mae(&ecgs, &est).unwrap().mae, 0.0);
    let mut off = est.clone();
    off[3] += 10.0;
    assert!((hr_mae(&ecgs, &off).unwrap().mae - 1.0).abs() < 1e-12);
}

#[test]
fn hr_mae_skips_flat_windows() {
    let flat = Signal::ecg(vec![0.0; 1024], 128.0).unwrap();
    let r = hr_mae(&[clean_ecg(60.0, 1), flat.clone()], &[60.0, 60.0]).unwrap();
    assert_eq!((r.scored, r.skipped), (1, 1));
    assert!(matches!(hr_mae(&[flat], &[60.0]), Err(Error::NoValidWindows { skipped: 1 })));
}

fn curve(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..max_len)
}

proptest! {
    #[test]
    fn frechet_is_a_symmetric_bounded_distance(a in curve(24), b in curve(24)) {
        let d = frechet_distance(&a, &b).unwrap();
        prop_assert_eq!(d, frechet_distance(&b, &a).unwrap());
        prop_assert!(d >= 0.0);
        prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let ends = (a[0] - b[0]).abs().max((a[a.len() - 1] - b[b.len() - 1]).abs());
        prop_assert!(d >= ends);
    }

    #[test]
    fn frechet_never_exceeds_pointwise_gap(pairs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(frechet_distance(&a, &b).unwrap() <= gap);
    }

    #[test]
    fn rmse_sits_between_mae_and_max_gap(pairs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..64)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&a, &b).unwrap();
        prop_assert_eq!(r, rmse(&b, &a).unwrap());
        let gaps: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        let mae = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let max = gaps.iter().copied().fold(0.0, f64::max);
        prop_assert!(r <= max + 1e-12);
        prop_assert!(r + 1e-12 >= mae);
    }
}
