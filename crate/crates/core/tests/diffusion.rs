use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rddm_core::net::{Denoiser, NetConfig, NetInput};
use rddm_core::qrs::{build_roi_mask, RPeakSet, RoiMask};
use rddm_core::rddm::{ddpm_loss, rddm_loss, DiffusionBatch, TrainingExample};
use rddm_core::schedule::NoiseSchedule;
use rddm_core::synth::{make_dataset, DatasetRanges};

fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(10, 1e-4, 0.2).unwrap()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn examples(n: usize, seed: u64) -> Vec<TrainingExample> {
    make_dataset(n, &DatasetRanges::default(), seed)
        .unwrap()
        .iter()
        .map(|p| TrainingExample::from_window(&p.windows[0], 32).unwrap())
        .collect()
}

#[test]
fn forward_sample_moments_match_closed_form() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let draws = 100_000usize;
    for t in 1..=sched.steps() {
        let ab = sched.alpha_bar(t);
        let (a, var) = (ab.sqrt(), 1.0 - ab);
        // standardized residuals pooled over coordinates and draws
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut per_coord = vec![0.0; x0.len()];
        for _ in 0..draws {
            let eps = normals(&mut rng, x0.len());
            let st = sched.forward_sample(&x0, t, &eps).unwrap();
            for (i, (&x, &m)) in st.x_t.iter().zip(&x0).enumerate() {
                let z = (x - a * m) / var.sqrt();
                s1 += z;
                s2 += z * z;
                per_coord[i] += x;
            }
        }
        let n = (draws * x0.len()) as f64;
        let mean = s1 / n;
        let v = s2 / n - mean * mean;
        assert!(mean.abs() < 3.0 / n.sqrt(), "t={t}: pooled mean {mean}");
        assert!((v - 1.0).abs() < 3.0 * (2.0 / (n - 1.0)).sqrt(), "t={t}: pooled variance {v}");
        for (i, s) in per_coord.iter().enumerate() {
            let m = s / draws as f64;
            let se = (var / draws as f64).sqrt();
            assert!((m - a * x0[i]).abs() < 4.0 * se, "t={t} coord {i}: mean {m} vs {}", a * x0[i]);
        }
    }
}

#[test]
fn last_step_noising_is_strong() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let eps = normals(&mut rng, 512);
        for v in sched.forward_sample(&x0, 10, &eps).unwrap().x_t {
            s1 += v;
            s2 += v * v;
            n += 1.0;
        }
    }
    let var = s2 / n - (s1 / n).powi(2);
    let expected = (1.0 - sched.alpha_bar(10)) + sched.alpha_bar(10) * x0.iter().map(|v| v * v).sum::<f64>() / 512.0
        - sched.alpha_bar(10) * (x0.iter().sum::<f64>() / 512.0).powi(2);
    assert!((var - expected).abs() < 0.02, "{var} vs {expected}");
    assert!(var >= 0.6);
}

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> RoiMask {
    let k = rng.random_range(0..6);
    let mut peaks: Vec<usize> = (0..k).map(|_| rng.random_range(0..len)).collect();
    peaks.sort_unstable();
    peaks.dedup();
    let gamma = 2 * rng.random_range(1..24);
    build_roi_mask(&RPeakSet::new(peaks, 128.0).unwrap(), len, gamma).unwrap()
}

#[test]
fn roi_forward_is_exact_outside_the_mask() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let len = 512;
        let x0: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = normals(&mut rng, len);
        let t = rng.random_range(1..=10);
        let mask = random_mask(&mut rng, len);
        let roi = sched.roi_forward_sample(&x0, t, &eps, &mask).unwrap();
        let full = sched.forward_sample(&x0, t, &eps).unwrap();
        let a = sched.alpha_bar(t).sqrt();
        for i in 0..len {
            if mask.bits()[i] == 0 {
                assert_eq!(roi.x_t[i].to_bits(), (a * x0[i]).to_bits());
            } else {
                assert_eq!(roi.x_t[i].to_bits(), full.x_t[i].to_bits());
            }
        }
    }
}

#[test]
fn centred_mask_perturbs_exactly_33_coordinates() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps = normals(&mut rng, 512);
    let mask = build_roi_mask(&RPeakSet::new(vec![256], 128.0).unwrap(), 512, 32).unwrap();
    let roi = sched.roi_forward_sample(&x0, 6, &eps, &mask).unwrap();
    let a = sched.alpha_bar(6).sqrt();
    let changed = roi.x_t.iter().zip(&x0).filter(|(v, x)| **v != a * **x).count();
    assert_eq!(changed, 33);
}

#[test]
fn oracle_denoisers_give_zero_loss() {
    let sched = default_schedule();
    let ex = examples(8, 3);
    let refs: Vec<&TrainingExample> = ex.iter().collect();
    for seed in 0..5 {
        let b: DiffusionBatch<f64> = DiffusionBatch::draw(&refs, &sched, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let eps_target = b.masked_noise();
        let x_m = b.roi_noised(&sched);
        let eps_stub = |_: &NetInput<'_, f64>| eps_target.clone();
        let rho_stub = |_: &NetInput<'_, f64>| x_m.clone();
        let terms = rddm_loss(&eps_stub, &rho_stub, &sched, &b).unwrap();
        let total = terms.total(Default::default());
        assert!(total.abs() <= 1e-10, "loss_total {total}");
        let ddpm_stub = |_: &NetInput<'_, f64>| b.eps.clone();
        assert!(ddpm_loss(&ddpm_stub, &sched, &b).unwrap().abs() <= 1e-10);
    }
}

#[test]
fn zero_initialized_nets_see_masked_noise_energy() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps_theta = Denoiser::<f32>::new(NetConfig::tiny(), &mut rng).unwrap();
    let rho_phi = Denoiser::<f32>::new(NetConfig::tiny(), &mut rng).unwrap();
    let ex = examples(8, 4);
    let refs: Vec<&TrainingExample> = ex.iter().collect();
    let pop: f64 = ex.iter().map(|e| e.mask.iter().sum::<f64>()).sum();
    let draws = 40;
    let (mut roi, mut ddpm) = (0.0, 0.0);
    for _ in 0..draws {
        let b: DiffusionBatch<f32> = DiffusionBatch::draw(&refs, &sched, &mut rng).unwrap();
        roi += rddm_loss(&eps_theta, &rho_phi, &sched, &b).unwrap().roi;
        ddpm += ddpm_loss(&eps_theta, &sched, &b).unwrap();
    }
    let coords = (draws * refs.len() * 512) as f64;
    roi /= draws as f64;
    ddpm /= draws as f64;
    // each masked coordinate contributes eps^2, which has mean 1 and variance 2
    let expected = pop / (refs.len() * 512) as f64;
    let se = (2.0 * pop * draws as f64).sqrt() / coords;
    assert!((roi - expected).abs() < 4.0 * se, "roi {roi} vs {expected} (se {se})");
    assert!((ddpm - 1.0).abs() < 4.0 * (2.0 / coords).sqrt(), "ddpm {ddpm}");
}

#[test]
fn full_mask_reduces_rddm_to_ddpm() {
    let sched = default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut net = Denoiser::<f32>::new(NetConfig::tiny(), &mut rng).unwrap();
    for v in net.params_mut() {
        *v += rng.random_range(-0.02..0.02);
    }
    let mut ex = examples(4, 5);
    for e in &mut ex {
        e.mask = vec![1.0; 512];
    }
    let refs: Vec<&TrainingExample> = ex.iter().collect();
    let b: DiffusionBatch<f32> = DiffusionBatch::draw(&refs, &sched, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let terms = rddm_loss(&net, &net, &sched, &b).unwrap();
    assert_eq!(terms.roi, ddpm_loss(&net, &sched, &b).unwrap());
}

proptest! {
    #[test]
    fn schedule_tables_are_consistent(steps in 1usize..60, lo in 1e-5f64..1e-2, span in 0.0f64..0.5) {
        let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        let mut prev = 1.0;
        for t in 1..=steps {
            prop_assert!((s.alpha_bar(t) - prev * s.alpha(t)).abs() < 1e-12);
            prop_assert!(s.alpha_bar(t) < prev);
            prop_assert!((s.sigma(t) - s.beta(t).sqrt()).abs() < 1e-15);
            prev = s.alpha_bar(t);
        }
    }

    #[test]
    fn respaced_schedule_keeps_noise_range(steps in 1usize..60) {
        let s = NoiseSchedule::linear(10, 1e-4, 0.2).unwrap();
        let r = s.respaced(steps).unwrap();
        prop_assert_eq!(r.steps(), steps);
        prop_assert!((r.alpha_bar(steps) - s.alpha_bar(10)).abs() < 1e-12);
        let map = r.timestep_map(&s);
        prop_assert_eq!(map.len(), steps);
        prop_assert!(map.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*map.last().unwrap(), 10);
    }
}
