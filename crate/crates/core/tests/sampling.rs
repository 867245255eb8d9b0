use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rddm_core::net::{NetConfig, NetInput};
use rddm_core::rddm::{ddpm_sample, rddm_sample, Model, ModelKind, SampleOptions};
use rddm_core::schedule::NoiseSchedule;

const LEN: usize = 64;

fn conds(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * LEN).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn perturbed(kind: ModelKind, steps: usize) -> Model {
    let sched = NoiseSchedule::linear(steps, 1e-4, 0.2).unwrap();
    let mut m = Model::new(kind, NetConfig::tiny(), sched, 16, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for net in m.nets_mut() {
        for v in net.params_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    m
}

fn rho_stub(inp: &NetInput<'_, f32>) -> Vec<f32> {
    inp.x.iter().zip(inp.cond).map(|(x, c)| 0.5 * x + 0.25 * c).collect()
}

fn eps_stub(inp: &NetInput<'_, f32>) -> Vec<f32> {
    inp.x.iter().zip(inp.cond).map(|(x, c)| (x - c).sin()).collect()
}

#[test]
fn single_step_matches_hand_computation() {
    let sched = NoiseSchedule::linear(1, 0.05, 0.05).unwrap();
    let c = conds(3, 1);
    let opts = SampleOptions {
        seed: 42,
        first_window: 5,
        ..Default::default()
    };
    let got = rddm_sample(&eps_stub, &rho_stub, &sched, &c, LEN, opts).unwrap();
    let got_ddpm = ddpm_sample(&eps_stub, &sched, &c, LEN, opts).unwrap();
    let alpha: f64 = 1.0 - 0.05;
    let c1 = 1.0 / alpha.sqrt();
    let c2 = 0.05 / (1.0 - alpha).sqrt();
    for w in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(5 + w as u64);
        for i in 0..LEN {
            let x1 = rng.sample::<f64, _>(StandardNormal) as f32;
            let cond = c[w * LEN + i];
            let xp = 0.5 * x1 + 0.25 * cond;
            let want = c1 * (xp as f64 - c2 * (xp - cond).sin() as f64);
            assert_eq!(got[w * LEN + i], want as f32);
            let want_ddpm = c1 * (x1 as f64 - c2 * (x1 - cond).sin() as f64);
            assert_eq!(got_ddpm[w * LEN + i], want_ddpm as f32);
        }
    }
}

#[test]
fn sampling_counts_network_calls() {
    let c = conds(3, 2);
    for (kind, per_step) in [(ModelKind::Rddm, 2), (ModelKind::Ddpm, 1)] {
        let m = perturbed(kind, 10);
        assert_eq!(m.nets_per_step(), per_step);
        m.reset_calls();
        m.sample(&c, LEN, SampleOptions::default()).unwrap();
        assert_eq!(m.net_calls(), per_step * 10 * 3);
        m.reset_calls();
        m.sample(&c, LEN, SampleOptions { steps: 4, ..Default::default() }).unwrap();
        assert_eq!(m.net_calls(), per_step * 4 * 3);
    }
}

#[test]
fn sampling_is_deterministic_and_chunk_invariant() {
    let c = conds(5, 3);
    for kind in [ModelKind::Rddm, ModelKind::Ddpm] {
        let m = perturbed(kind, 10);
        let opts = SampleOptions { seed: 8, ..Default::default() };
        let a = m.sample(&c, LEN, opts).unwrap();
        let b = m.sample(&c, LEN, opts).unwrap();
        assert_eq!(a, b);
        let one = m.sample(&c, LEN, SampleOptions { chunk: 1, ..opts }).unwrap();
        let two = m.sample(&c, LEN, SampleOptions { chunk: 2, ..opts }).unwrap();
        assert_eq!(a, one);
        assert_eq!(a, two);
        // windows can be generated piecewise by shifting the stream
        let tail = m
            .sample(&c[3 * LEN..], LEN, SampleOptions { first_window: 3, ..opts })
            .unwrap();
        assert_eq!(&a[3 * LEN..], &tail[..]);
        let other = m.sample(&c, LEN, SampleOptions { seed: 9, ..opts }).unwrap();
        assert_ne!(a, other);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn sampling_rejects_bad_conditions() {
    let m = perturbed(ModelKind::Rddm, 10);
    assert!(m.sample(&conds(1, 0)[..60], LEN, SampleOptions::default()).is_err());
    let mut c = conds(1, 0);
    c[3] = f32::INFINITY;
    assert!(m.sample(&c, LEN, SampleOptions::default()).is_err());
}
