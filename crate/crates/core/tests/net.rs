use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rddm_core::net::{sinusoidal_embed, Denoiser, LossEval, NetConfig, NetInput};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k + cout
}

fn norm(c: usize) -> usize {
    2 * c
}

fn res(cin: usize, cout: usize, temb: Option<usize>) -> usize {
    norm(cin)
        + conv(cin, cout, 3)
        + temb.map_or(0, |e| conv(e, cout, 1))
        + norm(cout)
        + conv(cout, cout, 3)
        + if cin == cout { 0 } else { conv(cin, cout, 1) }
}

fn attn(c: usize) -> usize {
    2 * norm(c) + 4 * conv(c, c, 1)
}

/// Parameter count written out layer by layer.
fn expected_params(cfg: &NetConfig) -> usize {
    let e = cfg.embed_dim;
    let d = cfg.depth;
    let ch = |s: usize| cfg.base_channels * cfg.channel_multipliers[s];
    let has_attn = |s: usize| cfg.attention_stages.contains(&s);
    let mut n = 2 * conv(e, e, 1);
    // condition encoder
    n += conv(1, ch(0), 3);
    let mut prev = ch(0);
    for s in 0..d {
        n += res(prev, ch(s), None);
        if s + 1 < d {
            n += conv(ch(s), ch(s), 3);
        }
        prev = ch(s);
    }
    // down path
    n += conv(1, ch(0), 3);
    prev = ch(0);
    for s in 0..d {
        n += res(prev, ch(s), Some(e));
        if has_attn(s) {
            n += attn(ch(s));
        }
        if s + 1 < d {
            n += conv(ch(s), ch(s), 3);
        }
        prev = ch(s);
    }
    n += res(ch(d - 1), ch(d - 1), Some(e));
    for s in 0..d {
        n += res(2 * ch(s), ch(s), Some(e));
        if has_attn(s) {
            n += attn(ch(s));
        }
        if s > 0 {
            n += conv(ch(s), ch(s - 1), 3);
        }
    }
    n + norm(ch(0)) + conv(ch(0), 1, 3)
}

fn config(depth: usize, base: usize, attention: Vec<usize>) -> NetConfig {
    NetConfig {
        depth,
        base_channels: base,
        channel_multipliers: (0..depth).map(|s| 1 << s).collect(),
        attention_stages: attention,
        embed_dim: 32,
    }
}

fn input(rng: &mut ChaCha8Rng, b: usize, len: usize) -> (Vec<f32>, Vec<f32>, Vec<usize>) {
    let x = (0..b * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = (0..b * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = (0..b).map(|_| rng.random_range(1..=10)).collect();
    (x, c, t)
}

#[test]
fn parameter_count_matches_closed_form() {
    let configs = [
        NetConfig::tiny(),
        NetConfig::desk(),
        NetConfig::full(),
        config(2, 16, vec![]),
        config(4, 8, vec![0, 3]),
    ];
    for cfg in configs {
        let net = Denoiser::<f32>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net.param_count(), expected_params(&cfg), "{cfg:?}");
        assert_eq!(cfg.param_count().unwrap(), expected_params(&cfg));
        assert!(net.params().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(config(0, 8, vec![]).validate().is_err());
    assert!(config(2, 12, vec![]).validate().is_err());
    assert!(config(2, 8, vec![2]).validate().is_err());
    let mut odd = NetConfig::tiny();
    odd.embed_dim = 15;
    assert!(odd.validate().is_err());
    assert!(NetConfig::desk().check_len(510).is_err());
}

#[test]
fn fresh_net_predicts_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Denoiser::<f32>::new(NetConfig::desk(), &mut rng).unwrap();
    let (x, c, t) = input(&mut rng, 2, 512);
    let out = net.forward(&NetInput { x: &x, cond: &c, t: &t, len: 512 }).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn output_shape_follows_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for depth in 2..=4 {
        let mut net = Denoiser::<f32>::new(config(depth, 8, vec![depth - 1]), &mut rng).unwrap();
        for v in net.params_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
        for b in [1, 3] {
            let (x, c, t) = input(&mut rng, b, 512);
            let out = net.forward(&NetInput { x: &x, cond: &c, t: &t, len: 512 }).unwrap();
            assert_eq!(out.len(), b * 512);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn forward_is_bitwise_reproducible() {
    let make = || Denoiser::<f32>::new(NetConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (mut a, b) = (make(), make());
    assert_eq!(a.params(), b.params());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in a.params_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let (x, c, t) = input(&mut rng, 4, 128);
    let inp = NetInput { x: &x, cond: &c, t: &t, len: 128 };
    let first = a.forward(&inp).unwrap();
    let second = a.forward(&inp).unwrap();
    assert!(first.iter().zip(&second).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(a.calls(), 8);
}

#[test]
fn bad_inputs_are_rejected() {
    let net = Denoiser::<f32>::new(NetConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = vec![0f32; 128];
    assert!(net.forward(&NetInput { x: &x, cond: &x[..64], t: &[1, 1], len: 64 }).is_err());
    assert!(net.forward(&NetInput { x: &x[..63], cond: &x[..63], t: &[1], len: 63 }).is_err());
    let mut bad = x.clone();
    bad[5] = f32::NAN;
    assert!(net.forward(&NetInput { x: &bad, cond: &x, t: &[1, 1], len: 64 }).is_err());
}

fn probe_input() -> (Denoiser<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = Denoiser::<f64>::new(NetConfig::tiny(), &mut rng).unwrap();
    for v in net.params_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let x = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x, c)
}

#[test]
fn constant_loss_has_zero_gradient() {
    let (net, x, c) = probe_input();
    let inp = NetInput { x: &x, cond: &c, t: &[2, 9], len: 64 };
    let (value, grad) = net
        .loss_gradient(&inp, |out, _| LossEval {
            value: 3.5,
            d_output: vec![0.0; out.len()],
            d_params: None,
        })
        .unwrap();
    assert_eq!(value, 3.5);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn quadratic_probe_gradient_is_params() {
    let (net, x, c) = probe_input();
    let inp = NetInput { x: &x, cond: &c, t: &[2, 9], len: 64 };
    let (value, grad) = net
        .loss_gradient(&inp, |out, p| LossEval {
            value: p.iter().map(|v| v * v).sum::<f64>() / 2.0,
            d_output: vec![0.0; out.len()],
            d_params: Some(p.to_vec()),
        })
        .unwrap();
    assert_eq!(grad, net.params());
    assert!((value - net.params().iter().map(|v| v * v).sum::<f64>() / 2.0).abs() < 1e-12);
}

#[test]
fn timestep_embedding() {
    let e0 = sinusoidal_embed(0.0, 16).unwrap();
    for k in 0..8 {
        assert_eq!(e0[2 * k], 0.0);
        assert_eq!(e0[2 * k + 1], 1.0);
    }
    assert_eq!(sinusoidal_embed(1.0, 2).unwrap(), vec![1f64.sin(), 1f64.cos()]);
    for t in [0.5, 3.0, 10.0, 977.0] {
        let e = sinusoidal_embed(t, 64).unwrap();
        let sq: f64 = e.iter().map(|v| v * v).sum();
        assert!((sq - 32.0).abs() < 1e-12, "t={t}: {sq}");
        for k in 0..32 {
            let freq = 10000f64.powf(-(2.0 * k as f64) / 64.0);
            assert!((e[2 * k] - (t * freq).sin()).abs() < 1e-15);
        }
    }
    assert!(sinusoidal_embed(1.0, 7).is_err());
}
