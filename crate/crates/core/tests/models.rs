use earthgan::grid::prep::rotate_lon_tensor;
use earthgan::models::checkpoint::{read_container, write_container};
use earthgan::models::{
    build_generator, condition_tensor, count_params, deserialize_generator, serialize_generator,
    Checkpoint, Critic, CriticConfig, Generator, GeneratorConfig, NoiseMode,
};
use earthgan::{rng, Error, Tensor};

fn uniform(seed: u64, shape: &[usize]) -> Tensor<f32> {
    rng::uniform_tensor(seed, 7, 0, shape)
}

#[test]
fn paper_scale_shape() {
    let g = Generator::<f32>::new(GeneratorConfig::default(), 0).unwrap();
    let y = g.forward(&uniform(1, &[4, 30, 20, 10]), NoiseMode::Zero).unwrap();
    assert_eq!(y.shape(), &[4, 198, 118, 38]);
    assert!(y.all_finite());
}

#[test]
fn shape_law_small_extents() {
    let g = Generator::<f32>::new(GeneratorConfig::micro(), 0).unwrap();
    for n in [7, 8, 10] {
        let y = g.forward(&uniform(n as u64, &[4, n, n, n]), NoiseMode::Zero).unwrap();
        assert_eq!(y.shape(), &[4, 8 * n - 42, 8 * n - 42, 8 * n - 42]);
    }
    let y = g.forward(&uniform(2, &[4, 7, 8, 10]), NoiseMode::Zero).unwrap();
    assert_eq!(y.shape(), &[4, 14, 22, 38]);
    assert!(g.forward(&uniform(3, &[4, 6, 8, 8]), NoiseMode::Zero).is_err());
    assert!(g.forward(&uniform(3, &[3, 8, 8, 8]), NoiseMode::Zero).is_err());
}

#[test]
fn zero_noise_is_pure() {
    let g = Generator::<f32>::new(GeneratorConfig::micro(), 4).unwrap();
    let x = uniform(5, &[4, 8, 8, 8]);
    let a = g.forward(&x, NoiseMode::Zero).unwrap();
    let b = g.forward(&x, NoiseMode::Zero).unwrap();
    assert_eq!(a.data(), b.data());
    // scales start at zero, so the seed cannot matter yet
    let c = g.forward(&x, NoiseMode::Seeded(11)).unwrap();
    assert_eq!(a.data(), c.data());
}

#[test]
fn seeded_noise_reproducible() {
    let mut g = Generator::<f32>::new(GeneratorConfig::micro(), 4).unwrap();
    for name in g.params.names().to_vec() {
        if name.ends_with(".noise") {
            let t = g.params.get(&name).unwrap().map(|_| 0.1);
            g.params.set(&name, t).unwrap();
        }
    }
    let x = uniform(5, &[4, 8, 8, 8]);
    let a = g.forward(&x, NoiseMode::Seeded(1)).unwrap();
    let b = g.forward(&x, NoiseMode::Seeded(1)).unwrap();
    let c = g.forward(&x, NoiseMode::Seeded(2)).unwrap();
    let z = g.forward(&x, NoiseMode::Zero).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(a.max_abs_diff(&c).unwrap() > 0.0);
    assert!(a.max_abs_diff(&z).unwrap() > 0.0);
    let mut off = g.config.clone();
    off.noise_enabled = false;
    let quiet = Generator {
        config: off,
        params: g.params.clone(),
    };
    assert_eq!(quiet.forward(&x, NoiseMode::Seeded(1)).unwrap().data(), z.data());
}

/// Columns per side of the output touched by edge clamping of the ×2
/// resizes: the main path grows 0→1→3→7 across the three upsamples and the
/// skip path never exceeds it after cropping.
const CLAMPED: usize = 7;

#[test]
fn translation_consistent_along_longitude() {
    let g = Generator::<f32>::new(GeneratorConfig::micro(), 9).unwrap();
    let globe = uniform(3, &[4, 8, 8, 32]);
    let window = |t: &Tensor<f32>| t.crop(&[0, 0, 0, 4], &[4, 8, 8, 10]).unwrap();
    let a = g.forward(&window(&globe), NoiseMode::Zero).unwrap();
    // rotating by −1 column moves column 5 to position 4
    let b = g
        .forward(&window(&rotate_lon_tensor(&globe, -1)), NoiseMode::Zero)
        .unwrap();
    let m = 38;
    let mut checked = 0;
    for j in CLAMPED..m - CLAMPED {
        let ja = j + 8;
        if ja >= m - CLAMPED {
            continue;
        }
        for c in 0..4 {
            for r in 0..22 {
                for y in 0..22 {
                    let d = (a.at4(c, r, y, ja) - b.at4(c, r, y, j)).abs();
                    assert!(d <= 1e-4, "column {j}: {d}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 16 * 4 * 22 * 22);
}

/// Independent separable linear interpolation with half-voxel alignment.
fn interp_weights(n_in: usize, factor: usize, i: usize) -> Vec<(usize, f64)> {
    let src = (i as f64 + 0.5) / factor as f64 - 0.5;
    let src = src.clamp(0.0, (n_in - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    let t = src - lo as f64;
    vec![(lo, 1.0 - t), (hi, t)]
}

#[test]
fn condition_matches_interpolation_oracle() {
    let x: Tensor<f64> = rng::uniform_tensor(2, 0, 0, &[2, 8, 7, 9]);
    let cond = condition_tensor(&x).unwrap();
    assert_eq!(cond.shape(), &[2, 22, 14, 30]);
    for &(c, i, j, k) in &[(0, 0, 0, 0), (1, 21, 13, 29), (0, 10, 5, 17), (1, 3, 9, 1)] {
        let mut want = 0.0;
        for (a, wa) in interp_weights(8, 8, i + 21) {
            for (b, wb) in interp_weights(7, 8, j + 21) {
                for (d, wd) in interp_weights(9, 8, k + 21) {
                    want += wa * wb * wd * x.at4(c, a, b, d);
                }
            }
        }
        assert!((cond.at4(c, i, j, k) - want).abs() <= 1e-12);
    }
    let paper = condition_tensor(&Tensor::<f32>::full(&[4, 30, 20, 10], 0.3)).unwrap();
    assert_eq!(paper.shape(), &[4, 198, 118, 38]);
    assert!(paper.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    assert!(condition_tensor(&Tensor::<f32>::zeros(&[4, 6, 8, 8])).is_err());
}

#[test]
fn critic_zero_inputs_give_bias() {
    let mut c = Critic::<f32>::new(CriticConfig::micro(), 0).unwrap();
    c.params.set("head.b", Tensor::scalar(0.75)).unwrap();
    let z = Tensor::zeros(&[4, 22, 22, 22]);
    assert_eq!(c.score(&z, &z).unwrap(), 0.75);
    let s = c.score(&uniform(1, &[4, 22, 22, 22]), &uniform(2, &[4, 22, 22, 22])).unwrap();
    assert!(s.is_finite());
    assert!(c.score(&z, &Tensor::zeros(&[4, 22, 22, 20])).is_err());
}

/// Direct nested-loop critic in f64.
fn critic_oracle(c: &Critic<f64>, cand: &Tensor<f64>, cond: &Tensor<f64>) -> f64 {
    let [v, d, h, w] = cand.dims4().unwrap();
    let mut x: Vec<Vec<f64>> = (0..2 * v)
        .map(|ch| {
            let src = if ch < v { cand } else { cond };
            let n = d * h * w;
            src.data()[(ch % v) * n..(ch % v + 1) * n].to_vec()
        })
        .collect();
    let mut dims = [d, h, w];
    for blk in 1..=3 {
        let wt = c.params.get(&format!("b{blk}.w")).unwrap();
        let b = c.params.get(&format!("b{blk}.b")).unwrap();
        let co = wt.shape()[0];
        let ci = x.len();
        let od = [dims[0] - 2, dims[1] - 2, dims[2] - 2];
        let mut y = vec![vec![0.0; od[0] * od[1] * od[2]]; co];
        for (o, out) in y.iter_mut().enumerate() {
            for p in 0..od[0] {
                for q in 0..od[1] {
                    for r in 0..od[2] {
                        let mut s = b.data()[o];
                        for (i, xi) in x.iter().enumerate() {
                            for a in 0..3 {
                                for bb in 0..3 {
                                    for cc in 0..3 {
                                        let wi = (((o * ci + i) * 3 + a) * 3 + bb) * 3 + cc;
                                        let xv = xi[((p + a) * dims[1] + q + bb) * dims[2] + r + cc];
                                        s += wt.data()[wi] * xv;
                                    }
                                }
                            }
                        }
                        out[(p * od[1] + q) * od[2] + r] = if s > 0.0 { s } else { 0.2 * s };
                    }
                }
            }
        }
        let pd = [od[0] / 2, od[1] / 2, od[2] / 2];
        x = y
            .iter()
            .map(|ch| {
                let mut o = vec![0.0; pd[0] * pd[1] * pd[2]];
                for p in 0..pd[0] {
                    for q in 0..pd[1] {
                        for r in 0..pd[2] {
                            let mut s = 0.0;
                            for a in 0..2 {
                                for bb in 0..2 {
                                    for cc in 0..2 {
                                        s += ch[((2 * p + a) * od[1] + 2 * q + bb) * od[2] + 2 * r + cc];
                                    }
                                }
                            }
                            o[(p * pd[1] + q) * pd[2] + r] = s / 8.0;
                        }
                    }
                }
                o
            })
            .collect();
        dims = pd;
    }
    let hw = c.params.get("head.w").unwrap();
    let hb = c.params.get("head.b").unwrap().item();
    x.iter()
        .zip(hw.data())
        .map(|(ch, &wv)| wv * ch.iter().sum::<f64>() / ch.len() as f64)
        .sum::<f64>()
        + hb
}

#[test]
fn critic_matches_direct_oracle() {
    let cfg = CriticConfig {
        channels: [4, 6, 5],
        ..CriticConfig::micro()
    };
    let mut c = Critic::<f64>::new(cfg, 3).unwrap();
    c.params.set("head.b", Tensor::scalar(-0.3)).unwrap();
    for i in 1..=3 {
        let name = format!("b{i}.b");
        let n = c.params.get(&name).unwrap().len();
        c.params.set(&name, rng::gaussian(i, 1, 0, &[n])).unwrap();
    }
    let real: Tensor<f64> = rng::uniform_tensor(1, 0, 0, &[4, 22, 22, 22]);
    let fake: Tensor<f64> = rng::uniform_tensor(2, 0, 0, &[4, 22, 22, 22]);
    let cond: Tensor<f64> = rng::uniform_tensor(3, 0, 0, &[4, 22, 22, 22]);
    let got = c.score(&real, &cond).unwrap() - c.score(&fake, &cond).unwrap();
    let want = critic_oracle(&c, &real, &cond) - critic_oracle(&c, &fake, &cond);
    assert!((got - want).abs() <= 1e-5 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn default_generator_serialization() {
    let g = Generator::<f32>::new(GeneratorConfig::default(), 5).unwrap();
    assert_eq!(count_params(&g.params), 443_888);
    let bytes = serialize_generator(&g).unwrap();
    assert!(bytes.len() <= 4 * 1024 * 1024, "{} bytes", bytes.len());
    let back: Generator<f32> = deserialize_generator(&bytes).unwrap();
    assert_eq!(back, g);
    for (a, b) in back.params.tensors().iter().zip(g.params.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupted_byte_detected() {
    let g = Generator::<f32>::new(GeneratorConfig::micro(), 5).unwrap();
    let bytes = serialize_generator(&g).unwrap();
    for pos in [5, bytes.len() / 2, bytes.len() - 10, bytes.len() - 1] {
        let mut b = bytes.clone();
        b[pos] ^= 0x10;
        assert!(
            matches!(deserialize_generator::<f32>(&b), Err(Error::Checksum { .. })),
            "byte {pos}"
        );
    }
    assert!(matches!(
        deserialize_generator::<f32>(&bytes[..bytes.len() - 3]),
        Err(Error::Checksum { .. }) | Err(Error::Truncated { .. })
    ));
    assert!(matches!(deserialize_generator::<f32>(b"EGV1xxxxxxxxxxxxxxxx"), Err(Error::Format(_))));
}

#[test]
fn fingerprint_mismatch_rejected() {
    let micro = Generator::<f32>::new(GeneratorConfig::micro(), 5).unwrap();
    let bytes = serialize_generator(&micro).unwrap();
    let other = Checkpoint::generator_only(
        Generator::<f32>::new(GeneratorConfig::default(), 5).unwrap(),
    )
    .fingerprint();
    assert!(matches!(
        Checkpoint::<f32>::from_bytes_expecting(&bytes, &other),
        Err(Error::Fingerprint { .. })
    ));

    // a well-formed container whose records disagree with its header
    let (header, records) = read_container(&bytes).unwrap();
    let header = header.replace("channels = [32, 16, 8, 4]", "channels = [32, 16, 8, 8]");
    let forged = write_container(&header, records.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    assert!(matches!(
        deserialize_generator::<f32>(&forged),
        Err(Error::Fingerprint { .. })
    ));
}

#[test]
fn checkpoint_with_critic_round_trip() {
    let g = Generator::<f32>::new(GeneratorConfig::micro(), 1).unwrap();
    let c = Critic::<f32>::new(CriticConfig::micro(), 2).unwrap();
    let ck = Checkpoint {
        step: 17,
        epoch: 2,
        stats_ref: Some("abc".into()),
        generator: g,
        critic: Some((c.config.clone(), c.params.clone())),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.egw");
    ck.save(&p).unwrap();
    assert_eq!(Checkpoint::<f32>::load(&p).unwrap(), ck);
    assert_eq!(build_generator::<f32>(&GeneratorConfig::micro(), 1).unwrap(), ck.generator.params);
}
