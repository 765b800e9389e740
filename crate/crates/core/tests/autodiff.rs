use std::rc::Rc;

use earthgan::autodiff::gradient_penalty;
use earthgan::gradcheck::{check, relative_error};
use earthgan::{rng, Result, Tape, Tensor, Var};

const H: f64 = 1e-4;
const TOL: f64 = 1e-5;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    rng::gaussian(seed, 0, 0, shape)
}

/// Reduces a node to a scalar through a fixed random weighting so that every
/// output element contributes a distinct amount.
fn probe(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = Rc::new(rand_t(t.shape(y), seed ^ 0xABCD));
    let p = t.mul_const(y, w)?;
    Ok(t.sum(p))
}

fn assert_grad<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let r = check(inputs, f, H).unwrap();
    for (i, e) in r.relative_errors().into_iter().enumerate() {
        assert!(e <= TOL, "{name}: input {i} relative error {e:e}");
    }
}

#[test]
fn sum_of_squares_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_slice(&[2], &[1.0, -2.0]).unwrap(), true);
    let sq = t.square(x).unwrap();
    let f = t.sum(sq);
    let g = t.backward(f).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0]);
}

#[test]
fn mean_leaky_relu_negative_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_slice(&[4], &[-1.0, -2.0, -0.5, -3.0]).unwrap(), true);
    let y = t.leaky_relu(x, 0.2).unwrap();
    let f = t.mean(y);
    let g = t.backward(f).unwrap();
    for v in g.get(x).unwrap().data() {
        assert!((v - 0.05).abs() < 1e-15);
    }
}

#[test]
fn leaky_relu_values() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::from_slice(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let y = t.leaky_relu(x, 0.2).unwrap();
    let expect = [-0.2f32, 0.0, 2.0];
    for (a, b) in t.value(y).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-7);
    }
    let r = t.leaky_relu(x, 0.0).unwrap();
    assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    assert!(t.leaky_relu(x, 1.0).is_err());

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::scalar(-3.0), true);
    let y = t.leaky_relu(x, 0.2).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 0.2);
}

#[test]
fn backward_from_non_scalar_rejected() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::ones(&[3]), true);
    let y = t.scale(x, 2.0);
    assert!(t.backward(y).is_err());
}

#[test]
fn backward_resets_by_default_and_accumulates_on_request() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap(), true);
    let sq = t.square(x).unwrap();
    let f = t.sum(sq);
    let g1 = t.backward(f).unwrap();
    let g2 = t.backward(f).unwrap();
    assert_eq!(g1.get(x), g2.get(x));
    let mut acc = g1.clone();
    t.backward_accumulate(f, &mut acc).unwrap();
    assert_eq!(acc.get(x).unwrap().data(), &[4.0, 8.0]);
}

#[test]
fn input_gradient_examples() {
    let mut t = Tape::<f64>::new();
    let w = t.constant(Tensor::from_slice(&[2], &[3.0, -1.0]).unwrap());
    let x = t.leaf(Tensor::from_slice(&[2], &[0.7, 9.0]).unwrap(), true);
    let p = t.mul(w, x).unwrap();
    let f = t.sum(p);
    let g = t.input_gradient(f, x, false).unwrap();
    assert_eq!(t.value(g).data(), &[3.0, -1.0]);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap(), true);
    let sq = t.square(x).unwrap();
    let f = t.sum(sq);
    let g = t.input_gradient(f, x, false).unwrap();
    assert_eq!(t.value(g).data(), &[2.0, 4.0]);

    // unreachable input
    let z = t.leaf(Tensor::ones(&[2]), true);
    assert!(t.input_gradient(f, z, false).is_err());
}

/// d/dw ‖∇ₓ⟨w, x⟩‖₂ = w/‖w‖ — second order through the retained input gradient.
#[test]
fn second_order_norm_of_input_gradient() {
    let mut t = Tape::<f64>::new();
    let w = t.leaf(Tensor::from_slice(&[2], &[3.0, 4.0]).unwrap(), true);
    let x = t.leaf(Tensor::from_slice(&[2], &[-0.3, 1.1]).unwrap(), true);
    let p = t.mul(w, x).unwrap();
    let f = t.sum(p);
    let g = t.input_gradient(f, x, true).unwrap();
    let g2 = t.square(g).unwrap();
    let s = t.sum(g2);
    let n = t.sqrt(s);
    let grads = t.backward(n).unwrap();
    let dw = grads.get(w).unwrap();
    assert!((dw.data()[0] - 0.6).abs() < 1e-12);
    assert!((dw.data()[1] - 0.8).abs() < 1e-12);

    // cross-check by finite differences of the closed-form norm ‖w‖
    let norm = |w: &[f64]| (w[0] * w[0] + w[1] * w[1]).sqrt();
    for i in 0..2 {
        let mut wp = [3.0, 4.0];
        let mut wm = [3.0, 4.0];
        wp[i] += H;
        wm[i] -= H;
        let num = (norm(&wp) - norm(&wm)) / (2.0 * H);
        assert!((num - dw.data()[i]).abs() < 1e-8);
    }
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    for seed in 0..3u64 {
        let a = rand_t(&[2, 3, 4], seed * 10 + 1);
        let b = rand_t(&[2, 3, 4], seed * 10 + 2);
        assert_grad("add", &[a.clone(), b.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y, seed)
        });
        assert_grad("sub", &[a.clone(), b.clone()], |t, v| {
            let y = t.sub(v[0], v[1])?;
            probe(t, y, seed)
        });
        assert_grad("mul", &[a.clone(), b.clone()], |t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y, seed)
        });
        assert_grad("scale", &[a.clone()], |t, v| {
            let y = t.scale(v[0], -1.7);
            probe(t, y, seed)
        });
        assert_grad("add_scalar", &[a.clone()], |t, v| {
            let y = t.add_scalar(v[0], 0.3);
            probe(t, y, seed)
        });
        assert_grad("leaky_relu", &[a.clone()], |t, v| {
            let y = t.leaky_relu(v[0], 0.2)?;
            probe(t, y, seed)
        });
        assert_grad("mean", &[a.clone()], |t, v| {
            let y = t.square(v[0])?;
            Ok(t.mean(y))
        });
        let pos = a.map(|x| x.abs() + 0.5);
        assert_grad("sqrt", &[pos.clone()], |t, v| {
            let y = t.sqrt(v[0]);
            probe(t, y, seed)
        });
        assert_grad("recip", &[pos.clone()], |t, v| {
            let y = t.recip(v[0]);
            probe(t, y, seed)
        });
        assert_grad("broadcast+reshape", &[rand_t(&[1], seed + 5)], |t, v| {
            let y = t.broadcast(v[0], &[2, 3])?;
            let y2 = t.square(y)?;
            let r = t.reshape(y2, &[3, 2])?;
            probe(t, r, seed)
        });
    }
}

#[test]
fn structural_primitives_match_finite_differences() {
    for seed in 0..3u64 {
        let x = rand_t(&[2, 4, 5, 6], seed * 7 + 1);
        assert_grad("channel_sum", &[x.clone()], |t, v| {
            let y = t.channel_sum(v[0])?;
            probe(t, y, seed)
        });
        let b = rand_t(&[2], seed * 7 + 2);
        assert_grad("channel_affine", &[x.clone(), b.clone(), rand_t(&[2], seed + 40)], |t, v| {
            let y = t.channel_affine(v[0], v[1], v[2])?;
            probe(t, y, seed)
        });
        assert_grad("trilinear_resize", &[x.clone()], |t, v| {
            let y = t.trilinear_resize(v[0], 2)?;
            probe(t, y, seed)
        });
        assert_grad("mean_pool2", &[x.clone()], |t, v| {
            let y = t.mean_pool2(v[0])?;
            probe(t, y, seed)
        });
        assert_grad("center_crop", &[x.clone()], |t, v| {
            let y = t.center_crop(v[0], [2, 3, 2])?;
            probe(t, y, seed)
        });
        assert_grad("pad", &[x.clone()], |t, v| {
            let y = t.pad(v[0], &[1, 0, 2, 1], &[3, 4, 8, 8])?;
            probe(t, y, seed)
        });
        let z = rand_t(&[3, 4, 5, 6], seed * 7 + 3);
        assert_grad("concat_channels", &[x.clone(), z], |t, v| {
            let y = t.concat_channels(&[v[0], v[1]])?;
            probe(t, y, seed)
        });
    }
}

#[test]
fn convolution_primitives_match_finite_differences() {
    for seed in 0..3u64 {
        let x = rand_t(&[1, 4, 4, 4], seed * 3 + 1);
        let w = rand_t(&[2, 1, 3, 3, 3], seed * 3 + 2);
        let b = rand_t(&[2], seed * 3 + 3);
        assert_grad("conv3d_bias", &[x.clone(), w.clone(), b], |t, v| {
            let y = t.conv3d_bias(v[0], v[1], v[2])?;
            probe(t, y, seed)
        });
        let g = rand_t(&[2, 2, 2, 2], seed * 3 + 4);
        assert_grad("conv3d_transpose", &[g.clone(), w.clone()], |t, v| {
            let y = t.conv3d_transpose(v[0], v[1])?;
            probe(t, y, seed)
        });
        assert_grad("conv3d_kernel_grad", &[x.clone(), g], |t, v| {
            let y = t.conv3d_kernel_grad(v[0], v[1], 3)?;
            probe(t, y, seed)
        });
    }
}

#[test]
fn gradient_penalty_analytic_cases() {
    let real = Tensor::<f64>::from_slice(&[4], &[0.1, 0.5, 0.2, 0.9]).unwrap();
    let fake = Tensor::<f64>::from_slice(&[4], &[0.0, 0.3, 0.7, 0.4]).unwrap();

    let mut t = Tape::new();
    let p = gradient_penalty(&mut t, |t, x| Ok(t.sum(x)), &real, &fake, 0.3, 10.0).unwrap();
    assert!((t.item(p) - 10.0).abs() < 1e-6);

    let mut t = Tape::new();
    let p = gradient_penalty(&mut t, |t, x| Ok(t.sum(x)), &real, &fake, 0.3, 0.0).unwrap();
    assert_eq!(t.item(p), 0.0);

    let w = Rc::new(Tensor::from_slice(&[4], &[0.5, -0.5, 0.5, 0.5]).unwrap());
    let mut t = Tape::new();
    let p = gradient_penalty(
        &mut t,
        |t, x| {
            let y = t.mul_const(x, w.clone())?;
            Ok(t.sum(y))
        },
        &real,
        &fake,
        0.8,
        10.0,
    )
    .unwrap();
    assert!(t.item(p) <= 1e-10);

    let mut t = Tape::new();
    assert!(gradient_penalty(&mut t, |t, x| Ok(t.sum(x)), &real, &Tensor::zeros(&[5]), 0.5, 1.0).is_err());
}

/// Two-layer conv critic; parameter gradient of the penalty against central
/// differences of the penalty value.
#[test]
fn gradient_penalty_second_order_matches_finite_differences() {
    let real = rand_t(&[2, 6, 6, 6], 101).map(|v| v.abs().min(1.0));
    let fake = rand_t(&[2, 6, 6, 6], 102).map(|v| v.abs().min(1.0));
    let params = vec![
        rand_t(&[4, 2, 3, 3, 3], 103).map(|v| v * 0.3),
        rand_t(&[4], 104).map(|v| v * 0.1),
        rand_t(&[3, 4, 3, 3, 3], 105).map(|v| v * 0.2),
        rand_t(&[3], 106).map(|v| v * 0.1),
    ];
    let n_params: usize = params.iter().map(|p| p.len()).sum();
    assert!(n_params <= 1000);

    fn critic(t: &mut Tape<f64>, x: Var, p: &[Var]) -> Result<Var> {
        let h = t.conv3d_bias(x, p[0], p[1])?;
        let h = t.leaky_relu(h, 0.2)?;
        let h = t.conv3d_bias(h, p[2], p[3])?;
        let h = t.square(h)?;
        Ok(t.mean(h))
    }

    let penalty = |t: &mut Tape<f64>, p: &[Var]| -> Result<Var> {
        gradient_penalty(t, |t, x| critic(t, x, p), &real, &fake, 0.37, 10.0)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let gp = penalty(&mut tape, &vars).unwrap();
    let grads = tape.backward(gp).unwrap();

    // numeric side: penalty value re-evaluated on fresh recording tapes
    let value = |ps: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone(), false)).collect();
        let gp = penalty(&mut t, &vs).unwrap();
        t.item(gp)
    };
    let mut probe = params.clone();
    for (i, p) in params.iter().enumerate() {
        let mut num = Tensor::zeros(p.shape());
        for j in 0..p.len() {
            let x0 = p.data()[j];
            probe[i].data_mut()[j] = x0 + H;
            let fp = value(&probe);
            probe[i].data_mut()[j] = x0 - H;
            let fm = value(&probe);
            probe[i].data_mut()[j] = x0;
            num.data_mut()[j] = (fp - fm) / (2.0 * H);
        }
        let e = relative_error(grads.get(vars[i]).unwrap(), &num);
        assert!(e <= 1e-4, "param {i}: relative error {e:e}");
    }
}

#[test]
fn conv_linearity_f32() {
    let x = rng::gaussian::<f32>(1, 0, 0, &[2, 5, 5, 5]);
    let y = rng::gaussian::<f32>(2, 0, 0, &[2, 5, 5, 5]);
    let w = rng::gaussian::<f32>(3, 0, 0, &[3, 2, 3, 3, 3]);
    let (a, b) = (0.7f32, -1.3f32);
    let conv = earthgan::autodiff::kernels::conv3d::<f32>;
    let lhs = conv(&x.zip_map(&y, |p, q| a * p + b * q).unwrap(), &w).unwrap();
    let rhs = conv(&x, &w)
        .unwrap()
        .zip_map(&conv(&y, &w).unwrap(), |p, q| a * p + b * q)
        .unwrap();
    let scale = rhs.l2_norm();
    let diff = lhs.zip_map(&rhs, |p, q| p - q).unwrap().l2_norm();
    assert!(diff / scale <= 1e-5, "{}", diff / scale);
}

/// Squared norm of an input gradient, differentiated again: exercises the
/// resize and pooling adjoint rules.
#[test]
fn second_order_through_resize_and_pool() {
    for seed in 0..3u64 {
        let x = rand_t(&[2, 4, 5, 6], seed * 7 + 1);
        assert_grad("resize/pool adjoints", &[x], |t, v| {
            let y = t.trilinear_resize(v[0], 2)?;
            let y = t.mean_pool2(y)?;
            let y = t.square(y)?;
            let f = probe(t, y, seed)?;
            let g = t.input_gradient(f, v[0], true)?;
            let g = t.square(g)?;
            Ok(t.sum(g))
        });
    }
}
