use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central finite differences of `f` at 20 random coordinates of `x`
/// compared with `analytic`.
fn check_fd(x: &Tensor, analytic: &Tensor, rng: &mut ChaCha8Rng, f: impl Fn(&Tensor) -> f64) {
    const EPS: f64 = 1e-5;
    for _ in 0..20 {
        let i = rng.random_range(0..x.len());
        let mut plus = x.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = x.clone();
        minus.data_mut()[i] -= EPS;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * EPS);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "coord {i}: analytic {a} vs numeric {numeric} (rel {rel})");
    }
}

#[test]
fn conv_box_sum() {
    let x = Tensor::full(&[1, 3, 3], 1.0);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d(&x, &k, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3]);
    assert_eq!(y.at3(0, 1, 1), 9.0);
    assert_eq!(y.at3(0, 0, 0), 4.0);
    assert_eq!(y.at3(0, 0, 1), 6.0);
}

#[test]
fn conv_stride_two_shape() {
    let x = Tensor::zeros(&[1, 4, 4]);
    let k = Tensor::zeros(&[1, 1, 3, 3]);
    assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), &[1, 2, 2]);
}

#[test]
fn conv_rejects_bad_shapes() {
    let x = Tensor::zeros(&[2, 4, 4]);
    assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), 1, 1).is_err());
    assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), 1, 0).is_err());
    assert!(conv2d(&Tensor::zeros(&[2, 4]), &Tensor::zeros(&[1, 2, 3, 3]), 1, 1).is_err());
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 5, 6], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    for stride in [1, 2] {
        let y = conv2d(&x, &k, stride, 1).unwrap();
        let (_, ho, wo) = y.dims3().unwrap();
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                    acc +=
                                        x.at3(c, iy as usize, ix as usize) * k.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                    assert!((acc - y.at3(o, oy, ox)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for stride in [1, 2] {
        let x = random(&[2, 6, 6], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let probe = random(&[3, 6 / stride, 6 / stride], &mut rng);
        let mut tape = GradTape::new();
        let (xv, kv, bv) = (tape.param(x.clone()), tape.param(k.clone()), tape.param(b.clone()));
        let y = tape.conv2d(xv, kv, Some(bv), stride, 1).unwrap();
        let s = tape.dot(y, &probe).unwrap();
        tape.backward(s).unwrap();
        let dot = |t: &Tensor| t.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>();
        check_fd(&x, tape.grad(xv).unwrap(), &mut rng, |x| {
            dot(&super::kernels::conv2d_forward(x, &k, Some(&b), stride, 1).unwrap().0)
        });
        check_fd(&k, tape.grad(kv).unwrap(), &mut rng, |k| {
            dot(&super::kernels::conv2d_forward(&x, k, Some(&b), stride, 1).unwrap().0)
        });
        check_fd(&b, tape.grad(bv).unwrap(), &mut rng, |b| {
            dot(&super::kernels::conv2d_forward(&x, &k, Some(b), stride, 1).unwrap().0)
        });
    }
}

#[test]
fn resize_identity_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 7, 5], &mut rng);
    assert_eq!(bilinear_resize(&x, 1.0).unwrap(), x);
}

#[test]
fn resize_upscale_two_by_two() {
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let y = bilinear_resize(&x, 2.0).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4]);
    // Hand evaluation: output centres map to source -0.25, 0.25, 0.75, 1.25,
    // clamped to [0, 1], giving axis weights 0, 0.25, 0.75, 1.
    let axis = [0.0, 0.25, 0.75, 1.0];
    for (oy, fy) in axis.iter().enumerate() {
        for (ox, fx) in axis.iter().enumerate() {
            let top = 1.0 * (1.0 - fx) + 3.0 * fx;
            let bot = 5.0 * (1.0 - fx) + 7.0 * fx;
            let expected = top * (1.0 - fy) + bot * fy;
            assert!((y.at3(0, oy, ox) - expected).abs() < 1e-12);
        }
    }
    assert_eq!(y.at3(0, 0, 0), 1.0);
    assert_eq!(y.at3(0, 0, 3), 3.0);
    assert_eq!(y.at3(0, 3, 0), 5.0);
    assert_eq!(y.at3(0, 3, 3), 7.0);
    assert_eq!(y.at3(0, 1, 1), 2.5);
}

#[test]
fn resize_preserves_constants() {
    let x = Tensor::full(&[2, 8, 6], 0.375);
    let down = bilinear_resize(&x, 0.5).unwrap();
    assert_eq!(down.shape(), &[2, 4, 3]);
    let up = bilinear_resize(&down, 2.0).unwrap();
    assert_eq!(up, x);
}

#[test]
fn resize_rejects_empty_output() {
    let x = Tensor::zeros(&[1, 1, 1]);
    assert!(bilinear_resize(&x, 0.25).is_err());
    assert!(bilinear_resize(&x, -1.0).is_err());
}

#[test]
fn resize_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (h, w, oh, ow) in [(4, 4, 8, 8), (8, 6, 4, 3), (5, 7, 9, 4)] {
        let x = random(&[2, h, w], &mut rng);
        let probe = random(&[2, oh, ow], &mut rng);
        let mut tape = GradTape::new();
        let xv = tape.param(x.clone());
        let y = tape.resize(xv, oh, ow).unwrap();
        let s = tape.dot(y, &probe).unwrap();
        tape.backward(s).unwrap();
        check_fd(&x, tape.grad(xv).unwrap(), &mut rng, |x| {
            let y = resize_bilinear(x, oh, ow).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        });
    }
}

#[test]
fn softmax_closed_forms() {
    let y = softmax(&Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap()).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
    let y = softmax(&Tensor::new(vec![2, 1], vec![1f64.ln(), 3f64.ln()]).unwrap()).unwrap();
    assert!((y.data()[0] - 0.25).abs() < 1e-12);
    assert!((y.data()[1] - 0.75).abs() < 1e-12);
    assert!(softmax(&Tensor::new(vec![2, 1], vec![f64::NAN, 0.0]).unwrap()).is_err());
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let y = softmax(&Tensor::new(vec![2, 1], vec![1000.0, 999.0]).unwrap()).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert!((y.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_and_gumbel_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&[4, 3, 5], &mut rng);
    let noise = random(&[4, 3, 5], &mut rng);
    let probe = random(&[4, 3, 5], &mut rng);
    let dot = |t: &Tensor| t.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut tape = GradTape::new();
    let xv = tape.param(x.clone());
    let y = tape.softmax(xv).unwrap();
    let s = tape.dot(y, &probe).unwrap();
    tape.backward(s).unwrap();
    check_fd(&x, tape.grad(xv).unwrap(), &mut rng, |x| dot(&softmax(x).unwrap()));

    for temperature in [1.0, 0.5] {
        let mut tape = GradTape::new();
        let xv = tape.param(x.clone());
        let y = tape.gumbel_softmax(xv, temperature, &noise).unwrap();
        let s = tape.dot(y, &probe).unwrap();
        tape.backward(s).unwrap();
        check_fd(&x, tape.grad(xv).unwrap(), &mut rng, |x| dot(&gumbel_softmax(x, temperature, &noise).unwrap()));
    }
}

#[test]
fn gumbel_softmax_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 4, 4], &mut rng);
    let zero = Tensor::zeros(&[3, 4, 4]);
    assert_eq!(gumbel_softmax(&x, 1.0, &zero).unwrap(), softmax(&x).unwrap());
    assert!(gumbel_softmax(&x, 0.0, &zero).is_err());
    assert!(gumbel_softmax(&x, 1.0, &Tensor::zeros(&[3, 4])).is_err());

    let gap = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
    let y = gumbel_softmax(&gap, 0.01, &Tensor::zeros(&[2, 1])).unwrap();
    assert!(y.data()[0] > 0.99);
}

#[test]
fn gradient_norm_of_constant_is_zero() {
    let x = Tensor::full(&[3, 5, 6], 0.7);
    assert!(spatial_gradient_norm(&x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_norm_of_vertical_step() {
    // One-hot two-class mask: class 0 left of column 3, class 1 from column 3.
    let (h, w, j) = (4, 6, 3);
    let x = Tensor::from_fn(&[2, h, w], |i| {
        let (c, x) = (i / (h * w), i % w);
        let class = usize::from(x >= j);
        f64::from(u8::from(class == c))
    });
    let g = spatial_gradient_norm(&x).unwrap();
    // Direct evaluation: columns j-1 and j see a half-unit central difference in both channels.
    for y in 0..h {
        for x in 0..w {
            let expected = if x + 1 == j || x == j { (2.0 * 0.25f64).sqrt() } else { 0.0 };
            assert!((g.data()[y * w + x] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn gradient_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..3 {
        let x = random(&[3, 5, 6], &mut rng);
        let probe = random(&[5, 6], &mut rng);
        let mut tape = GradTape::new();
        let xv = tape.param(x.clone());
        let y = tape.spatial_gradient_norm(xv).unwrap();
        let s = tape.dot(y, &probe).unwrap();
        tape.backward(s).unwrap();
        check_fd(&x, tape.grad(xv).unwrap(), &mut rng, |x| {
            let y = spatial_gradient_norm(x).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        });
    }
}

#[test]
fn tape_accumulates_fan_out() {
    let mut tape = GradTape::new();
    let x = tape.param(Tensor::new(vec![1, 1, 2], vec![1.0, -2.0]).unwrap());
    let y = tape.add(x, x).unwrap();
    let s = tape.dot(y, &Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0, 8.0]);
}

#[test]
fn tape_rejects_non_scalar_root() {
    let mut tape = GradTape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_simplex(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let y = softmax(&Tensor::new(vec![4, 3], vals).unwrap()).unwrap();
            for p in 0..3 {
                let s: f64 = (0..4).map(|c| y.data()[c * 3 + p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!((0..4).all(|c| y.data()[c * 3 + p] >= 0.0));
            }
        }

        #[test]
        fn gradient_norm_of_any_constant_is_zero(v in -1e6f64..1e6, c in 1usize..4, h in 1usize..6, w in 1usize..6) {
            let g = spatial_gradient_norm(&Tensor::full(&[c, h, w], v)).unwrap();
            prop_assert!(g.data().iter().all(|&x| x == 0.0));
        }
    }
}
