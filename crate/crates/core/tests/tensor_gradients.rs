//! Finite-difference checks of every hand-written backward pass, in f64.

use oceantl::tensor::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

use common::gradcheck::{self, Check};

fn assert_all(checks: Vec<Check>) {
    for (name, e) in checks {
        assert!(e < 1e-4, "{name}: relative error {e:e}");
    }
}

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    gradcheck::random(shape, rng)
}

#[test]
fn conv2d_gradients() {
    assert_all(gradcheck::convolutions());
}

#[test]
fn conv2d_transpose_gradients() {
    assert_all(gradcheck::transposed_convolutions());
}

#[test]
fn batchnorm_gradients() {
    assert_all(gradcheck::batchnorm());
}

#[test]
fn pointwise_and_resampling_gradients() {
    assert_all(gradcheck::pointwise_and_resampling());
}

#[test]
fn dense_gradients() {
    assert_all(gradcheck::dense());
}

#[test]
fn mse_gradient() {
    let (_, e) = &gradcheck::mse()[0];
    assert!(*e < 1e-6, "{e:e}");
}

#[test]
fn shape_errors_list_both_shapes() {
    let x = Tensor4::<f32>::zeros([1, 3, 8, 8]);
    let w = Tensor4::<f32>::zeros([4, 2, 3, 3]);
    let msg = conv2d_forward(&x, &w, &[0.0; 4], &ConvGeom::new(3, 1, 1)).unwrap_err().to_string();
    assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
    let big = Tensor4::<f32>::zeros([1, 2, 5, 5]);
    assert!(conv2d_forward(&Tensor4::zeros([1, 2, 2, 2]), &big, &[0.0], &ConvGeom::new(5, 1, 0)).is_err());
}

proptest! {
    #[test]
    fn conv2d_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, 3, 6, 5], &mut rng);
        let y = random([2, 3, 6, 5], &mut rng);
        let w = random([2, 3, 3, 3], &mut rng);
        let g = ConvGeom::new(3, 1, 1);
        let zero = [0.0; 2];
        let mix = Tensor4::from_vec(x.shape, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d_forward(&mix, &w, &zero, &g).unwrap();
        let fx = conv2d_forward(&x, &w, &zero, &g).unwrap();
        let fy = conv2d_forward(&y, &w, &zero, &g).unwrap();
        for ((l, p), q) in lhs.data.iter().zip(&fx.data).zip(&fy.data) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn maxpool_gradient_only_at_argmax(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, 2, 4, 6], &mut rng);
        let (y, arg) = maxpool2_forward(&x).unwrap();
        let dy = Tensor4::full(y.shape, 1.0);
        let dx = maxpool2_backward(x.shape, &arg, &dy).unwrap();
        for (i, &v) in dx.data.iter().enumerate() {
            prop_assert_eq!(v != 0.0, arg.contains(&(i as u32)));
        }
    }

    #[test]
    fn lr_stays_in_bounds(epoch in 0.0f64..5000.0, t0 in 1.0f64..100.0, t_mult in 1.0f64..3.0) {
        let s = LrSchedule { lr_max: 1e-3, lr_min: 1e-6, t0, t_mult };
        let lr = s.lr(epoch);
        prop_assert!((s.lr_min..=s.lr_max).contains(&lr));
        let (t_cur, t_i) = s.cycle(epoch);
        prop_assert!(t_cur >= 0.0 && t_cur < t_i);
    }

    #[test]
    fn adamw_is_bit_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Param::new("w", random([1, 2, 3, 3], &mut rng).cast::<f32>());
        p.grad = random([1, 2, 3, 3], &mut rng).cast();
        let mut q = p.clone();
        let mut a = AdamW::new(AdamWConfig::default(), &[&p]).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            a.step(&mut [&mut p], 1e-3).unwrap();
            b.step(&mut [&mut q], 1e-3).unwrap();
        }
        prop_assert_eq!(p.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn channel_reducing_conv_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random([1, 3, 4, 5], &mut rng);
    let w = random([1, 3, 3, 3], &mut rng);
    let y = conv2d_forward(&x, &w, &[0.25], &ConvGeom::new(3, 1, 1)).unwrap();
    for i in 0..4 {
        for j in 0..5 {
            let mut acc = 0.25;
            for c in 0..3 {
                for u in 0..3 {
                    for v in 0..3 {
                        let (hi, wj) = (i as isize + u as isize - 1, j as isize + v as isize - 1);
                        if (0..4).contains(&hi) && (0..5).contains(&wj) {
                            acc += x.at(0, c, hi as usize, wj as usize) * w.at(0, c, u, v);
                        }
                    }
                }
            }
            assert!((y.at(0, 0, i, j) - acc).abs() < 1e-12);
        }
    }
}
