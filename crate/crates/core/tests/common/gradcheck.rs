//! Finite-difference gradient checks in f64, shared by the unit-level test
//! files and the acceptance run. Each check returns the norm-wise relative
//! error between the analytic and the central-difference gradient.

#![allow(dead_code)]

use oceantl::model::{ModelConfig, RcCan};
use oceantl::tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

pub type Check = (String, f64);

pub fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}

fn with(t: &Tensor4<f64>, data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(t.shape, data.to_vec()).unwrap()
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> Check {
    (name.to_string(), rel_err(analytic, numeric))
}

pub fn conv(geom: ConvGeom, x_shape: [usize; 4], w_shape: [usize; 4], transpose: bool, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(x_shape, &mut rng);
    let w = random(w_shape, &mut rng);
    let oc = if transpose { w_shape[1] } else { w_shape[0] };
    let b: Vec<f64> = (0..oc).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fwd = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| {
        if transpose {
            conv2d_transpose_forward(x, w, b, &geom).unwrap()
        } else {
            conv2d_forward(x, w, b, &geom).unwrap()
        }
    };
    let y = fwd(&x, &w, &b);
    let r = random(y.shape, &mut rng);
    let g = if transpose {
        conv2d_transpose_backward(&x, &w, &r, &geom).unwrap()
    } else {
        conv2d_backward(&x, &w, &r, &geom).unwrap()
    };
    let tag = format!("{} k{} s{} {:?}", if transpose { "tconv" } else { "conv" }, geom.kh, geom.stride, x_shape);
    vec![
        check(&format!("{tag} dx"), &g.dx.data, &numeric(&x.data, |d| dot(&fwd(&with(&x, d), &w, &b), &r))),
        check(&format!("{tag} dw"), &g.dw.data, &numeric(&w.data, |d| dot(&fwd(&x, &with(&w, d), &b), &r))),
        check(&format!("{tag} db"), &g.db, &numeric(&b, |d| dot(&fwd(&x, &w, d), &r))),
    ]
}

pub fn convolutions() -> Vec<Check> {
    let mut out = conv(ConvGeom::new(3, 1, 1), [2, 3, 8, 8], [4, 3, 3, 3], false, 1);
    out.extend(conv(ConvGeom::new(3, 2, 1), [2, 2, 7, 6], [3, 2, 3, 3], false, 2));
    out.extend(conv(ConvGeom::new(1, 1, 0), [4, 3, 4, 5], [2, 3, 1, 1], false, 3));
    // fewer output than input channels takes a different code path
    out.extend(conv(ConvGeom::new(3, 1, 1), [2, 6, 5, 7], [2, 6, 3, 3], false, 12));
    out.extend(conv(ConvGeom::new(3, 1, 0), [1, 4, 6, 6], [1, 4, 3, 3], false, 13));
    out
}

pub fn transposed_convolutions() -> Vec<Check> {
    let mut out = conv(ConvGeom::new(3, 1, 1), [2, 3, 8, 8], [3, 4, 3, 3], true, 4);
    let g = ConvGeom {
        output_pad: 1,
        ..ConvGeom::new(3, 2, 1)
    };
    out.extend(conv(g, [2, 2, 4, 3], [2, 3, 3, 3], true, 5));
    out
}

pub fn batchnorm() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random([4, 3, 4, 4], &mut rng);
    let gamma: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    let cfg = BnConfig::default();
    let mut out = Vec::new();
    for mode in [BnMode::Train, BnMode::Eval] {
        let running = BnRunning {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![0.9, 1.2, 0.7],
        };
        let fwd = |x: &Tensor4<f64>, g: &[f64], b: &[f64]| {
            let mut r = running.clone();
            batchnorm_forward(x, g, b, &mut r, mode, &cfg).unwrap().0
        };
        let (y, cache) = batchnorm_forward(&x, &gamma, &beta, &mut running.clone(), mode, &cfg).unwrap();
        let r = random(y.shape, &mut rng);
        let (dx, dg, db) = batchnorm_backward(&r, &gamma, &cache).unwrap();
        out.push(check(&format!("bn {mode:?} dx"), &dx.data, &numeric(&x.data, |d| dot(&fwd(&with(&x, d), &gamma, &beta), &r))));
        out.push(check(&format!("bn {mode:?} dgamma"), &dg, &numeric(&gamma, |d| dot(&fwd(&x, d, &beta), &r))));
        out.push(check(&format!("bn {mode:?} dbeta"), &db, &numeric(&beta, |d| dot(&fwd(&x, &gamma, d), &r))));
    }
    out
}

pub fn pointwise_and_resampling() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random([3, 2, 6, 8], &mut rng);
    let mut out = Vec::new();

    let r = random(x.shape, &mut rng);
    let dx = leaky_relu_backward(&x, &r, 0.01).unwrap();
    out.push(check("leaky relu", &dx.data, &numeric(&x.data, |d| dot(&leaky_relu_forward(&with(&x, d), 0.01), &r))));

    let (y, arg) = maxpool2_forward(&x).unwrap();
    let r = random(y.shape, &mut rng);
    let dx = maxpool2_backward(x.shape, &arg, &r).unwrap();
    out.push(check("maxpool", &dx.data, &numeric(&x.data, |d| dot(&maxpool2_forward(&with(&x, d)).unwrap().0, &r))));

    let y = upsample2_forward(&x);
    let r = random(y.shape, &mut rng);
    let dx = upsample2_backward(&r).unwrap();
    out.push(check("upsample", &dx.data, &numeric(&x.data, |d| dot(&upsample2_forward(&with(&x, d)), &r))));

    let c = crop(&x, 5, 7).unwrap();
    let r = random(c.shape, &mut rng);
    let dx = crop_backward(&r, x.shape).unwrap();
    out.push(check("crop", &dx.data, &numeric(&x.data, |d| dot(&crop(&with(&x, d), 5, 7).unwrap(), &r))));
    out
}

pub fn dense() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random([4, 3, 2, 2], &mut rng);
    let w = random([5, 12, 1, 1], &mut rng);
    let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = dense_forward(&x, &w, &b).unwrap();
    let r = random(y.shape, &mut rng);
    let g = dense_backward(&x, &w, &r).unwrap();
    vec![
        check("dense dx", &g.dx.data, &numeric(&x.data, |d| dot(&dense_forward(&with(&x, d), &w, &b).unwrap(), &r))),
        check("dense dw", &g.dw.data, &numeric(&w.data, |d| dot(&dense_forward(&x, &with(&w, d), &b).unwrap(), &r))),
        check("dense db", &g.db, &numeric(&b, |d| dot(&dense_forward(&x, &w, d).unwrap(), &r))),
    ]
}

pub fn mse() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random([2, 1, 5, 4], &mut rng);
    let t = random(p.shape, &mut rng);
    let (_, g) = mse_loss(&p, &t).unwrap();
    vec![check("mse", &g.data, &numeric(&p.data, |d| mse_loss(&with(&p, d), &t).unwrap().0))]
}

pub fn all_layers() -> Vec<Check> {
    let mut out = convolutions();
    out.extend(transposed_convolutions());
    out.extend(batchnorm());
    out.extend(pointwise_and_resampling());
    out.extend(dense());
    out.extend(mse());
    out
}

/// Two stages of 8 channels on a grid that needs padding.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_shape: [12, 14],
        encoder_channels: vec![8, 8],
        latent_dim: 5,
        init_seed: 3,
        ..Default::default()
    }
}

fn model_loss(model: &mut RcCan<f64>, x: &Tensor4<f64>, t: &Tensor4<f64>) -> f64 {
    let (y, _) = model.forward_train(x).unwrap();
    mse_loss(&y, t).unwrap().0
}

/// Loss gradient against central differences for four sampled entries of
/// every parameter tensor. Returns the norm-wise error over all samples and
/// the worst single entry that is not below 1e-9 in absolute terms.
pub fn end_to_end() -> (f64, Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = RcCan::<f64>::new(tiny_model()).unwrap();
    let shape = [3, 1, 12, 14];
    let n: usize = shape.iter().product();
    let x = Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let t = Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    model.zero_grad();
    model.loss_and_grad(&x, &t).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data.clone()).collect();
    let (mut a_all, mut n_all) = (Vec::new(), Vec::new());
    let mut worst = (String::new(), 0.0);
    for (pi, grad) in analytic.iter().enumerate() {
        for _ in 0..4.min(grad.len()) {
            let k = rng.random_range(0..grad.len());
            let orig = model.params()[pi].value.data[k];
            model.params_mut()[pi].value.data[k] = orig + H;
            let up = model_loss(&mut model, &x, &t);
            model.params_mut()[pi].value.data[k] = orig - H;
            let down = model_loss(&mut model, &x, &t);
            model.params_mut()[pi].value.data[k] = orig;
            let num = (up - down) / (2.0 * H);
            let a = grad[k];
            if (a - num).abs() >= 1e-9 {
                let rel = (a - num).abs() / a.abs().max(num.abs());
                if rel > worst.1 {
                    worst = (format!("{}[{k}]", model.params()[pi].name), rel);
                }
            }
            a_all.push(a);
            n_all.push(num);
        }
    }
    (rel_err(&a_all, &n_all), worst)
}
