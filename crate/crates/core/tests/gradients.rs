//! Analytic gradients against central finite differences, 120 random
//! instances per gradient, relative error at most 1e-4 on every instance.

use eigencl::analysis::classify::{logreg_loss_and_grad, LogRegModel};
use eigencl::encoder::{Encoder, EncoderConfig};
use eigencl::objective::{self, LossHyper};
use eigencl::util;
use ndarray::Array2;
use rand::Rng;

const INSTANCES: usize = 120;
const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = analytic
        .iter()
        .chain(numeric)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central(p0: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = p0.to_vec();
    (0..p0.len())
        .map(|i| {
            p[i] = p0[i] + STEP;
            let up = f(&p);
            p[i] = p0[i] - STEP;
            let down = f(&p);
            p[i] = p0[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn unit_rows(b: usize, d: usize, r: &mut impl Rng) -> Array2<f64> {
    let mut z = Array2::from_shape_fn((b, d), |_| r.random::<f64>() - 0.5);
    util::normalize_rows(&mut z);
    z
}

fn random_hyper(r: &mut impl Rng) -> LossHyper {
    LossHyper {
        lambda: r.random_range(0.5..6.0),
        tau: r.random_range(0.05..0.2),
        sigma: r.random_range(0.2..1.0),
        margin: r.random_range(0.0..0.4),
    }
}

/// True when some pair sits on the hinge, where the loss is not differentiable.
fn near_hinge(z: &Array2<f64>, margin: f64) -> bool {
    let sim = z.dot(&z.t());
    (0..z.nrows()).any(|i| (0..z.nrows()).any(|j| i != j && (sim[[i, j]] - margin).abs() < 1e-3))
}

#[test]
fn eigencl_loss_gradient() {
    let mut r = util::rng(101);
    let mut done = 0;
    while done < INSTANCES {
        let (b, d) = (r.random_range(2..9), r.random_range(2..10));
        let z = unit_rows(b, d, &mut r);
        let h = random_hyper(&mut r);
        if near_hinge(&z, h.margin) {
            continue;
        }
        let w: Vec<f64> = (0..b).map(|_| r.random()).collect();
        let s = objective::stress_affinity(&objective::normalize_weights(&w), h.sigma).s;
        let (loss, g) = objective::eigencl_loss(&z, &w, &h).unwrap();
        let (core_loss, core_g) = objective::pair_loss_grad(&z, &s, &h);
        assert_eq!((loss, &g), (core_loss, &core_g));
        let numeric = central(z.as_slice().unwrap(), |p| {
            let zp = Array2::from_shape_vec((b, d), p.to_vec()).unwrap();
            objective::pair_loss_grad(&zp, &s, &h).0
        });
        let e = rel_err(g.as_slice().unwrap(), &numeric);
        assert!(e <= TOLERANCE, "instance {done}: relative error {e}");
        done += 1;
    }
}

#[test]
fn ntxent_gradient() {
    let mut r = util::rng(202);
    for inst in 0..INSTANCES {
        let (b, d) = (r.random_range(2..7), r.random_range(2..8));
        let tau = r.random_range(0.1..1.0);
        let za = unit_rows(b, d, &mut r);
        let zb = unit_rows(b, d, &mut r);
        let (_, ga, gb) = objective::ntxent_loss(&za, &zb, tau).unwrap();
        let mut p0 = za.as_slice().unwrap().to_vec();
        p0.extend_from_slice(zb.as_slice().unwrap());
        let numeric = central(&p0, |p| {
            let a = Array2::from_shape_vec((b, d), p[..b * d].to_vec()).unwrap();
            let c = Array2::from_shape_vec((b, d), p[b * d..].to_vec()).unwrap();
            objective::ntxent_core(&a, &c, tau).0
        });
        let mut analytic = ga.as_slice().unwrap().to_vec();
        analytic.extend_from_slice(gb.as_slice().unwrap());
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOLERANCE, "instance {inst}: relative error {e}");
    }
}

/// End to end: EigenCL loss of the encoder's train-mode output, differentiated
/// with respect to every parameter through batch norm and the L2 projection.
#[test]
fn encoder_backward_gradient() {
    let mut r = util::rng(303);
    let mut done = 0;
    while done < INSTANCES {
        let t = r.random_range(3..7);
        let depth = r.random_range(0..3);
        let cfg = EncoderConfig {
            input_dim: t,
            hidden_dims: (0..depth).map(|_| r.random_range(3..7)).collect(),
            embed_dim: r.random_range(2..5),
            seed: r.random(),
            ..EncoderConfig::default()
        };
        let enc = Encoder::init(&cfg).unwrap();
        let b = r.random_range(3..8);
        let x = Array2::from_shape_fn((b, t), |_| r.random_range(0.1..0.8));
        let w: Vec<f64> = (0..b).map(|_| r.random()).collect();
        let h = random_hyper(&mut r);
        let s = objective::stress_affinity(&objective::normalize_weights(&w), h.sigma).s;
        let (z, cache) = enc.forward_train_pure(&x).unwrap();
        if near_hinge(&z, h.margin) {
            continue;
        }
        let (_, gz) = objective::pair_loss_grad(&z, &s, &h);
        let analytic = enc.backward(&cache, &gz).unwrap().flat();
        let mut probe = enc.clone();
        let numeric = central(&enc.flat_params(), |p| {
            probe.set_flat_params(p).unwrap();
            let z = probe.forward_train_pure(&x).unwrap().0;
            objective::pair_loss_grad(&z, &s, &h).0
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOLERANCE, "instance {done}: relative error {e}");
        done += 1;
    }
}

#[test]
fn logreg_gradient() {
    let mut r = util::rng(404);
    for inst in 0..INSTANCES {
        let (n, d, c) = (
            r.random_range(2..20),
            r.random_range(1..6),
            r.random_range(2..5),
        );
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let mut model = LogRegModel::zeros(c, d);
        let p0: Vec<f64> = (0..c * d + c).map(|_| r.random_range(-1.0..1.0)).collect();
        model.set_flat(&p0);
        let l2 = r.random_range(0.0..0.1);
        let (_, analytic) = logreg_loss_and_grad(&model, &x, &y, l2);
        let mut probe = model.clone();
        let numeric = central(&p0, |p| {
            probe.set_flat(p);
            logreg_loss_and_grad(&probe, &x, &y, l2).0
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e <= TOLERANCE, "instance {inst}: relative error {e}");
    }
}
