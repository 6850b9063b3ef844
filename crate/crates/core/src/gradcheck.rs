//! Finite-difference verification of every loss gradient on seeded random
//! instances.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::derive_seed;
use crate::losses::{
    cosent_loss, infonce_triplet, label_negative_cls_loss, matryoshka_wrap, mrl_classification_loss,
    softmax_head_cls_loss, ClassifierHead, InfoNce, LossOutput, MatryoshkaSchedule, Temperature,
};
use crate::numerics::{grad_check, Mat, NumericError};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub loss: &'static str,
    pub instances: usize,
    pub max_error: f64,
}

/// Names of the checked losses, in report order.
pub const LOSSES: [&str; 6] = [
    "infonce_triplet",
    "matryoshka_wrap",
    "mrl_classification_loss",
    "cosent_loss",
    "label_negative_cls_loss",
    "softmax_head_cls_loss",
];

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| rand_vec(rng, d)).collect()
}

fn flatten(vs: &[Vec<f64>], head: Option<&Mat>) -> Vec<f64> {
    let mut x: Vec<f64> = vs.iter().flatten().copied().collect();
    if let Some(h) = head {
        x.extend_from_slice(h.as_slice());
    }
    x
}

fn unflatten(x: &[f64], n: usize, d: usize) -> Vec<Vec<f64>> {
    x[..n * d].chunks(d).map(<[f64]>::to_vec).collect()
}

fn analytic(out: &LossOutput) -> Vec<f64> {
    flatten(&out.grads, out.head_grad.as_ref())
}

/// Checks one instance: `inputs` are `n` embeddings of width `d`, optionally
/// followed by a head matrix of the given shape.
fn check<F>(inputs: &[Vec<f64>], head: Option<&Mat>, f: F) -> Result<f64, NumericError>
where
    F: Fn(&[Vec<f64>], Option<&Mat>) -> LossOutput,
{
    let n = inputs.len();
    let d = inputs[0].len();
    let out = f(inputs, head);
    let x0 = flatten(inputs, head);
    let shape = head.map(|h| (h.rows(), h.cols()));
    grad_check(
        |x| {
            let vs = unflatten(x, n, d);
            let h = shape.map(|(r, c)| Mat::from_vec(r, c, x[n * d..].to_vec()).expect("head shape"));
            f(&vs, h.as_ref()).value
        },
        &analytic(&out),
        &x0,
        FD_STEP,
    )
}

fn one(name: &'static str, rng: &mut ChaCha8Rng, k: usize) -> Result<f64, NumericError> {
    match name {
        "infonce_triplet" => {
            let n = 2 + k % 3;
            let with_neg = k % 2 == 0;
            let inputs = rand_batch(rng, if with_neg { 3 * n } else { 2 * n }, 6);
            check(&inputs, None, |x, _| {
                let (a, rest) = x.split_at(n);
                let (p, neg) = rest.split_at(n);
                infonce_triplet(a, p, neg, 20.0).expect("valid batch")
            })
        }
        "matryoshka_wrap" => {
            let n = 2 + k % 2;
            let renorm = k % 2 == 1;
            let sched = MatryoshkaSchedule::new(vec![8, 4, 2], vec![1.0, 0.5, 0.25]).expect("schedule");
            let inputs = rand_batch(rng, 3 * n, 8);
            check(&inputs, None, |x, _| {
                matryoshka_wrap(&InfoNce { scale: 20.0, batch: n }, x, &sched, renorm).expect("valid batch")
            })
        }
        "mrl_classification_loss" => {
            let n = 3;
            let sched = MatryoshkaSchedule::new(vec![8, 4, 2], vec![1.0, 1.0, 0.5]).expect("schedule");
            let tied = k % 2 == 0;
            let cols = if tied { 8 } else { 14 };
            let inputs = rand_batch(rng, n, 8);
            let head = Mat::from_fn(3, cols, |_, _| rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            check(&inputs, Some(&head), |x, h| {
                let head = ClassifierHead { weights: h.expect("head").clone(), tied_truncation: tied };
                mrl_classification_loss(x, &labels, &head, &sched).expect("valid batch")
            })
        }
        "cosent_loss" => {
            let n = 2 + k % 3;
            let inputs = rand_batch(rng, 2 * n, 6);
            let gold: Vec<f64> = (0..n).map(|_| libm::round(rng.gen_range(0.0..4.0)) / 4.0).collect();
            check(&inputs, None, |x, _| {
                let (a, b) = x.split_at(n);
                cosent_loss(a, b, &gold, Temperature::default()).expect("valid batch")
            })
        }
        "label_negative_cls_loss" => {
            let n = 1 + k % 3;
            let inputs = rand_batch(rng, 4 * n, 6);
            let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            check(&inputs, None, |x, _| {
                let (prem, hyps) = x.split_at(n);
                let sets: Vec<Vec<Vec<f64>>> = hyps.chunks(3).map(<[Vec<f64>]>::to_vec).collect();
                label_negative_cls_loss(prem, &sets, &targets, Temperature::default()).expect("valid batch")
            })
        }
        "softmax_head_cls_loss" => {
            let n = 1 + k % 3;
            let d = 5;
            // keep |u_k - v_k| away from the kink at 0
            let mut inputs = rand_batch(rng, 2 * n, d);
            for i in 0..n {
                for j in 0..d {
                    if (inputs[i][j] - inputs[n + i][j]).abs() < 1e-2 {
                        inputs[n + i][j] += 0.1;
                    }
                }
            }
            let head = Mat::from_fn(3, 3 * d, |_, _| rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            check(&inputs, Some(&head), |x, h| {
                let (u, v) = x.split_at(n);
                softmax_head_cls_loss(u, v, &labels, h.expect("head")).expect("valid batch")
            })
        }
        _ => unreachable!("unknown loss name"),
    }
}

/// Runs `instances` seeded instances of every loss in [`LOSSES`].
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<SuiteResult>, NumericError> {
    let mut results = Vec::with_capacity(LOSSES.len());
    for (li, name) in LOSSES.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, li as u64), k as u64));
            worst = worst.max(one(name, &mut rng, k)?);
        }
        results.push(SuiteResult { loss: name, instances, max_error: worst });
    }
    Ok(results)
}
