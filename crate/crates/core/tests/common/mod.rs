#![allow(dead_code)]

use std::path::PathBuf;

use fedbackdoor::nn::{loss_and_grad_with, Batch, DistNorm, LossSpec, Matrix, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub struct GradCase {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub reference: ParamVector,
    pub batch: Batch,
}

/// Random MLP up to `[16, 8, 4]` and batch up to 8, all drawn from `seed`.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=16);
    let mut sizes = vec![input];
    if rng.random_bool(0.7) {
        sizes.push(rng.random_range(1..=8));
    }
    let k = rng.random_range(2..=4);
    sizes.push(k);
    let spec = ModelSpec::new(sizes).unwrap();
    let n = spec.n_params();
    let params = ParamVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let reference = ParamVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b = rng.random_range(1..=8);
    let inputs = Matrix::new(b, input, (0..b * input).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
    GradCase {
        spec,
        params,
        reference,
        batch: Batch::new(inputs, labels).unwrap(),
    }
}

fn scalar_loss(c: &GradCase, params: &[f64], loss: LossSpec, norm: DistNorm) -> f64 {
    let p = ParamVector::new(params.to_vec()).unwrap();
    loss_and_grad_with(&p, &c.spec, &c.batch, loss, Some(&c.reference), norm)
        .unwrap()
        .0
}

/// Largest `|analytic - fd| / max(|analytic|, |fd|, FD_FLOOR)` over all
/// coordinates, with central differences that only ever call the loss value.
pub fn fd_max_rel_err(c: &GradCase, loss: LossSpec, norm: DistNorm) -> f64 {
    let (_, grad) = loss_and_grad_with(&c.params, &c.spec, &c.batch, loss, Some(&c.reference), norm).unwrap();
    let mut x = c.params.as_slice().to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + FD_STEP;
        let up = scalar_loss(c, &x, loss, norm);
        x[k] = orig - FD_STEP;
        let down = scalar_loss(c, &x, loss, norm);
        x[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = grad[k];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

pub fn all_losses() -> [LossSpec; 5] {
    [
        LossSpec::Class,
        LossSpec::Dist,
        LossSpec::Combined { p: 0.0 },
        LossSpec::Combined { p: 0.3 },
        LossSpec::Combined { p: 1.0 },
    ]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
