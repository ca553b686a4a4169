#![allow(dead_code)]

use ::tpadmm::applications::{
    build_inpaint, build_tv_denoise, synthetic_shapes, ImageGrid, MaskOperator, NoiseSpec,
};
use ::tpadmm::linops::LinearMap;
use ::tpadmm::modules::Shape;
use ::tpadmm::problem::{IterateW, Regularizer, SeparableProblem, SmoothLoss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min ½(x − b)² + μ|y|  s.t.  x − y = 0`
pub fn lasso_1d(b: f64, mu: f64) -> SeparableProblem {
    SeparableProblem::new(
        SmoothLoss::quadratic(vec![b]),
        LinearMap::identity(1),
        Regularizer::l1(mu),
        LinearMap::identity(1),
        LinearMap::scaled_identity(1, -1.0),
        vec![0.0],
    )
    .unwrap()
}

pub fn start_at(problem: &SeparableProblem, x0: &[f64]) -> IterateW {
    let mut w = IterateW::zeros(problem);
    w.x.copy_from_slice(x0);
    w
}

pub enum Reference {
    /// Known optimum, absolute tolerance.
    Exact(f64),
    /// Compare against a long exact-ADMM run, relative tolerance.
    LongAdmm,
}

pub struct Scenario {
    pub name: &'static str,
    pub problem: SeparableProblem,
    pub init: IterateW,
    pub shape: Shape,
    pub reference: Reference,
}

pub const TV_MU: f64 = 0.05;

pub fn noisy_shapes(size: usize, seed: u64) -> (ImageGrid, ImageGrid) {
    let clean = synthetic_shapes(size, size).unwrap();
    let noisy = NoiseSpec::uniform(0.2, seed).apply(&clean).unwrap();
    (clean, noisy)
}

pub fn tv_scenario(name: &'static str, size: usize) -> Scenario {
    let (_, b) = noisy_shapes(size, 17);
    let problem = build_tv_denoise(&b, TV_MU).unwrap();
    let init = start_at(&problem, &b.pixels);
    Scenario {
        name,
        problem,
        init,
        shape: b.shape(),
        reference: Reference::LongAdmm,
    }
}

pub fn inpaint_scenario(size: usize, ratio: f64) -> Scenario {
    let b = synthetic_shapes(size, size).unwrap();
    let mask = MaskOperator::random(b.shape(), ratio, 23).unwrap();
    let problem = build_inpaint(&b, &mask, TV_MU).unwrap();
    let x0 = problem.q.apply(&b.pixels).unwrap();
    let init = start_at(&problem, &x0);
    Scenario {
        name: "inpaint-16x16-40%",
        problem,
        init,
        shape: b.shape(),
        reference: Reference::LongAdmm,
    }
}

pub fn lasso_scenario() -> Scenario {
    let problem = lasso_1d(2.0, 1.0);
    let init = IterateW::zeros(&problem);
    Scenario {
        name: "lasso-1d",
        problem,
        init,
        shape: Shape::new(1, 1, 1),
        reference: Reference::Exact(1.5),
    }
}

pub fn all_scenarios() -> Vec<Scenario> {
    vec![
        lasso_scenario(),
        tv_scenario("tv-8x8-20%", 8),
        tv_scenario("tv-64x64-20%", 64),
        inpaint_scenario(16, 0.4),
    ]
}

pub fn dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> LinearMap {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    LinearMap::dense(rows, cols, data).unwrap()
}

/// Quadratic + ℓ1 instance with `B = −I` and a tall random `A`.
pub fn random_instance(seed: u64) -> SeparableProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=10);
    let p = n + rng.gen_range(0..=4);
    let l = n + rng.gen_range(1..=6);
    let q = dense(&mut rng, p, n);
    let a = dense(&mut rng, l, n);
    let b: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..l).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mu = rng.gen_range(0.1..0.6);
    SeparableProblem::new(
        SmoothLoss::quadratic(b),
        q,
        Regularizer::l1(mu),
        a,
        LinearMap::scaled_identity(l, -1.0),
        c,
    )
    .unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
