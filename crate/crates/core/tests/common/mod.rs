#![allow(dead_code)]

use fraclq::problems::{random_dims, random_instance, Dims};
use fraclq::ProblemSpec;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn example_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/example1.json")
}

/// `count` random well-posed instances with `d, m, p <= max_dim` and
/// `N <= max_horizon`, reproducible from `seed`.
pub fn instances(seed: u64, count: usize, max_dim: usize, max_horizon: usize) -> Vec<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dims = random_dims(&mut rng, max_dim, max_horizon);
            random_instance(&mut rng, dims)
        })
        .collect()
}

pub fn instance(seed: u64, dims: Dims) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_instance(&mut rng, dims)
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

pub fn without_noise(spec: &ProblemSpec) -> ProblemSpec {
    let mut s = spec.clone();
    s.b = DMatrix::zeros(s.b.nrows(), s.b.ncols());
    s.f = DMatrix::zeros(s.f.nrows(), s.f.ncols());
    s
}
