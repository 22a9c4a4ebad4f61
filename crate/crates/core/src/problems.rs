//! Ready-made problem instances: the two-state reference problem and a
//! generator of random well-posed instances for cross-checking.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{ProblemSpec, DEFAULT_EPSILON};

/// Two-state, single-input reference problem with `α = 1/2`, `h = 1`, `N = 4`.
pub fn example1() -> ProblemSpec {
    ProblemSpec {
        alpha: 0.5,
        h: 1.0,
        horizon: 4,
        a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
        b: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        d: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        f: DMatrix::from_row_slice(2, 1, &[2.0, 1.0]),
        c: DMatrix::from_row_slice(1, 2, &[2.0, -1.0]),
        k: DMatrix::from_element(1, 1, 1.0),
        s: DMatrix::identity(2, 2) * 2.0,
        x0: DVector::from_column_slice(&[0.2, 0.3]),
        epsilon: DEFAULT_EPSILON,
    }
}

/// Shape of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub input: usize,
    pub output: usize,
    pub horizon: usize,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Random well-posed instance: entries uniform in `[-1, 1]`, `K = I + G G^T`,
/// `S = H H^T`, `α` uniform in `[0.1, 1.9]` and `h` uniform in `[0.5, 1.5]`.
pub fn random_instance(rng: &mut impl Rng, dims: Dims) -> ProblemSpec {
    let Dims {
        state: d,
        input: m,
        output: p,
        horizon,
    } = dims;
    let g = uniform(rng, m, m);
    let k = DMatrix::identity(m, m) + &g * g.transpose();
    let hh = uniform(rng, d, d);
    let s = &hh * hh.transpose();
    ProblemSpec {
        alpha: rng.random_range(0.1..=1.9),
        h: rng.random_range(0.5..=1.5),
        horizon,
        a: uniform(rng, d, d),
        b: uniform(rng, d, d),
        d: uniform(rng, d, m),
        f: uniform(rng, d, m),
        c: uniform(rng, p, d),
        k: (&k + k.transpose()) * 0.5,
        s: (&s + s.transpose()) * 0.5,
        x0: DVector::from_fn(d, |_, _| rng.random_range(-1.0..=1.0)),
        epsilon: DEFAULT_EPSILON,
    }
}

/// Random dimensions with `d, m, p <= max_dim` and `1 <= N <= max_horizon`.
pub fn random_dims(rng: &mut impl Rng, max_dim: usize, max_horizon: usize) -> Dims {
    Dims {
        state: rng.random_range(1..=max_dim),
        input: rng.random_range(1..=max_dim),
        output: rng.random_range(1..=max_dim),
        horizon: rng.random_range(1..=max_horizon),
    }
}
