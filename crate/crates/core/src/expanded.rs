//! Expanded-state (companion) form of the fractional system.
//!
//! Stacking the history into `X_k = (x_k, x_{k-1}, .., x_0, 0, .., 0)` with `N`
//! blocks of size `d` turns the full-memory recursion into the memoryless
//! linear system
//!
//! ```text
//! X_{k+1} = 𝒜 X_k + ξ_k ℬ X_k + 𝒟_k U_k + ξ_k ℱ_k U_k
//! ```
//!
//! where `𝒜` is block companion with first block row `[A_0, c_1 I, .., c_{N-1} I]`
//! and identities on the block subdiagonal, `ℬ` carries `B` in its top-left
//! block, and `𝒟_k`, `ℱ_k` route block `k` of the stacked control
//! `U_k ∈ (R^m)^N` through `D` (resp. `F`) into block 0.
//!
//! Operators are kept as their small payload blocks; the `*_dense` methods
//! materialize them for inspection and testing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, ScaledSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedOperators {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    a0: DMatrix<f64>,
    weights: Vec<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    f: DMatrix<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    s: DMatrix<f64>,
}

/// A stacked history `(x_k, .., x_0, 0, ..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedState {
    data: DVector<f64>,
    block: usize,
}

impl ExpandedState {
    pub fn zeros(horizon: usize, state_dim: usize) -> Self {
        Self {
            data: DVector::zeros(horizon * state_dim),
            block: state_dim,
        }
    }

    /// Embeds `x_0 .. x_k`: block 0 holds `x_k`, block `k` holds `x_0`.
    pub fn embed(history: &[DVector<f64>], horizon: usize) -> Result<Self> {
        let Some(first) = history.first() else {
            return Err(Error::invalid("history", "must hold at least x_0"));
        };
        if history.len() > horizon {
            return Err(Error::OutOfRange {
                index: history.len() - 1,
                horizon,
            });
        }
        let d = first.len();
        let mut out = Self::zeros(horizon, d);
        for (slot, x) in history.iter().rev().enumerate() {
            if x.len() != d {
                return Err(Error::dim("history", d, x.len()));
            }
            out.data.rows_mut(slot * d, d).copy_from(x);
        }
        Ok(out)
    }

    pub fn from_vector(data: DVector<f64>, state_dim: usize) -> Self {
        debug_assert_eq!(data.len() % state_dim, 0);
        Self {
            data,
            block: state_dim,
        }
    }

    pub fn block(&self, i: usize) -> DVector<f64> {
        self.data.rows(i * self.block, self.block).into_owned()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn blocks(&self) -> usize {
        self.data.len() / self.block
    }
}

/// Stacked control with `u` in block `k` and zeros elsewhere.
pub fn embed_control(u: &DVector<f64>, k: usize, horizon: usize) -> Result<DVector<f64>> {
    if k >= horizon {
        return Err(Error::OutOfRange { index: k, horizon });
    }
    let m = u.len();
    let mut out = DVector::zeros(m * horizon);
    out.rows_mut(k * m, m).copy_from(u);
    Ok(out)
}

/// Block `k` of a stacked control.
pub fn extract_control(stacked: &DVector<f64>, k: usize, input_dim: usize) -> Result<DVector<f64>> {
    let horizon = stacked.len() / input_dim;
    if k >= horizon {
        return Err(Error::OutOfRange { index: k, horizon });
    }
    Ok(stacked.rows(k * input_dim, input_dim).into_owned())
}

impl ExpandedOperators {
    pub fn build(sys: &ScaledSystem, spec: &ProblemSpec) -> Result<Self> {
        let d = sys.state_dim();
        let m = sys.input_dim();
        if sys.horizon == 0 {
            return Err(Error::invalid("N", "horizon must be at least 1"));
        }
        if sys.weights.len() != sys.horizon {
            return Err(Error::dim("weights", sys.horizon, sys.weights.len()));
        }
        if spec.c.ncols() != d {
            return Err(Error::dim(
                "C",
                format!("?x{d}"),
                format!("{}x{}", spec.c.nrows(), spec.c.ncols()),
            ));
        }
        if spec.k.shape() != (m, m) {
            return Err(Error::dim(
                "K",
                format!("{m}x{m}"),
                format!("{:?}", spec.k.shape()),
            ));
        }
        if spec.s.shape() != (d, d) {
            return Err(Error::dim(
                "S",
                format!("{d}x{d}"),
                format!("{:?}", spec.s.shape()),
            ));
        }
        Ok(Self {
            horizon: sys.horizon,
            state_dim: d,
            input_dim: m,
            output_dim: spec.c.nrows(),
            a0: sys.a0.clone(),
            weights: sys.weights.clone(),
            b: sys.b.clone(),
            d: sys.d.clone(),
            f: sys.f.clone(),
            c: spec.c.clone(),
            k: spec.k.clone(),
            s: spec.s.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `dN`.
    pub fn expanded_dim(&self) -> usize {
        self.state_dim * self.horizon
    }

    /// `mN`.
    pub fn control_dim(&self) -> usize {
        self.input_dim * self.horizon
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn acal_dense(&self) -> DMatrix<f64> {
        let (d, n) = (self.state_dim, self.horizon);
        let mut out = DMatrix::zeros(d * n, d * n);
        out.view_mut((0, 0), (d, d)).copy_from(&self.a0);
        for j in 1..n {
            out.view_mut((0, j * d), (d, d))
                .copy_from(&(DMatrix::identity(d, d) * self.weights[j]));
            out.view_mut((j * d, (j - 1) * d), (d, d))
                .copy_from(&DMatrix::identity(d, d));
        }
        out
    }

    pub fn bcal_dense(&self) -> DMatrix<f64> {
        let d = self.state_dim;
        let mut out = DMatrix::zeros(self.expanded_dim(), self.expanded_dim());
        out.view_mut((0, 0), (d, d)).copy_from(&self.b);
        out
    }

    fn route_dense(&self, payload: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.expanded_dim(), self.control_dim());
        out.view_mut((0, k * self.input_dim), (self.state_dim, self.input_dim))
            .copy_from(payload);
        out
    }

    pub fn dcal_dense(&self, k: usize) -> DMatrix<f64> {
        self.route_dense(&self.d, k)
    }

    pub fn fcal_dense(&self, k: usize) -> DMatrix<f64> {
        self.route_dense(&self.f, k)
    }

    pub fn kcal_dense(&self, k: usize) -> DMatrix<f64> {
        let m = self.input_dim;
        let mut out = DMatrix::zeros(self.control_dim(), self.control_dim());
        out.view_mut((k * m, k * m), (m, m)).copy_from(&self.k);
        out
    }

    /// Identity on `(R^m)^N` with block `k` zeroed.
    pub fn ical_dense(&self, k: usize) -> DMatrix<f64> {
        let m = self.input_dim;
        let mut out = DMatrix::identity(self.control_dim(), self.control_dim());
        out.view_mut((k * m, k * m), (m, m)).fill(0.0);
        out
    }

    pub fn ccal_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.output_dim * self.horizon, self.expanded_dim());
        out.view_mut((0, 0), (self.output_dim, self.state_dim))
            .copy_from(&self.c);
        out
    }

    pub fn scal_dense(&self) -> DMatrix<f64> {
        let d = self.state_dim;
        let mut out = DMatrix::zeros(self.expanded_dim(), self.expanded_dim());
        out.view_mut((0, 0), (d, d)).copy_from(&self.s);
        out
    }

    /// `M 𝒜` for `M` with `dN` columns.
    pub fn right_mul_acal(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, n) = (self.state_dim, self.horizon);
        debug_assert_eq!(m.ncols(), d * n);
        let rows = m.nrows();
        let first = m.columns(0, d);
        let mut out = DMatrix::zeros(rows, d * n);
        let mut lead = first * &self.a0;
        if n > 1 {
            lead += m.columns(d, d);
        }
        out.columns_mut(0, d).copy_from(&lead);
        for j in 1..n {
            let mut blk = first * self.weights[j];
            if j + 1 < n {
                blk += m.columns((j + 1) * d, d);
            }
            out.columns_mut(j * d, d).copy_from(&blk);
        }
        out
    }

    /// `𝒜^T M` for `M` with `dN` rows.
    pub fn acal_t_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.right_mul_acal(&m.transpose()).transpose()
    }

    /// `𝒜 M` for `M` with `dN` rows.
    pub fn acal_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, n) = (self.state_dim, self.horizon);
        debug_assert_eq!(m.nrows(), d * n);
        let mut out = DMatrix::zeros(d * n, m.ncols());
        let mut lead = &self.a0 * m.rows(0, d);
        for j in 1..n {
            lead += m.rows(j * d, d) * self.weights[j];
        }
        out.rows_mut(0, d).copy_from(&lead);
        if n > 1 {
            out.rows_mut(d, d * (n - 1))
                .copy_from(&m.rows(0, d * (n - 1)));
        }
        out
    }

    /// One step of the expanded system.
    pub fn step(
        &self,
        x: &ExpandedState,
        u: &DVector<f64>,
        k: usize,
        xi: f64,
    ) -> Result<ExpandedState> {
        let (d, m, n) = (self.state_dim, self.input_dim, self.horizon);
        if x.as_vector().len() != d * n {
            return Err(Error::dim("X", d * n, x.as_vector().len()));
        }
        if u.len() != m * n {
            return Err(Error::dim("U", m * n, u.len()));
        }
        if k >= n {
            return Err(Error::OutOfRange {
                index: k,
                horizon: n,
            });
        }
        let xv = x.as_vector();
        let x_lead = xv.rows(0, d);
        let u_k = u.rows(k * m, m);
        let mut lead =
            &self.a0 * x_lead + (&self.b * x_lead) * xi + &self.d * u_k + (&self.f * u_k) * xi;
        for j in 1..n {
            lead += xv.rows(j * d, d) * self.weights[j];
        }
        let mut out = DVector::zeros(d * n);
        out.rows_mut(0, d).copy_from(&lead);
        if n > 1 {
            out.rows_mut(d, d * (n - 1))
                .copy_from(&xv.rows(0, d * (n - 1)));
        }
        Ok(ExpandedState::from_vector(out, d))
    }

    /// `(<𝒞*𝒞 X, X>, <𝒦_k U, U>)`.
    pub fn cost_terms(&self, x: &ExpandedState, u: &DVector<f64>, k: usize) -> Result<(f64, f64)> {
        let (d, m, n) = (self.state_dim, self.input_dim, self.horizon);
        if x.as_vector().len() != d * n {
            return Err(Error::dim("X", d * n, x.as_vector().len()));
        }
        if u.len() != m * n {
            return Err(Error::dim("U", m * n, u.len()));
        }
        if k >= n {
            return Err(Error::OutOfRange {
                index: k,
                horizon: n,
            });
        }
        let state = (&self.c * x.as_vector().rows(0, d)).norm_squared();
        let u_k = u.rows(k * m, m);
        let control = u_k.dot(&(&self.k * u_k));
        Ok((state, control))
    }

    /// `<𝒮 X, X>`.
    pub fn terminal_term(&self, x: &ExpandedState) -> f64 {
        let lead = x.as_vector().rows(0, self.state_dim);
        lead.dot(&(&self.s * lead))
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{scale, Policy, Trajectory};
    use crate::problems::{example1, random_dims, random_instance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn ops_for(spec: &ProblemSpec) -> ExpandedOperators {
        ExpandedOperators::build(&scale(spec).unwrap(), spec).unwrap()
    }

    #[test]
    fn companion_structure() {
        let ops = ops_for(&example1());
        let a = ops.acal_dense();
        assert_eq!(a.shape(), (8, 8));
        let blk01 = a.view((0, 2), (2, 2)).into_owned();
        assert!((blk01 - DMatrix::identity(2, 2) * 0.125).amax() < 1e-15);
        assert_eq!(a.view((4, 2), (2, 2)).into_owned(), DMatrix::identity(2, 2));
        assert_eq!(a.view((4, 0), (2, 2)).into_owned(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn one_step_horizon_degenerates() {
        let ops = ops_for(&example1().with_horizon(1));
        let a0 = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 1.0, 0.5]);
        assert_eq!(ops.acal_dense(), a0);
        assert_eq!(ops.bcal_dense(), example1().b);
    }

    #[test]
    fn structured_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let dims = random_dims(&mut rng, 3, 5);
            let ops = ops_for(&random_instance(&mut rng, dims));
            let n = ops.expanded_dim();
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = ops.acal_dense();
            assert!((ops.right_mul_acal(&m) - &m * &a).amax() < 1e-13);
            assert!((ops.acal_t_mul(&m) - a.transpose() * &m).amax() < 1e-13);
            assert!((ops.acal_mul(&m) - &a * &m).amax() < 1e-13);
        }
    }

    #[test]
    fn weights_are_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let dims = random_dims(&mut rng, 3, 5);
            let spec = random_instance(&mut rng, dims);
            let ops = ops_for(&spec);
            let k_min = linalg::min_eigenvalue(&spec.k);
            assert!(linalg::is_psd(&ops.scal_dense()));
            for k in 0..ops.horizon() {
                assert!(linalg::is_psd(&ops.kcal_dense(k)));
                for eps in [1e-6, 1e-2, 1.0] {
                    let reg = ops.kcal_dense(k) + ops.ical_dense(k) * eps;
                    let lam = linalg::min_eigenvalue(&reg);
                    assert!(
                        lam >= eps.min(k_min) * (1.0 - 1e-9),
                        "{lam} vs {eps} {k_min}"
                    );
                }
            }
        }
    }

    #[test]
    fn embedding() {
        let x0 = v(&[1.0, 2.0]);
        let e = ExpandedState::embed(std::slice::from_ref(&x0), 4).unwrap();
        assert_eq!(e.block(0), x0);
        for i in 1..4 {
            assert_eq!(e.block(i), v(&[0.0, 0.0]));
        }
        let h = [v(&[1.0, 2.0]), v(&[3.0, 4.0]), v(&[5.0, 6.0])];
        let e = ExpandedState::embed(&h, 4).unwrap();
        assert_eq!(e.block(0), h[2]);
        assert_eq!(e.block(2), h[0]);
        assert_eq!(e.block(3), v(&[0.0, 0.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..5 {
            let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let stacked = embed_control(&u, k, 5).unwrap();
            assert_eq!(extract_control(&stacked, k, 3).unwrap(), u);
        }
        assert!(embed_control(&v(&[1.0]), 5, 5).is_err());
        assert!(extract_control(&v(&[1.0, 2.0]), 2, 1).is_err());
    }

    #[test]
    fn step_examples() {
        let ops = ops_for(&example1());
        let zero = ExpandedState::zeros(4, 2);
        let out = ops.step(&zero, &DVector::zeros(4), 0, 0.4).unwrap();
        assert_eq!(out, zero);

        let x0 = v(&[0.2, 0.3]);
        let x = ExpandedState::embed(std::slice::from_ref(&x0), 4).unwrap();
        let out = ops.step(&x, &DVector::zeros(4), 0, 0.0).unwrap();
        assert!((out.block(0) - v(&[0.3, 0.35])).amax() < 1e-15);
        assert_eq!(out.block(1), x0);
    }

    #[test]
    fn step_matches_fractional_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let dims = random_dims(&mut rng, 3, 6);
            let spec = random_instance(&mut rng, dims);
            let sys = scale(&spec).unwrap();
            let ops = ExpandedOperators::build(&sys, &spec).unwrap();
            let k = rng.random_range(0..dims.horizon);
            let hist: Vec<_> = (0..=k)
                .map(|_| DVector::from_fn(dims.state, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let u = DVector::from_fn(dims.input, |_, _| rng.random_range(-1.0..1.0));
            let xi = rng.random_range(-2.0..2.0);
            let direct = sys.step(&hist, &u, xi).unwrap();
            let x = ExpandedState::embed(&hist, dims.horizon).unwrap();
            let big_u = embed_control(&u, k, dims.horizon).unwrap();
            let lifted = ops.step(&x, &big_u, k, xi).unwrap();
            assert!((lifted.block(0) - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn cost_terms_examples() {
        let spec = example1();
        let ops = ops_for(&spec);
        let (a, b) = ops
            .cost_terms(&ExpandedState::zeros(4, 2), &DVector::zeros(4), 1)
            .unwrap();
        assert_eq!((a, b), (0.0, 0.0));

        let hist = [v(&[0.2, 0.3]), v(&[-1.0, 0.5])];
        let u = v(&[0.7]);
        let x = ExpandedState::embed(&hist, 4).unwrap();
        let (sc, uc) = ops
            .cost_terms(&x, &embed_control(&u, 1, 4).unwrap(), 1)
            .unwrap();
        let direct = spec.stage_cost(&hist[1], &u);
        assert!((sc + uc - direct).abs() < 1e-14);
        assert!((uc - 0.49).abs() < 1e-14);

        let mut tail = DVector::zeros(8);
        tail.rows_mut(2, 6).fill(1.0);
        let (sc, _) = ops
            .cost_terms(&ExpandedState::from_vector(tail, 2), &DVector::zeros(4), 0)
            .unwrap();
        assert_eq!(sc, 0.0);
    }

    #[test]
    fn trajectory_and_cost_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let dims = random_dims(&mut rng, 3, 6);
            let spec = random_instance(&mut rng, dims);
            let sys = scale(&spec).unwrap();
            let ops = ExpandedOperators::build(&sys, &spec).unwrap();
            let n = dims.horizon;
            let mut policy = Policy::zeros(n, dims.state, dims.input);
            for t in 0..n {
                for j in 0..=t {
                    *policy.gain_mut(t, j) = DMatrix::from_fn(dims.input, dims.state, |_, _| {
                        rng.random_range(-0.5..0.5)
                    });
                }
            }
            let noises: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let traj = Trajectory::rollout(&spec, &sys, &policy, &noises).unwrap();

            let mut x = ExpandedState::embed(&traj.states[..1], n).unwrap();
            let mut cost = 0.0;
            for t in 0..n {
                let u = embed_control(&traj.controls[t], t, n).unwrap();
                let (a, b) = ops.cost_terms(&x, &u, t).unwrap();
                cost += a + b;
                x = ops.step(&x, &u, t, noises[t]).unwrap();
                let scale = 1.0 + traj.states[t + 1].amax();
                assert!((x.block(0) - &traj.states[t + 1]).amax() < 1e-12 * scale);
            }
            cost += ops.terminal_term(&x);
            let rel = (cost - traj.realized_cost).abs() / traj.realized_cost.abs().max(1.0);
            assert!(rel < 1e-12, "{rel}");
        }
    }
}
