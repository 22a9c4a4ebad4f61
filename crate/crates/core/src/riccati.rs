//! Backward Riccati recursion on the expanded-state model.
//!
//! The expanded control weight `𝒦_n` only charges block `n` of `U_n`, so it
//! is singular; the recursion uses `𝒦_n + ε ℐ_n` instead, where `ℐ_n` is the
//! identity with block `n` removed. With `R_N := 𝒮`,
//!
//! ```text
//! L_n   = 𝒟_n* R_{n+1} 𝒜 + ℱ_n* R_{n+1} ℬ
//! G_n   = 𝒦_n + ε ℐ_n + 𝒟_n* R_{n+1} 𝒟_n + ℱ_n* R_{n+1} ℱ_n
//! W_n   = -G_n^{-1} L_n
//! R_n   = 𝒞*𝒞 + 𝒜* R_{n+1} 𝒜 + ℬ* R_{n+1} ℬ + L_n* W_n
//! ```
//!
//! The optimal cost is `x_0^T [R_0]_{00} x_0` and the optimal control at time
//! `n` is block `n` of `W_n X_n`. Neither depends on `ε`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expanded::ExpandedOperators;
use crate::linalg;
use crate::model::{scale, Policy, ProblemSpec};

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub epsilon: f64,
    /// `R_0 .. R_{N-1}`, each `dN x dN`.
    pub r: Vec<DMatrix<f64>>,
    /// `W_0 .. W_{N-1}`, each `mN x dN`.
    pub w: Vec<DMatrix<f64>>,
    /// Block `(n, n)` of `G_n`: `K + D^T [R_{n+1}]_{00} D + F^T [R_{n+1}]_{00} F`.
    pub control_blocks: Vec<DMatrix<f64>>,
    /// Top-left `d x d` block of `R_0`.
    pub cost_block: DMatrix<f64>,
    state_dim: usize,
    input_dim: usize,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.r.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `x_0^T [R_0]_{00} x_0`.
    pub fn optimal_cost(&self, x0: &DVector<f64>) -> f64 {
        x0.dot(&(&self.cost_block * x0))
    }

    /// History-linear form of the optimal feedback: `W_{j,n}` is block
    /// `(n, j)` of `W_n`.
    pub fn to_policy(&self) -> Policy {
        let (d, m) = (self.state_dim, self.input_dim);
        let gains = self
            .w
            .iter()
            .enumerate()
            .map(|(n, w)| {
                (0..=n)
                    .map(|j| w.view((n * m, j * d), (m, d)).into_owned())
                    .collect()
            })
            .collect();
        Policy::new(d, m, gains).expect("gain blocks have policy shape")
    }

    /// Largest entry of the rows of `W_n` outside block `n`, relative to
    /// `1 + max |W_n|`. Those rows drive the ε-weighted control slots and
    /// vanish at the optimum.
    pub fn offslot_residual(&self) -> f64 {
        let m = self.input_dim;
        let mut worst = 0.0_f64;
        for (n, w) in self.w.iter().enumerate() {
            let scale = 1.0 + linalg::max_abs(w);
            for row in 0..w.nrows() {
                if row / m == n {
                    continue;
                }
                let r = w.row(row).amax();
                worst = worst.max(r / scale);
            }
        }
        worst
    }
}

/// One backward step from `next` (`R_{n+1}`, or `𝒮` at the terminal stage).
/// Returns `(R_n, W_n, block (n, n) of G_n)`.
fn riccati_step(
    ops: &ExpandedOperators,
    next: &DMatrix<f64>,
    n: usize,
    epsilon: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (d, m) = (ops.state_dim(), ops.input_dim());
    let dn = ops.expanded_dim();
    let mn = ops.control_dim();
    let lead = next.view((0, 0), (d, d)).into_owned();

    let next_a = ops.right_mul_acal(next);

    // L_n has a single nonzero block row, the one for slot n.
    let mut gain_rhs = DMatrix::zeros(mn, dn);
    let mut row = ops.d().transpose() * next_a.rows(0, d);
    {
        let mut first = row.columns_mut(0, d);
        first += ops.f().transpose() * &lead * ops.b();
    }
    gain_rhs.rows_mut(n * m, m).copy_from(&row);

    let control_block =
        ops.k() + ops.d().transpose() * &lead * ops.d() + ops.f().transpose() * &lead * ops.f();
    let mut inner = DMatrix::identity(mn, mn) * epsilon;
    inner
        .view_mut((n * m, n * m), (m, m))
        .copy_from(&control_block);

    let chol = linalg::spd_factor(&inner).map_err(|min_eigenvalue| Error::NotPositiveDefinite {
        what: "regularized control weight",
        stage: n,
        min_eigenvalue,
    })?;
    let gain = -chol.solve(&gain_rhs);

    let mut r = ops.acal_t_mul(&next_a) + gain_rhs.transpose() * &gain;
    {
        let mut top = r.view_mut((0, 0), (d, d));
        top += ops.c().transpose() * ops.c() + ops.b().transpose() * &lead * ops.b();
    }
    let r = linalg::symmetrize(&r);
    let lam = linalg::min_eigenvalue(&r);
    if lam < -linalg::tol_psd(&r) {
        return Err(Error::NotPositiveDefinite {
            what: "Riccati iterate",
            stage: n,
            min_eigenvalue: lam,
        });
    }
    Ok((r, gain, control_block))
}

/// `(R_{N-1}, W_{N-1})` from the terminal weight.
pub fn terminal_condition(
    ops: &ExpandedOperators,
    epsilon: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_epsilon(epsilon)?;
    let (r, w, _) = riccati_step(ops, &ops.scal_dense(), ops.horizon() - 1, epsilon)?;
    Ok((r, w))
}

/// Full backward sweep `R_{N-1} .. R_0`.
pub fn backward_sweep(ops: &ExpandedOperators, epsilon: f64) -> Result<RiccatiSolution> {
    check_epsilon(epsilon)?;
    let horizon = ops.horizon();
    let mut r = vec![DMatrix::zeros(0, 0); horizon];
    let mut w = vec![DMatrix::zeros(0, 0); horizon];
    let mut blocks = vec![DMatrix::zeros(0, 0); horizon];
    let mut next = ops.scal_dense();
    for n in (0..horizon).rev() {
        let (rn, wn, bn) = riccati_step(ops, &next, n, epsilon)?;
        next = rn.clone();
        r[n] = rn;
        w[n] = wn;
        blocks[n] = bn;
    }
    let d = ops.state_dim();
    let cost_block = r[0].view((0, 0), (d, d)).into_owned();
    Ok(RiccatiSolution {
        epsilon,
        r,
        w,
        control_blocks: blocks,
        cost_block,
        state_dim: d,
        input_dim: ops.input_dim(),
    })
}

/// Builds the expanded operators for `spec` and runs the sweep with
/// `spec.epsilon`.
pub fn solve(spec: &ProblemSpec) -> Result<RiccatiSolution> {
    let sys = scale(spec)?;
    let ops = ExpandedOperators::build(&sys, spec)?;
    backward_sweep(&ops, spec.epsilon)
}

/// Largest relative entrywise change of any `R_n` between two regularization
/// levels.
pub fn epsilon_sensitivity(ops: &ExpandedOperators, eps_a: f64, eps_b: f64) -> Result<f64> {
    let a = backward_sweep(ops, eps_a)?;
    let b = backward_sweep(ops, eps_b)?;
    Ok(a.r
        .iter()
        .zip(&b.r)
        .map(|(x, y)| linalg::rel_diff(x, y))
        .fold(0.0, f64::max))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "epsilon",
            format!("must be positive, got {epsilon}"),
        ))
    }
}
