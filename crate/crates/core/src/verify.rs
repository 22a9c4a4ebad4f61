//! Independent reference computations.
//!
//! * [`tree_optimal_cost`] enumerates every Rademacher noise history and
//!   solves the problem by backward induction node by node, with value
//!   functions kept as quadratic forms in the stacked history
//!   `Z_k = (x_0, .., x_k)`.
//! * [`moment_cost`] evaluates any history-linear policy exactly by
//!   propagating `M_k = E[Z_k Z_k^T]`.
//! * [`deterministic_reference`] is a textbook LQ sweep on the companion
//!   form, usable when the plant has no noise.
//!
//! None of these go through the expanded-state operators or the term
//! families, so they check both solvers from the outside.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{scale, Policy, ProblemSpec, ScaledSystem};

/// Default horizon cap for the tree oracle.
pub const DEFAULT_TREE_CAP: usize = 8;

/// Result of the scenario-tree backward induction.
#[derive(Debug, Clone)]
pub struct TreeSolution {
    pub cost: f64,
    /// Value form at the root, a `d x d` matrix in `x_0`.
    pub value_form: DMatrix<f64>,
    /// Nodes visited at each depth `0..=N`.
    pub nodes_per_depth: Vec<usize>,
}

/// Coefficients of `x_{k+1}` in `Z_k` (without the noise part) and the
/// noise part, both `d x d(k+1)`.
fn transition_blocks(sys: &ScaledSystem, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = sys.state_dim();
    let mut det = DMatrix::zeros(d, d * (k + 1));
    let mut noise = DMatrix::zeros(d, d * (k + 1));
    for i in 0..=k {
        let lag = k - i;
        let mut blk = det.view_mut((0, i * d), (d, d));
        if lag == 0 {
            blk.copy_from(&sys.a0);
        } else {
            blk.fill_with_identity();
            blk *= sys.weights[lag];
        }
    }
    noise.view_mut((0, k * d), (d, d)).copy_from(&sys.b);
    (det, noise)
}

/// `[I; T]`: maps `Z_k` to `Z_{k+1}` given the new-row coefficients `T`.
fn stack_identity(t: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, w) = t.shape();
    let mut out = DMatrix::zeros(w + d, w);
    out.view_mut((0, 0), (w, w)).fill_with_identity();
    out.view_mut((w, 0), (d, w)).copy_from(t);
    out
}

/// `[0; E]`.
fn stack_zero(e: &DMatrix<f64>, above: usize) -> DMatrix<f64> {
    let (d, m) = e.shape();
    let mut out = DMatrix::zeros(above + d, m);
    out.view_mut((above, 0), (d, m)).copy_from(e);
    out
}

struct Tree<'a> {
    spec: &'a ProblemSpec,
    sys: ScaledSystem,
    cc: DMatrix<f64>,
    nodes: Vec<usize>,
}

impl Tree<'_> {
    /// Value form of the node at depth `k`; children are evaluated
    /// recursively for `ξ_k = +1` and `ξ_k = -1`.
    fn node(&mut self, k: usize) -> Result<DMatrix<f64>> {
        self.nodes[k] += 1;
        let d = self.sys.state_dim();
        let w = d * (k + 1);
        if k == self.sys.horizon {
            let mut v = DMatrix::zeros(w, w);
            v.view_mut((w - d, w - d), (d, d)).copy_from(&self.spec.s);
            return Ok(v);
        }
        let (det, noise) = transition_blocks(&self.sys, k);
        let mut h = self.spec.k.clone();
        let mut g = DMatrix::zeros(self.sys.input_dim(), w);
        let mut v = DMatrix::zeros(w, w);
        v.view_mut((w - d, w - d), (d, d)).copy_from(&self.cc);
        for xi in [1.0, -1.0] {
            let child = self.node(k + 1)?;
            let p = stack_identity(&(&det + &noise * xi));
            let q = stack_zero(&(&self.sys.d + &self.sys.f * xi), w);
            let mq = &child * &q;
            let mp = &child * &p;
            h += q.transpose() * &mq * 0.5;
            g += q.transpose() * &mp * 0.5;
            v += p.transpose() * &mp * 0.5;
        }
        let h = linalg::symmetrize(&h);
        let chol = linalg::spd_factor(&h).map_err(|min_eigenvalue| Error::NotPositiveDefinite {
            what: "tree control weight",
            stage: k,
            min_eigenvalue,
        })?;
        v -= g.transpose() * chol.solve(&g);
        Ok(linalg::symmetrize(&v))
    }
}

/// Exact optimum over all history-measurable controls when `ξ_k = ±1` with
/// equal probability, by exhaustive enumeration of the `2^N` histories.
pub fn tree_solve(spec: &ProblemSpec, max_horizon: usize) -> Result<TreeSolution> {
    let sys = scale(spec)?;
    if sys.horizon > max_horizon {
        return Err(Error::HorizonTooLarge {
            horizon: sys.horizon,
            cap: max_horizon,
        });
    }
    let mut tree = Tree {
        spec,
        cc: spec.c.transpose() * &spec.c,
        nodes: vec![0; sys.horizon + 1],
        sys,
    };
    let value_form = tree.node(0)?;
    Ok(TreeSolution {
        cost: spec.x0.dot(&(&value_form * &spec.x0)),
        value_form,
        nodes_per_depth: tree.nodes,
    })
}

pub fn tree_optimal_cost(spec: &ProblemSpec, max_horizon: usize) -> Result<f64> {
    tree_solve(spec, max_horizon).map(|t| t.cost)
}

/// `u_k = L_k Z_k` with `Z_k = (x_0, .., x_k)`.
fn feedback_row(policy: &Policy, k: usize) -> DMatrix<f64> {
    let (d, m) = (policy.state_dim(), policy.input_dim());
    let mut l = DMatrix::zeros(m, d * (k + 1));
    for (j, w) in policy.stage(k).iter().enumerate() {
        l.view_mut((0, (k - j) * d), (m, d)).copy_from(w);
    }
    l
}

fn check_policy(spec: &ProblemSpec, policy: &Policy) -> Result<()> {
    if policy.horizon() != spec.horizon {
        return Err(Error::dim("policy horizon", spec.horizon, policy.horizon()));
    }
    if policy.state_dim() != spec.state_dim() || policy.input_dim() != spec.input_dim() {
        return Err(Error::dim(
            "policy gain shape",
            format!("{}x{}", spec.input_dim(), spec.state_dim()),
            format!("{}x{}", policy.input_dim(), policy.state_dim()),
        ));
    }
    Ok(())
}

/// `E[Z_k Z_k^T]` for `k = 0..=N` under the closed loop, together with the
/// expected cost. Only the first two noise moments enter.
pub fn second_moments(spec: &ProblemSpec, policy: &Policy) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let sys = scale(spec)?;
    check_policy(spec, policy)?;
    let d = sys.state_dim();
    let cc = spec.c.transpose() * &spec.c;
    let mut moments = Vec::with_capacity(sys.horizon + 1);
    let mut m = &spec.x0 * spec.x0.transpose();
    let mut cost = 0.0;
    for k in 0..sys.horizon {
        let w = d * (k + 1);
        let l = feedback_row(policy, k);
        let last = m.view((w - d, w - d), (d, d));
        cost += (&cc * last).trace();
        cost += (l.transpose() * &spec.k * &l * &m).trace();

        let (det, noise) = transition_blocks(&sys, k);
        let t0 = stack_identity(&(det + &sys.d * &l));
        let t1 = stack_zero(&(noise + &sys.f * &l), w);
        let next = &t0 * &m * t0.transpose() + &t1 * &m * t1.transpose();
        moments.push(m);
        m = linalg::symmetrize(&next);
    }
    let w = d * (sys.horizon + 1);
    cost += (&spec.s * m.view((w - d, w - d), (d, d))).trace();
    moments.push(m);
    Ok((moments, cost))
}

/// Exact expected cost of `policy`.
pub fn moment_cost(spec: &ProblemSpec, policy: &Policy) -> Result<f64> {
    second_moments(spec, policy).map(|(_, c)| c)
}

#[derive(Debug, Clone)]
pub struct DeterministicReference {
    pub policy: Policy,
    pub cost: f64,
    /// Top-left `d x d` block of the value matrix at time 0.
    pub cost_block: DMatrix<f64>,
}

/// Plain LQ backward sweep on the companion-form system
/// `X_{k+1} = A X_k + [D; 0] u_k` with stage weights `C^T C` on block 0,
/// `K` on `u_k` and terminal `S` on block 0. Requires `B = F = 0`.
pub fn deterministic_reference(spec: &ProblemSpec) -> Result<DeterministicReference> {
    if linalg::max_abs(&spec.b) != 0.0 || linalg::max_abs(&spec.f) != 0.0 {
        return Err(Error::Unsupported(
            "deterministic reference requires B = 0 and F = 0".into(),
        ));
    }
    let sys = scale(spec)?;
    let (d, m, n) = (sys.state_dim(), sys.input_dim(), sys.horizon);
    let dim = d * n;

    let mut a = DMatrix::zeros(dim, dim);
    a.view_mut((0, 0), (d, d)).copy_from(&sys.a0);
    for j in 1..n {
        a.view_mut((0, j * d), (d, d)).fill_with_identity();
        let mut blk = a.view_mut((0, j * d), (d, d));
        blk *= sys.weights[j];
        a.view_mut((j * d, (j - 1) * d), (d, d))
            .fill_with_identity();
    }
    let mut bu = DMatrix::zeros(dim, m);
    bu.view_mut((0, 0), (d, m)).copy_from(&sys.d);
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (d, d))
        .copy_from(&(spec.c.transpose() * &spec.c));
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((0, 0), (d, d)).copy_from(&spec.s);

    let mut gains = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let pa = &p * &a;
        let pb = &p * &bu;
        let h = linalg::symmetrize(&(&spec.k + bu.transpose() * &pb));
        let chol = linalg::spd_factor(&h).map_err(|min_eigenvalue| Error::NotPositiveDefinite {
            what: "LQ control weight",
            stage: k,
            min_eigenvalue,
        })?;
        let g = -chol.solve(&(bu.transpose() * &pa));
        p = linalg::symmetrize(&(&q + a.transpose() * &pa + pa.transpose() * &bu * &g));
        gains[k] = (0..=k)
            .map(|j| g.view((0, j * d), (m, d)).into_owned())
            .collect();
    }
    let cost_block = p.view((0, 0), (d, d)).into_owned();
    let x0: &DVector<f64> = &spec.x0;
    Ok(DeterministicReference {
        policy: Policy::new(d, m, gains)?,
        cost: x0.dot(&(&cost_block * x0)),
        cost_block,
    })
}
