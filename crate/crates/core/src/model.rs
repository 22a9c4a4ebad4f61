//! Problem data, Grünwald–Letnikov weights, the scaled fractional dynamics and
//! history-linear policies.
//!
//! The raw system is the fractional difference equation
//!
//! ```text
//! Δ^[α] x_{k+1} = A x_k + ξ_k B x_k + D u_k + ξ_k F u_k
//! ```
//!
//! with `Δ^[α]` the Grünwald–Letnikov difference of step `h`. Multiplying
//! through by `h^α` gives the explicit full-memory recursion
//!
//! ```text
//! x_{k+1} = A_0 x_k + Σ_{j=1..k} c_j x_{k-j} + ξ_k B x_k + D u_k + ξ_k F u_k
//! ```
//!
//! where `A_0 = h^α A + α I`, `c_j = (-1)^j binom(α, j+1)` and `B, D, F` are
//! the raw matrices scaled by `h^α`. [`ScaledSystem`] holds that form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Regularization used by the expanded-state Riccati solver when none is given.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Generalized binomial coefficient `binom(alpha, j)`, evaluated as a running
/// product so no factorial is ever formed.
pub fn binomial_coeff(alpha: f64, j: usize) -> f64 {
    (1..=j).fold(1.0, |acc, i| acc * (alpha + 1.0 - i as f64) / i as f64)
}

/// Grünwald–Letnikov memory weight `c_j = (-1)^j binom(alpha, j+1)`.
pub fn gl_weight(alpha: f64, j: usize) -> f64 {
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * binomial_coeff(alpha, j + 1)
}

/// A finite-horizon fractional LQ problem in its raw (unscaled) form.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Fractional order, in `(0, 2)`.
    pub alpha: f64,
    /// Step size, positive.
    pub h: f64,
    /// Horizon `N >= 1`.
    pub horizon: usize,
    /// Drift matrix, `d x d`.
    pub a: DMatrix<f64>,
    /// Multiplicative state-noise matrix, `d x d`.
    pub b: DMatrix<f64>,
    /// Input matrix, `d x m`.
    pub d: DMatrix<f64>,
    /// Multiplicative input-noise matrix, `d x m`.
    pub f: DMatrix<f64>,
    /// Output weight, `p x d`; the stage cost charges `|C x|^2`.
    pub c: DMatrix<f64>,
    /// Control weight, `m x m`, symmetric positive definite.
    pub k: DMatrix<f64>,
    /// Terminal weight, `d x d`, symmetric positive semidefinite.
    pub s: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Regularization of the expanded control weight; only the Riccati
    /// method reads it.
    pub epsilon: f64,
}

impl ProblemSpec {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Checks every invariant; the first violation is returned.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::invalid(
                "alpha",
                format!("must lie in (0, 2), got {}", self.alpha),
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(
                "h",
                format!("must be positive, got {}", self.h),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("N", "horizon must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be positive, got {}", self.epsilon),
            ));
        }

        let d = self.state_dim();
        let m = self.input_dim();
        if d == 0 || m == 0 {
            return Err(Error::invalid(
                "A",
                "state and input dimensions must be positive",
            ));
        }
        check_shape("A", &self.a, d, d)?;
        check_shape("B", &self.b, d, d)?;
        check_shape("D", &self.d, d, m)?;
        check_shape("F", &self.f, d, m)?;
        check_shape("C", &self.c, self.output_dim(), d)?;
        check_shape("K", &self.k, m, m)?;
        check_shape("S", &self.s, d, d)?;
        if self.x0.len() != d {
            return Err(Error::dim("x0", d, self.x0.len()));
        }

        let all = [
            ("A", &self.a),
            ("B", &self.b),
            ("D", &self.d),
            ("F", &self.f),
            ("C", &self.c),
            ("K", &self.k),
            ("S", &self.s),
        ];
        for (name, m) in all {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(name, "contains a non-finite entry"));
            }
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0", "contains a non-finite entry"));
        }

        for (name, m) in [("K", &self.k), ("S", &self.s)] {
            let skew = linalg::asymmetry(m);
            if skew > linalg::tol_psd(m) {
                return Err(Error::invalid(
                    name,
                    format!("not symmetric: max |M - M^T| = {skew:e}"),
                ));
            }
        }
        let k_min = linalg::min_eigenvalue(&self.k);
        if k_min <= linalg::tol_psd(&self.k) {
            return Err(Error::invalid(
                "K",
                format!("not positive definite: λ_min = {k_min}"),
            ));
        }
        let s_min = linalg::min_eigenvalue(&self.s);
        if s_min < -linalg::tol_psd(&self.s) {
            return Err(Error::invalid(
                "S",
                format!("not positive semidefinite: λ_min = {s_min}"),
            ));
        }
        Ok(())
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// `|C x|^2 + u^T K u`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (&self.c * x).norm_squared() + u.dot(&(&self.k * u))
    }

    /// `x^T S x`.
    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.s * x))
    }
}

fn check_shape(name: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dim(
            name,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// The fractional system after multiplying through by `h^α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSystem {
    pub alpha: f64,
    pub horizon: usize,
    /// `h^α A + α I`.
    pub a0: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// `c_0 .. c_{N-1}`; the lag-`j` memory matrix is `c_j I` for `j >= 1`.
    pub weights: Vec<f64>,
}

impl ScaledSystem {
    pub fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.d.ncols()
    }

    /// Dense lag matrix `A_j`: `A_0` for `j = 0`, `c_j I` otherwise.
    pub fn lag_matrix(&self, j: usize) -> DMatrix<f64> {
        if j == 0 {
            self.a0.clone()
        } else {
            DMatrix::identity(self.state_dim(), self.state_dim()) * self.weights[j]
        }
    }

    /// Advances the recursion one step: `history` holds `x_0 .. x_k` and the
    /// result is `x_{k+1}`.
    pub fn step(
        &self,
        history: &[DVector<f64>],
        u: &DVector<f64>,
        xi: f64,
    ) -> Result<DVector<f64>> {
        let d = self.state_dim();
        let Some(current) = history.last() else {
            return Err(Error::invalid("history", "must hold at least x_0"));
        };
        if history.len() > self.weights.len() {
            return Err(Error::OutOfRange {
                index: history.len() - 1,
                horizon: self.horizon,
            });
        }
        if let Some(bad) = history.iter().find(|x| x.len() != d) {
            return Err(Error::dim("history", d, bad.len()));
        }
        if u.len() != self.input_dim() {
            return Err(Error::dim("u", self.input_dim(), u.len()));
        }

        let k = history.len() - 1;
        let mut next =
            &self.a0 * current + (&self.b * current) * xi + &self.d * u + (&self.f * u) * xi;
        for j in 1..=k {
            next.axpy(self.weights[j], &history[k - j], 1.0);
        }
        Ok(next)
    }
}

/// Scales the raw problem, validating it first.
pub fn scale(spec: &ProblemSpec) -> Result<ScaledSystem> {
    spec.validate()?;
    let d = spec.state_dim();
    let factor = (spec.alpha * spec.h.ln()).exp();
    let a0 = &spec.a * factor + DMatrix::identity(d, d) * spec.alpha;
    let weights = (0..spec.horizon)
        .map(|j| gl_weight(spec.alpha, j))
        .collect::<Vec<_>>();
    Ok(ScaledSystem {
        alpha: spec.alpha,
        horizon: spec.horizon,
        a0,
        b: &spec.b * factor,
        d: &spec.d * factor,
        f: &spec.f * factor,
        weights,
    })
}

/// A feedback law linear in the whole state history:
/// `u_n = Σ_{j=0..n} W_{j,n} x_{n-j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    state_dim: usize,
    input_dim: usize,
    /// `gains[n][j]` is `W_{j,n}`, an `m x d` matrix.
    gains: Vec<Vec<DMatrix<f64>>>,
}

impl Policy {
    pub fn new(state_dim: usize, input_dim: usize, gains: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        for (n, row) in gains.iter().enumerate() {
            if row.len() != n + 1 {
                return Err(Error::dim("policy stage", n + 1, row.len()));
            }
            for w in row {
                if w.nrows() != input_dim || w.ncols() != state_dim {
                    return Err(Error::dim(
                        "policy gain",
                        format!("{input_dim}x{state_dim}"),
                        format!("{}x{}", w.nrows(), w.ncols()),
                    ));
                }
            }
        }
        Ok(Self {
            state_dim,
            input_dim,
            gains,
        })
    }

    pub fn zeros(horizon: usize, state_dim: usize, input_dim: usize) -> Self {
        let gains = (0..horizon)
            .map(|n| vec![DMatrix::zeros(input_dim, state_dim); n + 1])
            .collect();
        Self {
            state_dim,
            input_dim,
            gains,
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `W_{j,n}`.
    pub fn gain(&self, n: usize, j: usize) -> &DMatrix<f64> {
        &self.gains[n][j]
    }

    pub fn gain_mut(&mut self, n: usize, j: usize) -> &mut DMatrix<f64> {
        &mut self.gains[n][j]
    }

    pub fn stage(&self, n: usize) -> &[DMatrix<f64>] {
        &self.gains[n]
    }

    /// Control at time `n = history.len() - 1`.
    pub fn apply(&self, history: &[DVector<f64>]) -> Result<DVector<f64>> {
        if history.is_empty() {
            return Err(Error::invalid("history", "must hold at least x_0"));
        }
        let n = history.len() - 1;
        if n >= self.horizon() {
            return Err(Error::OutOfRange {
                index: n,
                horizon: self.horizon(),
            });
        }
        let mut u = DVector::zeros(self.input_dim);
        for (j, w) in self.gains[n].iter().enumerate() {
            let x = &history[n - j];
            if x.len() != self.state_dim {
                return Err(Error::dim("history", self.state_dim, x.len()));
            }
            u.gemv(1.0, w, x, 1.0);
        }
        Ok(u)
    }

    /// Largest gain-wise deviation `max |W - W'| / (1 + max |W'|)` over all
    /// stages, or `None` when the shapes differ.
    pub fn max_rel_diff(&self, other: &Policy) -> Option<f64> {
        if self.horizon() != other.horizon()
            || self.state_dim != other.state_dim
            || self.input_dim != other.input_dim
        {
            return None;
        }
        let mut worst = 0.0_f64;
        for (mine, theirs) in self.gains.iter().zip(&other.gains) {
            for (a, b) in mine.iter().zip(theirs) {
                worst = worst.max(linalg::rel_diff(a, b));
            }
        }
        Some(worst)
    }
}

/// One realized closed-loop path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_N`.
    pub states: Vec<DVector<f64>>,
    /// `u_0 .. u_{N-1}`.
    pub controls: Vec<DVector<f64>>,
    /// `ξ_0 .. ξ_{N-1}`.
    pub noises: Vec<f64>,
    pub realized_cost: f64,
}

impl Trajectory {
    /// Runs `policy` on the scaled system for the given noise sequence.
    pub fn rollout(
        spec: &ProblemSpec,
        sys: &ScaledSystem,
        policy: &Policy,
        noises: &[f64],
    ) -> Result<Self> {
        let horizon = sys.horizon;
        if noises.len() != horizon {
            return Err(Error::dim("noises", horizon, noises.len()));
        }
        if policy.horizon() != horizon {
            return Err(Error::dim("policy horizon", horizon, policy.horizon()));
        }
        let mut states = Vec::with_capacity(horizon + 1);
        let mut controls = Vec::with_capacity(horizon);
        states.push(spec.x0.clone());
        let mut cost = 0.0;
        for &xi in noises {
            let u = policy.apply(&states)?;
            cost += spec.stage_cost(states.last().unwrap(), &u);
            let next = sys.step(&states, &u, xi)?;
            controls.push(u);
            states.push(next);
        }
        cost += spec.terminal_cost(states.last().unwrap());
        Ok(Self {
            states,
            controls,
            noises: noises.to_vec(),
            realized_cost: cost,
        })
    }

    /// Cost functional evaluated from the stored sequences.
    pub fn recomputed_cost(&self, spec: &ProblemSpec) -> f64 {
        let running: f64 = self
            .states
            .iter()
            .zip(&self.controls)
            .map(|(x, u)| spec.stage_cost(x, u))
            .sum();
        running + spec.terminal_cost(self.states.last().expect("trajectory holds x_0"))
    }
}
