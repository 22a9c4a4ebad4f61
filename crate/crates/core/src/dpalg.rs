//! Backward dynamic programming directly on the fractional recursion.
//!
//! After the controls `u_{n+1} .. u_{N-1}` have been fixed as history-linear
//! feedbacks, the optimal cost-to-go from time `n + 1` is an exact sum of
//! squares
//!
//! ```text
//! Σ_l E|S^{1/2} Σ_j V^{S,l}_j x_{n+1-j}|^2
//!   + Σ_l E|K^{1/2} Σ_j V^{K,l}_j x_{n+1-j}|^2
//!   + Σ_l E|C Σ_j V^{C,l}_j x_{n+1-j}|^2 + E|C x_{n+1}|^2
//! ```
//!
//! Substituting the recursion for `x_{n+1}` splits every square into a
//! deterministic part and a part multiplied by `ξ_n`, so each family doubles
//! per stage. Completing the square in `u_n` yields `J_n` (quadratic
//! coefficient), the linear coefficients `v_n` and the gains
//! `W_{j,n} = -J_n^{-1} [v_n]_j`. The closed-loop terms then become the next
//! family:
//!
//! ```text
//! deterministic:  V_{j+1} + V_0 (A_j + D W_{j,n})
//! noise:          V_0 (δ_{j0} B + F W_{j,n})
//! ```
//!
//! with the new control term `W_{j,n}` appended to the `K` family and the
//! two halves of the former standalone `C x_{n+1}` appended to the `C` family.
//!
//! The families are kept as written; nothing is merged, so the work grows as
//! `2^N`. That growth is guarded by a term limit.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{scale, Policy, ProblemSpec, ScaledSystem};

/// Default limit on the total number of terms alive at the last stage.
pub const DEFAULT_MAX_TERMS: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    /// Weighted by `S`.
    Terminal,
    /// Weighted by `K`.
    Control,
    /// Weighted by `C^T C`.
    Output,
}

/// One family `V^{·,l}_{n,j}`: `len()` terms of `width` coefficient blocks,
/// stored contiguously term after term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermFamily {
    weight: Weight,
    rows: usize,
    cols: usize,
    width: usize,
    data: Vec<f64>,
}

impl TermFamily {
    fn empty(weight: Weight, rows: usize, cols: usize, width: usize) -> Self {
        Self {
            weight,
            rows,
            cols,
            width,
            data: Vec::new(),
        }
    }

    fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    fn term_len(&self) -> usize {
        self.block_len() * self.width
    }

    pub fn weight(&self) -> Weight {
        self.weight
    }

    pub fn len(&self) -> usize {
        if self.term_len() == 0 {
            0
        } else {
            self.data.len() / self.term_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of history blocks per term (`stage + 1`).
    pub fn width(&self) -> usize {
        self.width
    }

    /// `V^{l}_{j}`, zero-based in `l`.
    pub fn entry(&self, l: usize, j: usize) -> DMatrixView<'_, f64> {
        let off = l * self.term_len() + j * self.block_len();
        DMatrixView::from_slice(
            &self.data[off..off + self.block_len()],
            self.rows,
            self.cols,
        )
    }

    fn push_term<'a>(&mut self, blocks: impl IntoIterator<Item = &'a DMatrix<f64>>) {
        for b in blocks {
            debug_assert_eq!(b.shape(), (self.rows, self.cols));
            self.data.extend_from_slice(b.as_slice());
        }
        debug_assert_eq!(self.data.len() % self.term_len(), 0);
    }
}

/// The three families describing the cost-to-go from one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Families {
    pub stage: usize,
    pub terminal: TermFamily,
    pub control: TermFamily,
    pub output: TermFamily,
}

impl Families {
    pub fn counts(&self) -> TermCounts {
        TermCounts {
            stage: self.stage,
            terminal: self.terminal.len(),
            control: self.control.len(),
            output: self.output.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCounts {
    pub stage: usize,
    pub terminal: usize,
    pub control: usize,
    pub output: usize,
}

impl TermCounts {
    pub fn total(&self) -> usize {
        self.terminal + self.control + self.output
    }

    /// Sizes required after `q` backward steps: `2^q`, `2^q - 1`, `2^q - 2`.
    pub fn expected(q: u32) -> (usize, usize, usize) {
        let p = 1usize << q;
        (p, p - 1, p - 2)
    }
}

/// Everything produced when the control at one stage is fixed.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: usize,
    /// `J_n`, `m x m`.
    pub j: DMatrix<f64>,
    /// `W_{0,n} .. W_{n,n}`.
    pub gains: Vec<DMatrix<f64>>,
    /// Coefficient of `x_{n-j}` in `v_n`, `m x d` each.
    pub linear_coefficients: Vec<DMatrix<f64>>,
    /// Cost-to-go families from this stage on, under the new feedback.
    pub families: Families,
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub policy: Policy,
    /// `J_0 .. J_{N-1}`, indexed by stage.
    pub j: Vec<DMatrix<f64>>,
    /// `v_n` coefficients indexed by stage.
    pub linear_coefficients: Vec<Vec<DMatrix<f64>>>,
    /// `Q_0` with optimal cost `x_0^T Q_0 x_0`.
    pub cost_matrix: DMatrix<f64>,
    /// Family sizes for stages `N-1` down to `0`.
    pub term_counts: Vec<TermCounts>,
}

impl DpSolution {
    pub fn optimal_cost(&self, x0: &DVector<f64>) -> f64 {
        x0.dot(&(&self.cost_matrix * x0))
    }
}

fn factor_j(j: &DMatrix<f64>, stage: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    linalg::spd_factor(j).map_err(|min_eigenvalue| Error::NotPositiveDefinite {
        what: "J",
        stage,
        min_eigenvalue,
    })
}

/// Last stage `N - 1`: the control that is optimal against the terminal cost
/// alone, and the seed families `{V^{S,1}, V^{S,2}}`, `{V^{K,1}}`, `{}`.
pub fn init_step(sys: &ScaledSystem, spec: &ProblemSpec) -> Result<StageResult> {
    let n = sys.horizon - 1;
    let (d, m) = (sys.state_dim(), sys.input_dim());
    let s = &spec.s;

    let j = sys.f.transpose() * s * &sys.f + sys.d.transpose() * s * &sys.d + &spec.k;
    let chol = factor_j(&j, n)?;

    let dts = sys.d.transpose() * s;
    let coefs: Vec<DMatrix<f64>> = (0..=n)
        .map(|jj| {
            if jj == 0 {
                sys.f.transpose() * s * &sys.b + &dts * &sys.a0
            } else {
                &dts * sys.weights[jj]
            }
        })
        .collect();
    let gains: Vec<DMatrix<f64>> = coefs.iter().map(|c| -chol.solve(c)).collect();

    let width = n + 1;
    let mut terminal = TermFamily::empty(Weight::Terminal, d, d, width);
    let closed: Vec<_> = (0..=n)
        .map(|jj| sys.lag_matrix(jj) + &sys.d * &gains[jj])
        .collect();
    let noisy: Vec<_> = (0..=n).map(|jj| noise_block(sys, &gains[jj], jj)).collect();
    terminal.push_term(&closed);
    terminal.push_term(&noisy);

    let mut control = TermFamily::empty(Weight::Control, m, d, width);
    control.push_term(&gains);

    let output = TermFamily::empty(Weight::Output, d, d, width);
    Ok(StageResult {
        stage: n,
        j,
        gains,
        linear_coefficients: coefs,
        families: Families {
            stage: n,
            terminal,
            control,
            output,
        },
    })
}

/// `δ_{j0} B + F W_j`.
fn noise_block(sys: &ScaledSystem, gain: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let mut out = &sys.f * gain;
    if j == 0 {
        out += &sys.b;
    }
    out
}

struct Weights {
    s: DMatrix<f64>,
    k: DMatrix<f64>,
    cc: DMatrix<f64>,
}

impl Weights {
    fn of(&self, w: Weight) -> &DMatrix<f64> {
        match w {
            Weight::Terminal => &self.s,
            Weight::Control => &self.k,
            Weight::Output => &self.cc,
        }
    }
}

/// Adds the contributions of one family to `J` and to the linear coefficients.
fn accumulate(
    fam: &TermFamily,
    weight: &DMatrix<f64>,
    sys: &ScaledSystem,
    stage: usize,
    j_acc: &mut DMatrix<f64>,
    coefs: &mut [DMatrix<f64>],
) {
    let d = sys.state_dim();
    let mut lagged = DMatrix::zeros(fam.rows, d);
    for l in 0..fam.len() {
        let v0 = fam.entry(l, 0);
        let v0d = v0 * &sys.d;
        let v0f = v0 * &sys.f;
        let wv0d = weight * &v0d;
        let wv0f = weight * &v0f;
        j_acc.gemm_tr(1.0, &v0d, &wv0d, 1.0);
        j_acc.gemm_tr(1.0, &v0f, &wv0f, 1.0);

        for (jj, coef) in coefs.iter_mut().enumerate().take(stage + 1) {
            // V_{j+1} + V_0 A_j
            lagged.copy_from(&fam.entry(l, jj + 1));
            if jj == 0 {
                lagged.gemm(1.0, &v0, &sys.a0, 1.0);
            } else {
                lagged.zip_apply(&v0, |a, b| *a += sys.weights[jj] * b);
            }
            coef.gemm_tr(1.0, &wv0d, &lagged, 1.0);
        }
        let v0b = v0 * &sys.b;
        coefs[0].gemm_tr(1.0, &wv0f, &v0b, 1.0);
    }
}

/// Substitutes the new feedback into every term of `fam`, producing the
/// deterministic halves followed by the noise halves.
fn propagate(fam: &TermFamily, closed: &[DMatrix<f64>], noisy: &[DMatrix<f64>]) -> TermFamily {
    let width = fam.width - 1;
    let mut out = TermFamily::empty(fam.weight, fam.rows, fam.cols, width);
    let blk = fam.block_len();
    let count = fam.len();
    out.data = vec![0.0; 2 * count * blk * width];
    let (det, noise) = out.data.split_at_mut(count * blk * width);
    for l in 0..count {
        let v0 = fam.entry(l, 0);
        for jj in 0..width {
            let off = (l * width + jj) * blk;
            let mut target =
                DMatrixViewMut::from_slice(&mut det[off..off + blk], fam.rows, fam.cols);
            target.copy_from(&fam.entry(l, jj + 1));
            target.gemm(1.0, &v0, &closed[jj], 1.0);

            let mut target =
                DMatrixViewMut::from_slice(&mut noise[off..off + blk], fam.rows, fam.cols);
            target.gemm(1.0, &v0, &noisy[jj], 0.0);
        }
    }
    out
}

/// Backward step `q >= 2`: fixes `u_{N-q}` from the families of stage
/// `N - q + 1`.
pub fn general_step(
    q: usize,
    prev: &Families,
    sys: &ScaledSystem,
    spec: &ProblemSpec,
) -> Result<StageResult> {
    let horizon = sys.horizon;
    if q < 2 || q > horizon {
        return Err(Error::OutOfRange { index: q, horizon });
    }
    let stage = horizon - q;
    if prev.stage != stage + 1 {
        return Err(Error::dim("family stage", stage + 1, prev.stage));
    }
    let (es, ek, ec) = TermCounts::expected(q as u32 - 1);
    let got = prev.counts();
    if (got.terminal, got.control, got.output) != (es, ek, ec) {
        return Err(Error::dim(
            "family sizes",
            format!("({es}, {ek}, {ec})"),
            format!("({}, {}, {})", got.terminal, got.control, got.output),
        ));
    }

    let (d, m) = (sys.state_dim(), sys.input_dim());
    let weights = Weights {
        s: spec.s.clone(),
        k: spec.k.clone(),
        cc: spec.c.transpose() * &spec.c,
    };

    // Standalone E|C x_{n+1}|^2 term.
    let dtcc = sys.d.transpose() * &weights.cc;
    let ftcc = sys.f.transpose() * &weights.cc;
    let mut j = &spec.k + &dtcc * &sys.d + &ftcc * &sys.f;
    let mut coefs: Vec<DMatrix<f64>> = (0..=stage).map(|jj| &dtcc * sys.lag_matrix(jj)).collect();
    coefs[0] += &ftcc * &sys.b;

    for fam in [&prev.terminal, &prev.control, &prev.output] {
        accumulate(fam, weights.of(fam.weight), sys, stage, &mut j, &mut coefs);
    }

    let chol = factor_j(&j, stage)?;
    let gains: Vec<DMatrix<f64>> = coefs.iter().map(|c| -chol.solve(c)).collect();

    let closed: Vec<_> = (0..=stage)
        .map(|jj| sys.lag_matrix(jj) + &sys.d * &gains[jj])
        .collect();
    let noisy: Vec<_> = (0..=stage)
        .map(|jj| noise_block(sys, &gains[jj], jj))
        .collect();

    let terminal = propagate(&prev.terminal, &closed, &noisy);
    let mut control = propagate(&prev.control, &closed, &noisy);
    control.push_term(&gains);
    let mut output = propagate(&prev.output, &closed, &noisy);
    output.push_term(&closed);
    output.push_term(&noisy);
    debug_assert_eq!(control.rows, m);
    debug_assert_eq!(output.rows, d);

    let families = Families {
        stage,
        terminal,
        control,
        output,
    };
    let (es, ek, ec) = TermCounts::expected(q as u32);
    let c = families.counts();
    assert_eq!(
        (c.terminal, c.control, c.output),
        (es, ek, ec),
        "term-count law violated at stage {stage}"
    );
    Ok(StageResult {
        stage,
        j,
        gains,
        linear_coefficients: coefs,
        families,
    })
}

/// Terms alive at stage 0 for horizon `N`: `3 * 2^N - 3`.
pub fn required_terms(horizon: usize) -> u128 {
    if horizon >= 120 {
        return u128::MAX;
    }
    3 * (1u128 << horizon) - 3
}

/// Cost-to-go at stage 0 as a quadratic form in `x_0`.
fn closing_form(fam: &Families, spec: &ProblemSpec) -> DMatrix<f64> {
    let weights = Weights {
        s: spec.s.clone(),
        k: spec.k.clone(),
        cc: spec.c.transpose() * &spec.c,
    };
    let mut q = weights.cc.clone();
    for f in [&fam.terminal, &fam.control, &fam.output] {
        let w = weights.of(f.weight);
        for l in 0..f.len() {
            let v0 = f.entry(l, 0);
            let wv = w * v0;
            q.gemm_tr(1.0, &v0, &wv, 1.0);
        }
    }
    linalg::symmetrize(&q)
}

pub fn solve_dp(spec: &ProblemSpec) -> Result<DpSolution> {
    solve_dp_with_limit(spec, DEFAULT_MAX_TERMS)
}

pub fn solve_dp_with_limit(spec: &ProblemSpec, max_terms: u128) -> Result<DpSolution> {
    let sys = scale(spec)?;
    let horizon = sys.horizon;
    let required = required_terms(horizon);
    if required > max_terms {
        return Err(Error::TermGuard {
            horizon,
            required,
            limit: max_terms,
        });
    }

    let (d, m) = (sys.state_dim(), sys.input_dim());
    let mut gains = vec![Vec::new(); horizon];
    let mut js = vec![DMatrix::zeros(m, m); horizon];
    let mut lin = vec![Vec::new(); horizon];
    let mut counts = Vec::with_capacity(horizon);

    let mut step = init_step(&sys, spec)?;
    for q in 1..=horizon {
        if q >= 2 {
            step = general_step(q, &step.families, &sys, spec)?;
        }
        let n = step.stage;
        counts.push(step.families.counts());
        js[n] = step.j.clone();
        gains[n] = step.gains.clone();
        lin[n] = step.linear_coefficients.clone();
    }

    let cost_matrix = closing_form(&step.families, spec);
    Ok(DpSolution {
        policy: Policy::new(d, m, gains)?,
        j: js,
        linear_coefficients: lin,
        cost_matrix,
        term_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::example1;

    fn row(w: &DMatrix<f64>) -> [f64; 2] {
        [w[(0, 0)], w[(0, 1)]]
    }

    fn near(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn init_example1() {
        let spec = example1();
        let sys = scale(&spec).unwrap();
        let st = init_step(&sys, &spec).unwrap();
        // F^T S F = 10, D^T S D = 4, K = 1
        assert!((st.j[(0, 0)] - 15.0).abs() < 1e-12);
        assert!(near(row(&st.gains[0]), [-0.3333, -0.6000], 1e-4));
        assert!(near(row(&st.gains[1]), [-0.0167, 0.0167], 1e-4));
        let c = st.families.counts();
        assert_eq!((c.terminal, c.control, c.output), (2, 1, 0));
        assert_eq!(st.families.terminal.width(), 4);
    }

    #[test]
    fn second_step_example1() {
        let spec = example1();
        let sys = scale(&spec).unwrap();
        let st = init_step(&sys, &spec).unwrap();
        let st2 = general_step(2, &st.families, &sys, &spec).unwrap();
        assert_eq!(st2.stage, 2);
        assert!((st2.j[(0, 0)] - 67.3667).abs() / 67.3667 < 1e-5);
        assert!(near(
            row(&st2.linear_coefficients[0]),
            [32.2583, 46.4417],
            1e-4
        ));
        assert!(near(
            row(&st2.linear_coefficients[1]),
            [1.5750, -0.7333],
            1e-4
        ));
        assert!(near(
            row(&st2.linear_coefficients[2]),
            [0.8151, -0.3630],
            1e-4
        ));
        assert!(near(row(&st2.gains[0]), [-0.47885, -0.68939], 1e-5));
        let st3 = general_step(3, &st2.families, &sys, &spec).unwrap();
        assert!((st3.j[(0, 0)] - 196.1711).abs() / 196.1711 < 1e-6);
        let c = st3.families.counts();
        assert_eq!((c.terminal, c.control, c.output), (8, 7, 6));
    }

    #[test]
    fn step_rejects_wrong_families() {
        let spec = example1();
        let sys = scale(&spec).unwrap();
        let st = init_step(&sys, &spec).unwrap();
        assert!(general_step(3, &st.families, &sys, &spec).is_err());
        assert!(general_step(1, &st.families, &sys, &spec).is_err());
        assert!(general_step(5, &st.families, &sys, &spec).is_err());
    }

    #[test]
    fn full_solve_example1() {
        let spec = example1();
        let sol = solve_dp(&spec).unwrap();
        let cost = sol.optimal_cost(&spec.x0);
        assert!((cost - 28.074).abs() / 28.074 < 5e-3, "{cost}");
        assert!(linalg::asymmetry(&sol.cost_matrix) < 1e-12);
        assert!(linalg::is_psd(&sol.cost_matrix));
        assert_eq!(sol.term_counts.len(), 4);
        for (q, c) in sol.term_counts.iter().enumerate() {
            let (s, k, o) = TermCounts::expected(q as u32 + 1);
            assert_eq!((c.terminal, c.control, c.output), (s, k, o));
            assert_eq!(c.stage, 3 - q);
        }
        for jm in &sol.j {
            assert!(linalg::is_pd(jm));
        }
    }

    #[test]
    fn single_stage_equals_init() {
        let spec = example1().with_horizon(1);
        let sys = scale(&spec).unwrap();
        let st = init_step(&sys, &spec).unwrap();
        let sol = solve_dp(&spec).unwrap();
        assert_eq!(sol.j[0], st.j);
        assert_eq!(sol.policy.stage(0), &st.gains[..]);
        assert_eq!(sol.term_counts, vec![st.families.counts()]);
        let q = closing_form(&st.families, &spec);
        assert_eq!(sol.cost_matrix, q);
    }

    #[test]
    fn zero_cost_problem() {
        let mut spec = example1();
        spec.c = DMatrix::zeros(1, 2);
        spec.s = DMatrix::zeros(2, 2);
        let sol = solve_dp(&spec).unwrap();
        assert_eq!(sol.policy, Policy::zeros(4, 2, 1));
        assert_eq!(sol.optimal_cost(&spec.x0), 0.0);
    }

    #[test]
    fn guard() {
        let spec = example1().with_horizon(6);
        assert_eq!(required_terms(6), 189);
        match solve_dp_with_limit(&spec, 100) {
            Err(Error::TermGuard { required, .. }) => assert_eq!(required, 189),
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_dp_with_limit(&spec, 189).is_ok());
    }
}
