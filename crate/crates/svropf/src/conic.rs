//! Solver-agnostic conic program representation and solve contract.
//!
//! A [`ConicProblem`] is a real decision vector with linear equality and
//! inequality rows, second-order cones, and PSD blocks whose entries are
//! affine in the decision variables. Hermitian blocks enter through the real
//! embedding `H = U + jW ⪰ 0  ⇔  [[U, −W], [W, U]] ⪰ 0`
//! ([`HermitianEmbedding`]). The reference backend is the Clarabel
//! interior-point solver; the problem form is backend-neutral and also
//! serializes to a deterministic text format for regression comparisons.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt::Write as _;

/// Linear expression `Σ coeff·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffExpr {
    pub fn zero() -> AffExpr {
        AffExpr::default()
    }

    pub fn constant(c: f64) -> AffExpr {
        AffExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(ix: usize) -> AffExpr {
        AffExpr {
            terms: vec![(ix, 1.0)],
            constant: 0.0,
        }
    }

    pub fn scaled_var(ix: usize, c: f64) -> AffExpr {
        AffExpr {
            terms: vec![(ix, c)],
            constant: 0.0,
        }
    }

    pub fn push(&mut self, ix: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((ix, c));
        }
    }

    pub fn add(&self, other: &AffExpr) -> AffExpr {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        AffExpr {
            terms,
            constant: self.constant + other.constant,
        }
        .normalized()
    }

    pub fn sub(&self, other: &AffExpr) -> AffExpr {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> AffExpr {
        AffExpr {
            terms: self.terms.iter().map(|&(i, a)| (i, a * c)).collect(),
            constant: self.constant * c,
        }
    }

    /// Merges duplicate variables, drops zeros, sorts by index.
    pub fn normalized(&self) -> AffExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        AffExpr {
            terms: merged,
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|&(_, c)| c == 0.0)
    }
}

/// Symmetric PSD block; entries are the upper triangle scanned column by
/// column (`(0,0), (0,1), (1,1), (0,2), ...`), matching the scaled-vector
/// order of the backend.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub dim: usize,
    pub entries: Vec<AffExpr>,
}

impl PsdBlock {
    pub fn from_upper<Ff: FnMut(usize, usize) -> AffExpr>(dim: usize, mut entry: Ff) -> PsdBlock {
        let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
        for col in 0..dim {
            for row in 0..=col {
                entries.push(entry(row, col).normalized());
            }
        }
        PsdBlock { dim, entries }
    }

    /// Numeric value of the block at a point.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut k = 0;
        for col in 0..self.dim {
            for row in 0..=col {
                let v = self.entries[k].eval(x);
                m[(row, col)] = v;
                m[(col, row)] = v;
                k += 1;
            }
        }
        m
    }
}

/// Conic program: minimize a linear objective subject to `eq = 0`,
/// `ineq ≤ 0`, second-order cones `‖tail‖ ≤ head`, and PSD blocks.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub eq: Vec<AffExpr>,
    pub ineq: Vec<AffExpr>,
    /// Each cone lists `[t, x1, x2, ...]` with the constraint `‖x‖₂ ≤ t`.
    pub soc: Vec<Vec<AffExpr>>,
    pub psd: Vec<PsdBlock>,
    pub objective: AffExpr,
}

impl ConicProblem {
    pub fn new() -> ConicProblem {
        ConicProblem::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_vars(&mut self, n: usize) -> std::ops::Range<usize> {
        let start = self.num_vars;
        self.num_vars += n;
        start..self.num_vars
    }

    /// `expr == 0`
    pub fn push_eq(&mut self, expr: AffExpr) {
        self.eq.push(expr.normalized());
    }

    /// `expr <= 0`
    pub fn push_leq(&mut self, expr: AffExpr) {
        self.ineq.push(expr.normalized());
    }

    /// `lo <= x[ix] <= hi`
    pub fn push_box(&mut self, ix: usize, lo: f64, hi: f64) {
        let mut up = AffExpr::var(ix);
        up.constant = -hi;
        self.push_leq(up);
        let mut dn = AffExpr::scaled_var(ix, -1.0);
        dn.constant = lo;
        self.push_leq(dn);
    }

    pub fn push_soc(&mut self, cone: Vec<AffExpr>) {
        self.soc
            .push(cone.into_iter().map(|e| e.normalized()).collect());
    }

    pub fn push_psd(&mut self, block: PsdBlock) {
        self.psd.push(block);
    }

    /// Maximum violation of linear rows and cone memberships at a point:
    /// `(eq residual, ineq residual, soc residual, most negative psd eigenvalue)`.
    pub fn residuals(&self, x: &[f64]) -> (f64, f64, f64, f64) {
        let eq = self
            .eq
            .iter()
            .map(|e| e.eval(x).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .ineq
            .iter()
            .map(|e| e.eval(x).max(0.0))
            .fold(0.0, f64::max);
        let soc = self
            .soc
            .iter()
            .map(|cone| {
                let t = cone[0].eval(x);
                let norm = cone[1..]
                    .iter()
                    .map(|e| e.eval(x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (norm - t).max(0.0)
            })
            .fold(0.0, f64::max);
        let psd = self
            .psd
            .iter()
            .map(|b| {
                let eig = b.value(x).symmetric_eigenvalues();
                (-eig.min()).max(0.0)
            })
            .fold(0.0, f64::max);
        (eq, ineq, soc, psd)
    }

    /// Deterministic text serialization (rows, cones, objective) used for
    /// byte-stable regression comparisons across builds.
    pub fn serialize_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "vars {} eq {} ineq {} soc {} psd {}",
            self.num_vars,
            self.eq.len(),
            self.ineq.len(),
            self.soc.len(),
            self.psd.len()
        );
        let dump = |s: &mut String, e: &AffExpr| {
            let e = e.normalized();
            let _ = write!(s, "{:.17e}", e.constant);
            for (i, c) in e.terms {
                let _ = write!(s, " {i}:{c:.17e}");
            }
            s.push('\n');
        };
        let _ = writeln!(s, "objective");
        dump(&mut s, &self.objective);
        let _ = writeln!(s, "eq");
        for e in &self.eq {
            dump(&mut s, e);
        }
        let _ = writeln!(s, "ineq");
        for e in &self.ineq {
            dump(&mut s, e);
        }
        for cone in &self.soc {
            let _ = writeln!(s, "soc {}", cone.len());
            for e in cone {
                dump(&mut s, e);
            }
        }
        for block in &self.psd {
            let _ = writeln!(s, "psd {}", block.dim);
            for e in &block.entries {
                dump(&mut s, e);
            }
        }
        s
    }
}

/// Linear map from the real parametrization of an `n × n` Hermitian matrix
/// (diagonal, then `Re` and `Im` of the upper off-diagonal entries) to the
/// `2n × 2n` real symmetric block `[[U, −W], [W, U]]`. `H ⪰ 0` iff the
/// embedded block is PSD.
#[derive(Debug, Clone, Copy)]
pub struct HermitianEmbedding {
    pub n: usize,
}

pub fn hermitian_embedding(n: usize) -> HermitianEmbedding {
    assert!(n >= 1);
    HermitianEmbedding { n }
}

impl HermitianEmbedding {
    /// Entry `(r, c)` of the embedded block, as a function of parameter
    /// expressions. `diag[i]` is `H_ii`; `re(i, j)`/`im(i, j)` with `i < j`
    /// are the real/imaginary parts of `H_ij`.
    pub fn embed_exprs(
        &self,
        diag: &[AffExpr],
        re: &dyn Fn(usize, usize) -> AffExpr,
        im: &dyn Fn(usize, usize) -> AffExpr,
    ) -> PsdBlock {
        let n = self.n;
        let u = |i: usize, j: usize| -> AffExpr {
            if i == j {
                diag[i].clone()
            } else if i < j {
                re(i, j)
            } else {
                re(j, i)
            }
        };
        let w = |i: usize, j: usize| -> AffExpr {
            if i == j {
                AffExpr::zero()
            } else if i < j {
                im(i, j)
            } else {
                im(j, i).scale(-1.0)
            }
        };
        PsdBlock::from_upper(2 * n, |r, c| {
            match (r < n, c < n) {
                (true, true) => u(r, c),
                (true, false) => w(r, c - n).scale(-1.0),
                (false, true) => w(r - n, c), // below-diagonal; unreachable for r <= c
                (false, false) => u(r - n, c - n),
            }
        })
    }

    /// Numeric embedding of a Hermitian matrix, for diagnostics and tests.
    pub fn embed_matrix(&self, h: &DMatrix<Complex64>) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = h[(i, j)].re;
                m[(n + i, n + j)] = h[(i, j)].re;
                m[(i, n + j)] = -h[(i, j)].im;
                m[(n + i, j)] = h[(i, j)].im;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatusKind {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatusKind,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Solver-reported duality gap at termination.
    pub accuracy: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

impl ConicSolution {
    /// True when the point is fit for downstream recovery: either fully
    /// optimal, or terminated at numerical precision limits with a small
    /// reported duality gap (interior-point solvers routinely stall within
    /// an order of magnitude of very tight tolerances).
    pub fn near_optimal(&self) -> bool {
        match self.status {
            SolveStatusKind::Optimal => true,
            SolveStatusKind::NumericalLimit => {
                self.accuracy <= 1e-5 * self.objective.abs().max(1.0)
            }
            _ => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

/// Solves the problem with the bound interior-point backend at relative
/// tolerance `tol`.
pub fn solve(problem: &ConicProblem, tol: f64) -> Result<ConicSolution, ConicError> {
    let n = problem.num_vars;

    // Assemble rows in Ax + s = b with s in the product cone. Order: zero
    // cone (equalities), nonnegative cone (inequalities), SOCs, PSD triangles.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let push_row = |cols: &mut Vec<Vec<(usize, f64)>>,
                    b: &mut Vec<f64>,
                    expr: &AffExpr,
                    scale: f64| {
        let row = b.len();
        let e = expr.normalized();
        for (i, c) in e.terms {
            cols[i].push((row, -scale * c));
        }
        b.push(scale * e.constant);
    };

    if !problem.eq.is_empty() {
        for e in &problem.eq {
            push_row(&mut cols, &mut b, e, 1.0);
        }
        cones.push(SupportedConeT::ZeroConeT(problem.eq.len()));
    }
    if !problem.ineq.is_empty() {
        // expr <= 0  =>  s = -expr >= 0
        for e in &problem.ineq {
            push_row(&mut cols, &mut b, e, -1.0);
        }
        cones.push(SupportedConeT::NonnegativeConeT(problem.ineq.len()));
    }
    for cone in &problem.soc {
        for e in cone {
            push_row(&mut cols, &mut b, e, 1.0);
        }
        cones.push(SupportedConeT::SecondOrderConeT(cone.len()));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    for block in &problem.psd {
        let mut k = 0;
        for col in 0..block.dim {
            for row in 0..=col {
                let scale = if row == col { 1.0 } else { sqrt2 };
                push_row(&mut cols, &mut b, &block.entries[k], scale);
                k += 1;
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(block.dim));
    }

    // CSC assembly.
    let m = b.len();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for col in cols.iter_mut() {
        colptr.push(rowval.len());
        col.sort_by_key(|&(r, _)| r);
        for &(r, v) in col.iter() {
            rowval.push(r);
            nzval.push(v);
        }
    }
    colptr.push(rowval.len());
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);
    let p = CscMatrix::zeros((n, n));

    let mut q = vec![0.0; n];
    for &(i, c) in &problem.objective.normalized().terms {
        q[i] += c;
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_rel(tol)
        .tol_gap_abs(tol)
        .tol_feas(tol)
        .build()
        .map_err(|e| ConicError::SolverFailure(format!("settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| ConicError::SolverFailure(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => SolveStatusKind::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatusKind::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatusKind::Unbounded
        }
        SolverStatus::AlmostSolved
        | SolverStatus::MaxIterations
        | SolverStatus::MaxTime
        | SolverStatus::NumericalError
        | SolverStatus::InsufficientProgress => SolveStatusKind::NumericalLimit,
        other => {
            return Err(ConicError::SolverFailure(format!(
                "unexpected status {other:?}"
            )))
        }
    };

    Ok(ConicSolution {
        status,
        objective: sol.obj_val + problem.objective.constant,
        x: sol.x,
        accuracy: (sol.obj_val - sol.obj_val_dual).abs(),
        iterations: sol.iterations,
        solve_time: sol.solve_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimize_bounded_scalar() {
        // min x s.t. x >= 1
        let mut p = ConicProblem::new();
        let x = p.add_var();
        let mut row = AffExpr::scaled_var(x, -1.0);
        row.constant = 1.0;
        p.push_leq(row);
        p.objective = AffExpr::var(x);
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SolveStatusKind::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn minimize_trace_of_pinned_psd_block() {
        // [[1, x], [x, y]] ⪰ 0, minimize 1 + y → y = x = 0.
        let mut p = ConicProblem::new();
        let x = p.add_var();
        let y = p.add_var();
        p.push_psd(PsdBlock::from_upper(2, |r, c| match (r, c) {
            (0, 0) => AffExpr::constant(1.0),
            (0, 1) => AffExpr::var(x),
            (1, 1) => AffExpr::var(y),
            _ => unreachable!(),
        }));
        let mut obj = AffExpr::var(y);
        obj.constant = 1.0;
        p.objective = obj;
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SolveStatusKind::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7, "{}", sol.objective);
    }

    #[test]
    fn second_order_cone_norm() {
        // min t s.t. ||(3, 4)|| <= t → 5.
        let mut p = ConicProblem::new();
        let t = p.add_var();
        p.push_soc(vec![
            AffExpr::var(t),
            AffExpr::constant(3.0),
            AffExpr::constant(4.0),
        ]);
        p.objective = AffExpr::var(t);
        let sol = solve(&p, 1e-9).unwrap();
        assert!((sol.objective - 5.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_and_unbounded_status() {
        let mut p = ConicProblem::new();
        let x = p.add_var();
        p.push_box(x, 1.0, 0.0); // empty box
        p.objective = AffExpr::var(x);
        assert_eq!(solve(&p, 1e-9).unwrap().status, SolveStatusKind::Infeasible);

        let mut p = ConicProblem::new();
        let x = p.add_var();
        p.objective = AffExpr::var(x);
        assert_eq!(solve(&p, 1e-9).unwrap().status, SolveStatusKind::Unbounded);
    }

    #[test]
    fn embedding_scalar_cases() {
        let e = hermitian_embedding(1);
        let h = DMatrix::from_element(1, 1, Complex64::new(2.5, 0.0));
        let m = e.embed_matrix(&h);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.5, 0.0, 0.0, 2.5]));

        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-1.0, 0.0),
            ],
        );
        let eig = hermitian_embedding(2).embed_matrix(&h).symmetric_eigenvalues();
        assert!(eig.min() < -0.99, "indefinite H must embed indefinite");
    }

    #[test]
    fn embedding_of_rank1_is_psd_rank2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DVector::from_fn(3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let h = &v * v.adjoint();
        let m = hermitian_embedding(3).embed_matrix(&h);
        let eig = m.symmetric_eigenvalues();
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(vals[0] > 1e-6 && vals[1] > 1e-6);
        assert!(vals[1] - vals[0] < 1e-10, "doubled spectrum");
        for v in &vals[2..] {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn embedding_sign_matches_hermitian_for_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e = hermitian_embedding(3);
        for _ in 0..1000 {
            let mut h = DMatrix::zeros(3, 3);
            for i in 0..3 {
                h[(i, i)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
                for j in i + 1..3 {
                    let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    h[(i, j)] = z;
                    h[(j, i)] = z.conj();
                }
            }
            let min_h = h.clone().symmetric_eigenvalues().min();
            let min_m = e.embed_matrix(&h).symmetric_eigenvalues().min();
            assert!((min_h - min_m).abs() < 1e-9);
        }
    }

    #[test]
    fn embedded_expr_block_matches_numeric_embedding() {
        // Parameter layout (diag, re, im) fed through embed_exprs and
        // evaluated must agree with embed_matrix on the same Hermitian matrix.
        let mut p = ConicProblem::new();
        let diag: Vec<usize> = (0..3).map(|_| p.add_var()).collect();
        let re: Vec<usize> = (0..3).map(|_| p.add_var()).collect();
        let im: Vec<usize> = (0..3).map(|_| p.add_var()).collect();
        let pair = |i: usize, j: usize| match (i, j) {
            (0, 1) => 0,
            (0, 2) => 1,
            (1, 2) => 2,
            _ => unreachable!(),
        };
        let diag_exprs: Vec<AffExpr> = diag.iter().map(|&v| AffExpr::var(v)).collect();
        let block = hermitian_embedding(3).embed_exprs(
            &diag_exprs,
            &|i, j| AffExpr::var(re[pair(i, j)]),
            &|i, j| AffExpr::var(im[pair(i, j)]),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut h = DMatrix::zeros(3, 3);
        for i in 0..3 {
            h[(i, i)] = Complex64::new(x[i], 0.0);
            for j in i + 1..3 {
                let z = Complex64::new(x[3 + pair(i, j)], x[6 + pair(i, j)]);
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        let expected = hermitian_embedding(3).embed_matrix(&h);
        assert_eq!(block.value(&x), expected);
    }

    #[test]
    fn hermitian_psd_via_solver() {
        // Pin a Hermitian 2x2 block to values with known min eigenvalue sign:
        // feasibility of [[1, z],[z*, 1]] ⪰ 0 depends on |z| <= 1.
        for (zre, zim, feasible) in [(0.6, 0.6, true), (0.9, 0.9, false)] {
            let mut p = ConicProblem::new();
            let d0 = p.add_var();
            let d1 = p.add_var();
            let re = p.add_var();
            let im = p.add_var();
            for (v, val) in [(d0, 1.0), (d1, 1.0), (re, zre), (im, zim)] {
                let mut e = AffExpr::var(v);
                e.constant = -val;
                p.push_eq(e);
            }
            let diag = vec![AffExpr::var(d0), AffExpr::var(d1)];
            let block = hermitian_embedding(2).embed_exprs(
                &diag,
                &|_, _| AffExpr::var(re),
                &|_, _| AffExpr::var(im),
            );
            p.push_psd(block);
            p.objective = AffExpr::zero();
            let sol = solve(&p, 1e-9).unwrap();
            if feasible {
                assert_eq!(sol.status, SolveStatusKind::Optimal);
            } else {
                assert_eq!(sol.status, SolveStatusKind::Infeasible);
            }
        }
    }

    #[test]
    fn serialization_is_stable() {
        let build = || {
            let mut p = ConicProblem::new();
            let x = p.add_var();
            let y = p.add_var();
            p.push_eq(AffExpr::var(x).add(&AffExpr::scaled_var(y, 2.0)));
            p.push_box(y, -1.0, 1.0);
            p.push_soc(vec![AffExpr::var(x), AffExpr::var(y)]);
            p.objective = AffExpr::var(x);
            p.serialize_text()
        };
        assert_eq!(build(), build());
        assert!(build().contains("soc 2"));
    }
}
