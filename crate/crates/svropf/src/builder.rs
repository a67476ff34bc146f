//! Assembly of the convex tap-selection relaxation from a [`Network`].
//!
//! The decision vector collects, per bus, the Hermitian lifted voltage block
//! `V_m` (real parametrization), the net injection `s_m`, and the
//! constant-power injection `𝔰_m` (plus DG variables where specified); per
//! edge the Hermitian current block `I_nm` and the complex flow matrix
//! `S_nm`; and per SVR edge the secondary flow `S'_nm`, the ratio vector `r`,
//! its lifted products `R`, the real/imaginary voltage splits of both
//! endpoints, their `D`/`F` images, the ratio-scaled images, and the
//! rank-reinforcement auxiliaries. Constraints:
//!
//! - lifted series-impedance drop on line edges and the PSD block
//!   `[[V_n, S_nm], [S̄_nm, I_nm]] ⪰ 0` on every edge;
//! - shunt/constant-power split and per-phase power balance at every bus,
//!   with SVR secondaries drawing `diag(S')`;
//! - slack lift and voltage-magnitude boxes;
//! - per SVR: ratio boxes, per-phase (wye) or trace (delta) power equality,
//!   the linear recast of the voltage-gain equation through the split
//!   variables, McCormick polyhedra for every bilinear/trilinear product,
//!   an optional PSD block `[[R, r], [rᵀ, 1]] ⪰ 0`, optional gang rows, and
//!   optional 2×2-minor rank reinforcement at the secondary;
//! - baseline modes replace the SVR voltage machinery with diagonal ratio
//!   bounds or a pair of scaled PSD dominance blocks (wye SVRs only).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bounds::{self, BoundsError, EntryMap, TransformedBox, VoltageBox};
use crate::conic::{hermitian_embedding, AffExpr, ConicProblem, PsdBlock};
use crate::envelope::{mccormick_rows, Envelope, EnvelopeError};
use crate::loadflow::LoadFlowSolution;
use crate::netmodel::{Network, PhaseMask};
use crate::svrgain::{GainTriple, SvrType};

// ---------------------------------------------------------------------------
// Variable layouts
// ---------------------------------------------------------------------------

/// Real parametrization of a Hermitian block: diagonal entries, then the
/// real and imaginary parts of the upper off-diagonal entries (row-major
/// pair order (0,1), (0,2), ..).
#[derive(Debug, Clone)]
pub struct HermLayout {
    pub dim: usize,
    pub diag: usize,
    pub re_off: usize,
    pub im_off: usize,
}

fn pair_ix(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl HermLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> HermLayout {
        let offs = dim * (dim - 1) / 2;
        let diag = p.add_vars(dim).start;
        let re_off = p.add_vars(offs).start;
        let im_off = p.add_vars(offs).start;
        HermLayout {
            dim,
            diag,
            re_off,
            im_off,
        }
    }

    pub fn diag_ix(&self, i: usize) -> usize {
        self.diag + i
    }

    pub fn re_ix(&self, i: usize, j: usize) -> usize {
        self.re_off + pair_ix(self.dim, i.min(j), i.max(j))
    }

    pub fn im_ix(&self, i: usize, j: usize) -> usize {
        self.im_off + pair_ix(self.dim, i.min(j), i.max(j))
    }

    pub fn entry(&self, i: usize, j: usize) -> CExpr {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => CExpr {
                re: AffExpr::var(self.diag_ix(i)),
                im: AffExpr::zero(),
            },
            Less => CExpr {
                re: AffExpr::var(self.re_ix(i, j)),
                im: AffExpr::var(self.im_ix(i, j)),
            },
            Greater => CExpr {
                re: AffExpr::var(self.re_ix(j, i)),
                im: AffExpr::scaled_var(self.im_ix(j, i), -1.0),
            },
        }
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let e = self.entry(i, j);
            Complex64::new(e.re.eval(x), e.im.eval(x))
        })
    }

    fn set(&self, x: &mut [f64], m: &DMatrix<Complex64>) {
        for i in 0..self.dim {
            x[self.diag_ix(i)] = m[(i, i)].re;
            for j in i + 1..self.dim {
                x[self.re_ix(i, j)] = m[(i, j)].re;
                x[self.im_ix(i, j)] = m[(i, j)].im;
            }
        }
    }
}

/// Complex vector: `re` then `im` runs of equal length.
#[derive(Debug, Clone)]
pub struct CVecLayout {
    pub dim: usize,
    pub re: usize,
    pub im: usize,
}

impl CVecLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> CVecLayout {
        let re = p.add_vars(dim).start;
        let im = p.add_vars(dim).start;
        CVecLayout { dim, re, im }
    }

    pub fn entry(&self, i: usize) -> CExpr {
        CExpr {
            re: AffExpr::var(self.re + i),
            im: AffExpr::var(self.im + i),
        }
    }

    pub fn value(&self, x: &[f64]) -> DVector<Complex64> {
        DVector::from_fn(self.dim, |i, _| Complex64::new(x[self.re + i], x[self.im + i]))
    }

    fn set(&self, x: &mut [f64], v: &DVector<Complex64>) {
        for i in 0..self.dim {
            x[self.re + i] = v[i].re;
            x[self.im + i] = v[i].im;
        }
    }
}

/// General complex matrix, row-major.
#[derive(Debug, Clone)]
pub struct CMatLayout {
    pub dim: usize,
    pub re: usize,
    pub im: usize,
}

impl CMatLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> CMatLayout {
        let re = p.add_vars(dim * dim).start;
        let im = p.add_vars(dim * dim).start;
        CMatLayout { dim, re, im }
    }

    pub fn entry(&self, i: usize, j: usize) -> CExpr {
        let k = i * self.dim + j;
        CExpr {
            re: AffExpr::var(self.re + k),
            im: AffExpr::var(self.im + k),
        }
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let k = i * self.dim + j;
            Complex64::new(x[self.re + k], x[self.im + k])
        })
    }

    fn set(&self, x: &mut [f64], m: &DMatrix<Complex64>) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                let k = i * self.dim + j;
                x[self.re + k] = m[(i, j)].re;
                x[self.im + k] = m[(i, j)].im;
            }
        }
    }
}

/// Symmetric real matrix stored as diagonal + upper off-diagonal.
#[derive(Debug, Clone)]
pub struct SymLayout {
    pub dim: usize,
    pub diag: usize,
    pub off: usize,
}

impl SymLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> SymLayout {
        let diag = p.add_vars(dim).start;
        let off = p.add_vars(dim * (dim - 1) / 2).start;
        SymLayout { dim, diag, off }
    }

    pub fn ix(&self, i: usize, j: usize) -> usize {
        if i == j {
            self.diag + i
        } else {
            self.off + pair_ix(self.dim, i.min(j), i.max(j))
        }
    }

    pub fn expr(&self, i: usize, j: usize) -> AffExpr {
        AffExpr::var(self.ix(i, j))
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| x[self.ix(i, j)])
    }

    fn set(&self, x: &mut [f64], m: &DMatrix<f64>) {
        for i in 0..self.dim {
            for j in i..self.dim {
                x[self.ix(i, j)] = m[(i, j)];
            }
        }
    }
}

/// Antisymmetric real matrix: upper off-diagonal entries only; the diagonal
/// is identically zero and the lower triangle is the negation.
#[derive(Debug, Clone)]
pub struct SkewLayout {
    pub dim: usize,
    pub off: usize,
}

impl SkewLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> SkewLayout {
        let off = p.add_vars(dim * (dim - 1) / 2).start;
        SkewLayout { dim, off }
    }

    pub fn upper_ix(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        self.off + pair_ix(self.dim, i, j)
    }

    pub fn expr(&self, i: usize, j: usize) -> AffExpr {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => AffExpr::zero(),
            Less => AffExpr::var(self.upper_ix(i, j)),
            Greater => AffExpr::scaled_var(self.upper_ix(j, i), -1.0),
        }
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.expr(i, j).eval(x))
    }

    fn set(&self, x: &mut [f64], m: &DMatrix<f64>) {
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                x[self.upper_ix(i, j)] = m[(i, j)];
            }
        }
    }
}

/// General real matrix, row-major.
#[derive(Debug, Clone)]
pub struct FullLayout {
    pub dim: usize,
    pub start: usize,
}

impl FullLayout {
    fn alloc(p: &mut ConicProblem, dim: usize) -> FullLayout {
        let start = p.add_vars(dim * dim).start;
        FullLayout { dim, start }
    }

    pub fn ix(&self, i: usize, j: usize) -> usize {
        self.start + i * self.dim + j
    }

    pub fn expr(&self, i: usize, j: usize) -> AffExpr {
        AffExpr::var(self.ix(i, j))
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| x[self.ix(i, j)])
    }

    fn set(&self, x: &mut [f64], m: &DMatrix<f64>) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                x[self.ix(i, j)] = m[(i, j)];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Complex affine expressions
// ---------------------------------------------------------------------------

/// Complex-valued affine expression over the real decision vector.
#[derive(Debug, Clone)]
pub struct CExpr {
    pub re: AffExpr,
    pub im: AffExpr,
}

impl CExpr {
    pub fn zero() -> CExpr {
        CExpr {
            re: AffExpr::zero(),
            im: AffExpr::zero(),
        }
    }

    pub fn constant(c: Complex64) -> CExpr {
        CExpr {
            re: AffExpr::constant(c.re),
            im: AffExpr::constant(c.im),
        }
    }

    pub fn add(&self, o: &CExpr) -> CExpr {
        CExpr {
            re: self.re.add(&o.re),
            im: self.im.add(&o.im),
        }
    }

    pub fn sub(&self, o: &CExpr) -> CExpr {
        CExpr {
            re: self.re.sub(&o.re),
            im: self.im.sub(&o.im),
        }
    }

    pub fn mul_const(&self, c: Complex64) -> CExpr {
        CExpr {
            re: self.re.scale(c.re).sub(&self.im.scale(c.im)),
            im: self.re.scale(c.im).add(&self.im.scale(c.re)),
        }
    }

    pub fn conj(&self) -> CExpr {
        CExpr {
            re: self.re.clone(),
            im: self.im.scale(-1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }
}

type CMatExpr = Vec<Vec<CExpr>>;

fn cmat_from<Ff: Fn(usize, usize) -> CExpr>(n: usize, f: Ff) -> CMatExpr {
    (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect()
}

/// `A · M` with constant complex `A`.
fn cmat_mul_left(a: &DMatrix<Complex64>, m: &CMatExpr) -> CMatExpr {
    let n = m.len();
    cmat_from(n, |i, j| {
        let mut acc = CExpr::zero();
        for (k, row) in m.iter().enumerate() {
            if a[(i, k)] != Complex64::new(0.0, 0.0) {
                acc = acc.add(&row[j].mul_const(a[(i, k)]));
            }
        }
        acc
    })
}

/// `M · A` with constant complex `A`.
fn cmat_mul_right(m: &CMatExpr, a: &DMatrix<Complex64>) -> CMatExpr {
    let n = m.len();
    cmat_from(n, |i, j| {
        let mut acc = CExpr::zero();
        for k in 0..n {
            if a[(k, j)] != Complex64::new(0.0, 0.0) {
                acc = acc.add(&m[i][k].mul_const(a[(k, j)]));
            }
        }
        acc
    })
}

fn cmat_adjoint(m: &CMatExpr) -> CMatExpr {
    cmat_from(m.len(), |i, j| m[j][i].conj())
}

fn cmat_sub(a: &CMatExpr, b: &CMatExpr) -> CMatExpr {
    cmat_from(a.len(), |i, j| a[i][j].sub(&b[i][j]))
}

fn cmat_add(a: &CMatExpr, b: &CMatExpr) -> CMatExpr {
    cmat_from(a.len(), |i, j| a[i][j].add(&b[i][j]))
}

// ---------------------------------------------------------------------------
// Options, variable map, statistics
// ---------------------------------------------------------------------------

/// How SVR tap selection is represented in the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvrMode {
    /// Full McCormick/minor machinery with per-phase continuous ratios.
    Mbopf,
    /// Diagonal dominance rows `r_min²·V_mᵠᵠ ≤ V_nᵠᵠ ≤ r_max²·V_mᵠᵠ`
    /// (wye SVRs only; ratios are not decision variables).
    CiopfStyle,
    /// Matrix dominance `r_min²·V_m ⪯ V_n ⪯ r_max²·V_m` (gang-operated wye
    /// SVRs only; ratios are not decision variables).
    CgopfStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Minimize real power import through the slack.
    Import,
    /// Minimize import plus total real DG injection.
    ImportPlusDg,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub svr_mode: SvrMode,
    /// Add 2×2-minor reinforcement at SVR secondaries.
    pub rank_reinforcement: bool,
    /// Add the PSD block `[[R, r], [rᵀ, 1]] ⪰ 0`.
    pub psd_on_r: bool,
    pub objective: ObjectiveKind,
    /// Phase-separation half-width per SVR, degrees. A single entry
    /// broadcasts; empty uses 5°.
    pub delta: Vec<f64>,
    /// Overrides the per-SVR gang flags when set.
    pub gang_override: Option<bool>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            svr_mode: SvrMode::Mbopf,
            rank_reinforcement: true,
            psd_on_r: true,
            objective: ObjectiveKind::Import,
            delta: Vec::new(),
            gang_override: None,
        }
    }
}

impl BuildOptions {
    pub fn delta_for(&self, svr_idx: usize) -> f64 {
        match self.delta.len() {
            0 => 5.0,
            1 => self.delta[0],
            _ => self.delta.get(svr_idx).copied().unwrap_or(5.0),
        }
    }

    fn gang_for(&self, spec_gang: bool) -> bool {
        self.gang_override.unwrap_or(spec_gang)
    }
}

/// Tap-selection variables of one SVR edge (present in `Mbopf` mode).
#[derive(Debug, Clone)]
pub struct SvrTapVars {
    /// Ratio variables, one per label.
    pub r: Vec<usize>,
    pub big_r: SymLayout,
    pub u_n: SymLayout,
    pub w_n: SkewLayout,
    pub u_m: SymLayout,
    pub w_m: SkewLayout,
    pub tilde_u: SymLayout,
    pub tilde_w: SkewLayout,
    pub frak_tilde_u: SymLayout,
    pub frak_tilde_psi: SkewLayout,
    /// `F`-image chains; absent for wye where `F = 0`.
    pub hat: Option<HatVars>,
    /// Boxes used for this SVR's secondary.
    pub voltage_box: VoltageBox,
    pub transformed_box: TransformedBox,
}

#[derive(Debug, Clone)]
pub struct HatVars {
    pub hat_u: FullLayout,
    pub hat_w: FullLayout,
    pub frak_hat_u: FullLayout,
    pub frak_hat_psi: FullLayout,
}

/// Minor-reinforcement auxiliaries at one SVR secondary.
#[derive(Debug, Clone)]
pub struct MinorVars {
    /// Per unordered local pair `(i, j)`: `X¹ = U_ii·U_jj`, `X² = (U_ij)²`,
    /// `X³ = (W_ij)²`.
    pub principal: Vec<((usize, usize), [usize; 3])>,
    /// Per local phase `i` (three-phase secondaries only): the six products
    /// of the off-principal minor, `X⁴..X⁹`.
    pub offdiag: Vec<(usize, [usize; 6])>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct BuildStats {
    pub vars: usize,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    pub soc_cones: usize,
    pub psd_blocks: usize,
    /// McCormick groups on ratio products `R = r rᵀ`.
    pub mccormick_r: usize,
    /// McCormick groups on the tilde/hat voltage chains.
    pub mccormick_trilinear: usize,
    /// McCormick groups from rank reinforcement.
    pub mccormick_minor: usize,
    pub minor_eq_rows: usize,
}

/// Symbol table of the assembled program.
#[derive(Debug, Clone)]
pub struct VarMap {
    pub num_vars: usize,
    pub v: Vec<HermLayout>,
    pub s: Vec<CVecLayout>,
    pub frak_s: Vec<CVecLayout>,
    pub dg: Vec<Option<CVecLayout>>,
    pub line_i: Vec<HermLayout>,
    pub line_s: Vec<CMatLayout>,
    pub svr_i: Vec<HermLayout>,
    pub svr_s: Vec<CMatLayout>,
    pub svr_sp: Vec<CMatLayout>,
    pub svr_tap: Vec<Option<SvrTapVars>>,
    pub minors: Vec<Option<MinorVars>>,
    pub stats: BuildStats,
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("infeasible box: {0}")]
    InfeasibleBox(String),
    #[error("bus {0} is not an SVR secondary with tap variables")]
    NotSvrSecondary(usize),
    #[error("objective requires at least one DG spec")]
    MissingDg,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

impl From<EnvelopeError> for BuildError {
    fn from(e: EnvelopeError) -> Self {
        BuildError::InfeasibleBox(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Constraint emission helpers
// ---------------------------------------------------------------------------

/// Local indices of `sub` within `sup`.
fn phase_selection(sup: PhaseMask, sub: PhaseMask) -> Vec<usize> {
    sub.iter()
        .map(|p| sup.index_of(p).expect("edge phases present at bus"))
        .collect()
}

fn herm_expr_sub(h: &HermLayout, sel: &[usize]) -> CMatExpr {
    cmat_from(sel.len(), |i, j| h.entry(sel[i], sel[j]))
}

fn cmat_expr(m: &CMatLayout) -> CMatExpr {
    cmat_from(m.dim, |i, j| m.entry(i, j))
}

fn dmatrix_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Pushes the Hermitian equality `M == 0`: real rows on the upper triangle
/// including the diagonal, imaginary rows strictly above it.
fn push_herm_eq(p: &mut ConicProblem, m: &CMatExpr) {
    let n = m.len();
    for i in 0..n {
        for j in i..n {
            p.push_eq(m[i][j].re.clone());
            if j > i {
                p.push_eq(m[i][j].im.clone());
            }
        }
    }
}

/// Pushes a complex equality per vector entry.
fn push_cvec_eq(p: &mut ConicProblem, v: &[CExpr]) {
    for e in v {
        p.push_eq(e.re.clone());
        p.push_eq(e.im.clone());
    }
}

/// Emits the PSD block `[[Vn_sub, S], [S̄, I]] ⪰ 0` through the Hermitian
/// embedding.
fn push_flow_psd(
    p: &mut ConicProblem,
    v_n: &HermLayout,
    sel: &[usize],
    s: &CMatLayout,
    i_blk: &HermLayout,
) {
    let q = sel.len();
    let entry = |r: usize, c: usize| -> CExpr {
        match (r < q, c < q) {
            (true, true) => v_n.entry(sel[r], sel[c]),
            (true, false) => s.entry(r, c - q),
            (false, true) => s.entry(c, r - q).conj(),
            (false, false) => i_blk.entry(r - q, c - q),
        }
    };
    let diag: Vec<AffExpr> = (0..2 * q).map(|i| entry(i, i).re).collect();
    let block = hermitian_embedding(2 * q).embed_exprs(
        &diag,
        &|i, j| entry(i, j).re.clone(),
        &|i, j| entry(i, j).im.clone(),
    );
    p.push_psd(block);
}

/// McCormick group over affine expressions. Only the four estimator rows are
/// emitted; each participating variable carries its box rows exactly once
/// elsewhere, which cuts the same polyhedron without duplicated parallel rows.
fn push_mccormick(p: &mut ConicProblem, u: &AffExpr, w: &AffExpr, x: &AffExpr, env: &Envelope) {
    for row in env.estimator_rows() {
        let mut e = u.scale(row.cu).add(&w.scale(row.cw)).add(&x.scale(row.cx));
        e.constant -= row.rhs;
        p.push_leq(e);
    }
}

/// Affine expression of an [`EntryMap`] over split-variable layouts.
fn entry_map_expr(m: &EntryMap, u: &SymLayout, w: &SkewLayout) -> AffExpr {
    let n = u.dim;
    let mut e = AffExpr::zero();
    for i in 0..n {
        if m.u_diag[i] != 0.0 {
            e.push(u.ix(i, i), m.u_diag[i]);
        }
    }
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if m.u_off[k] != 0.0 {
                e.push(u.ix(i, j), m.u_off[k]);
            }
            if m.w_off[k] != 0.0 {
                e.push(w.upper_ix(i, j), m.w_off[k]);
            }
            k += 1;
        }
    }
    e.normalized()
}

// ---------------------------------------------------------------------------
// Build
// ---------------------------------------------------------------------------

/// Assembles the conic relaxation for a validated network.
pub fn build_mbopf(
    network: &Network,
    opts: &BuildOptions,
) -> Result<(ConicProblem, VarMap), BuildError> {
    if opts.svr_mode != SvrMode::Mbopf {
        if let Some(s) = network
            .svrs
            .iter()
            .find(|s| s.spec.svr_type != SvrType::Wye)
        {
            return Err(BuildError::UnsupportedMode(format!(
                "{:?} mode supports only wye SVRs, found {:?}",
                opts.svr_mode, s.spec.svr_type
            )));
        }
    }

    let mut p = ConicProblem::new();
    let mut stats = BuildStats::default();

    // -- Variable allocation (deterministic order) --
    let mut v = Vec::new();
    let mut s_inj = Vec::new();
    let mut frak_s = Vec::new();
    let mut dg = Vec::new();
    for bus in &network.buses {
        let n = bus.phases.len();
        v.push(HermLayout::alloc(&mut p, n));
        s_inj.push(CVecLayout::alloc(&mut p, n));
        frak_s.push(CVecLayout::alloc(&mut p, n));
        dg.push((bus.id != 0 && bus.dg.is_some()).then(|| CVecLayout::alloc(&mut p, n)));
    }
    let mut line_i = Vec::new();
    let mut line_s = Vec::new();
    for l in &network.lines {
        let n = l.phases.len();
        line_i.push(HermLayout::alloc(&mut p, n));
        line_s.push(CMatLayout::alloc(&mut p, n));
    }
    let mut svr_i = Vec::new();
    let mut svr_s = Vec::new();
    let mut svr_sp = Vec::new();
    let mut svr_tap: Vec<Option<SvrTapVars>> = Vec::new();
    for (k, svr) in network.svrs.iter().enumerate() {
        let n = svr.phases.len();
        svr_i.push(HermLayout::alloc(&mut p, n));
        svr_s.push(CMatLayout::alloc(&mut p, n));
        svr_sp.push(CMatLayout::alloc(&mut p, n));
        if opts.svr_mode == SvrMode::Mbopf {
            let labels = svr.spec.r_min.len();
            let r: Vec<usize> = (0..labels).map(|_| p.add_var()).collect();
            let is_delta = svr.spec.svr_type != SvrType::Wye;
            let bx = bounds::voltage_box(
                svr.phases,
                network.v_min,
                network.v_max,
                opts.delta_for(k),
            )?;
            let triple = GainTriple::new(svr.spec.svr_type, svr.phases);
            let tb = bounds::transformed_box(&triple.d, &triple.f, &bx);
            svr_tap.push(Some(SvrTapVars {
                r,
                big_r: SymLayout::alloc(&mut p, labels),
                u_n: SymLayout::alloc(&mut p, n),
                w_n: SkewLayout::alloc(&mut p, n),
                u_m: SymLayout::alloc(&mut p, n),
                w_m: SkewLayout::alloc(&mut p, n),
                tilde_u: SymLayout::alloc(&mut p, n),
                tilde_w: SkewLayout::alloc(&mut p, n),
                frak_tilde_u: SymLayout::alloc(&mut p, n),
                frak_tilde_psi: SkewLayout::alloc(&mut p, n),
                hat: is_delta.then(|| HatVars {
                    hat_u: FullLayout::alloc(&mut p, n),
                    hat_w: FullLayout::alloc(&mut p, n),
                    frak_hat_u: FullLayout::alloc(&mut p, n),
                    frak_hat_psi: FullLayout::alloc(&mut p, n),
                }),
                voltage_box: bx,
                transformed_box: tb,
            }));
        } else {
            svr_tap.push(None);
        }
    }

    let mut vm = VarMap {
        num_vars: 0,
        v,
        s: s_inj,
        frak_s,
        dg,
        line_i,
        line_s,
        svr_i,
        svr_s,
        svr_sp,
        svr_tap,
        minors: vec![None; network.svrs.len()],
        stats: BuildStats::default(),
    };

    // -- Slack lift: V_0 pinned to the slack phasor outer product --
    {
        let v0 = &network.slack_voltage;
        let lay = &vm.v[0];
        for i in 0..lay.dim {
            let mut e = AffExpr::var(lay.diag_ix(i));
            e.constant = -(v0[i] * v0[i].conj()).re;
            p.push_eq(e);
            for j in i + 1..lay.dim {
                let val = v0[i] * v0[j].conj();
                let mut e = AffExpr::var(lay.re_ix(i, j));
                e.constant = -val.re;
                p.push_eq(e);
                let mut e = AffExpr::var(lay.im_ix(i, j));
                e.constant = -val.im;
                p.push_eq(e);
            }
        }
    }

    // -- Per-bus rows --
    for (m, bus) in network.buses.iter().enumerate() {
        let n = bus.phases.len();
        let v_lay = &vm.v[m];

        // Voltage magnitude box on diag(V).
        let (lo, hi) = (network.v_min * network.v_min, network.v_max * network.v_max);
        for i in 0..n {
            p.push_box(v_lay.diag_ix(i), lo, hi);
        }

        // Shunt/constant-power split: s = 𝔰 − diag(V Ȳ).
        let rows: Vec<CExpr> = (0..n)
            .map(|k| {
                let mut shunt = CExpr::zero();
                for l in 0..n {
                    let y = bus.shunt_y[(k, l)];
                    if y != Complex64::new(0.0, 0.0) {
                        shunt = shunt.add(&v_lay.entry(k, l).mul_const(y.conj()));
                    }
                }
                vm.s[m].entry(k).sub(&vm.frak_s[m].entry(k)).add(&shunt)
            })
            .collect();
        push_cvec_eq(&mut p, &rows);

        // Power balance: s_m = Σ_out diag(S) − Σ_svr-in diag(S') − Σ_line-in diag(S − Z·I).
        let mut rows: Vec<CExpr> = (0..n).map(|k| vm.s[m].entry(k)).collect();
        for (li, l) in network.lines.iter().enumerate() {
            if l.from == m {
                let sel = phase_selection(bus.phases, l.phases);
                for (k, &slot) in sel.iter().enumerate() {
                    rows[slot] = rows[slot].sub(&vm.line_s[li].entry(k, k));
                }
            }
            if l.to == m {
                // diag(S − Z·I) over the edge phases (equal to this bus's).
                let i_expr =
                    herm_expr_sub(&vm.line_i[li], &(0..l.phases.len()).collect::<Vec<_>>());
                for k in 0..l.phases.len() {
                    let mut zi = CExpr::zero();
                    for q in 0..l.phases.len() {
                        if l.z[(k, q)] != Complex64::new(0.0, 0.0) {
                            zi = zi.add(&i_expr[q][k].mul_const(l.z[(k, q)]));
                        }
                    }
                    rows[k] = rows[k].add(&vm.line_s[li].entry(k, k)).sub(&zi);
                }
            }
        }
        for (si, s) in network.svrs.iter().enumerate() {
            if s.from == m {
                let sel = phase_selection(bus.phases, s.phases);
                for (k, &slot) in sel.iter().enumerate() {
                    rows[slot] = rows[slot].sub(&vm.svr_s[si].entry(k, k));
                }
            }
            if s.to == m {
                for k in 0..s.phases.len() {
                    rows[k] = rows[k].add(&vm.svr_sp[si].entry(k, k));
                }
            }
        }
        push_cvec_eq(&mut p, &rows);

        // Constant-power operating set: free at the slack (import), singleton
        // or DG disk elsewhere.
        if m > 0 {
            match &vm.dg[m] {
                None => {
                    let rows: Vec<CExpr> = (0..n)
                        .map(|k| {
                            vm.frak_s[m]
                                .entry(k)
                                .sub(&CExpr::constant(-bus.load_s[k]))
                        })
                        .collect();
                    push_cvec_eq(&mut p, &rows);
                }
                Some(dg_lay) => {
                    let spec = bus.dg.as_ref().expect("dg layout implies spec");
                    let rows: Vec<CExpr> = (0..n)
                        .map(|k| {
                            vm.frak_s[m]
                                .entry(k)
                                .sub(&dg_lay.entry(k))
                                .add(&CExpr::constant(bus.load_s[k]))
                        })
                        .collect();
                    push_cvec_eq(&mut p, &rows);
                    let tan_phi = spec.power_factor.acos().tan();
                    for k in 0..n {
                        // |Im 𝔰ᵍ| ≤ tan(arccos PF) · Re 𝔰ᵍ
                        let re = AffExpr::var(dg_lay.re + k);
                        let im = AffExpr::var(dg_lay.im + k);
                        p.push_leq(im.sub(&re.scale(tan_phi)));
                        p.push_leq(im.scale(-1.0).sub(&re.scale(tan_phi)));
                        // Apparent-power cap per phase.
                        p.push_soc(vec![AffExpr::constant(spec.s_max), re, im]);
                    }
                }
            }
        }
    }

    // -- Line edges: lifted series drop and flow PSD block --
    for (li, l) in network.lines.iter().enumerate() {
        let sel_n = phase_selection(network.buses[l.from].phases, l.phases);
        let sel_m: Vec<usize> = (0..l.phases.len()).collect();
        let v_n = herm_expr_sub(&vm.v[l.from], &sel_n);
        let v_m = herm_expr_sub(&vm.v[l.to], &sel_m);
        let i_e = herm_expr_sub(&vm.line_i[li], &sel_m);
        let s_e = cmat_expr(&vm.line_s[li]);
        let z_adj = l.z.adjoint();

        // V_m − V_n − Z·I·Z̄ + S·Z̄ + Z·S̄ == 0
        let zizh = cmat_mul_right(&cmat_mul_left(&l.z, &i_e), &z_adj);
        let szh = cmat_mul_right(&s_e, &z_adj);
        let zsh = cmat_mul_left(&l.z, &cmat_adjoint(&s_e));
        let resid = cmat_add(&cmat_sub(&cmat_sub(&v_m, &v_n), &zizh), &cmat_add(&szh, &zsh));
        push_herm_eq(&mut p, &resid);

        push_flow_psd(&mut p, &vm.v[l.from], &sel_n, &vm.line_s[li], &vm.line_i[li]);
    }

    // -- SVR edges --
    for (si, svr) in network.svrs.iter().enumerate() {
        let sel_n = phase_selection(network.buses[svr.from].phases, svr.phases);
        let n = svr.phases.len();

        push_flow_psd(&mut p, &vm.v[svr.from], &sel_n, &vm.svr_s[si], &vm.svr_i[si]);

        // Power conservation across the ideal device: per phase for wye,
        // trace for the delta connections.
        let s_e = cmat_expr(&vm.svr_s[si]);
        let sp_e = cmat_expr(&vm.svr_sp[si]);
        if svr.spec.svr_type == SvrType::Wye {
            let rows: Vec<CExpr> = (0..n).map(|k| s_e[k][k].sub(&sp_e[k][k])).collect();
            push_cvec_eq(&mut p, &rows);
        } else {
            let mut tr = CExpr::zero();
            for k in 0..n {
                tr = tr.add(&s_e[k][k]).sub(&sp_e[k][k]);
            }
            push_cvec_eq(&mut p, &[tr]);
        }

        match opts.svr_mode {
            SvrMode::Mbopf => {
                emit_svr_tap_machinery(&mut p, &mut stats, network, &vm, si, opts)?;
            }
            SvrMode::CiopfStyle => {
                // r_min²·diag(V_m) ≤ diag(V_n) ≤ r_max²·diag(V_m), per phase.
                for k in 0..n {
                    let vnk = AffExpr::var(vm.v[svr.from].diag_ix(sel_n[k]));
                    let vmk = AffExpr::var(vm.v[svr.to].diag_ix(k));
                    let lo = svr.spec.r_min[k] * svr.spec.r_min[k];
                    let hi = svr.spec.r_max[k] * svr.spec.r_max[k];
                    p.push_leq(vmk.scale(lo).sub(&vnk));
                    p.push_leq(vnk.sub(&vmk.scale(hi)));
                }
            }
            SvrMode::CgopfStyle => {
                // r_min²·V_m ⪯ V_n ⪯ r_max²·V_m as two Hermitian PSD blocks.
                let lo = svr
                    .spec
                    .r_min
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b))
                    .powi(2);
                let hi = svr.spec.r_max.iter().fold(0.0f64, |a, &b| a.max(b)).powi(2);
                let v_n = herm_expr_sub(&vm.v[svr.from], &sel_n);
                let v_m = herm_expr_sub(&vm.v[svr.to], &(0..n).collect::<Vec<_>>());
                for (scale, upper) in [(lo, false), (hi, true)] {
                    let h = cmat_from(n, |i, j| {
                        let d = v_n[i][j].sub(&v_m[i][j].mul_const(Complex64::new(scale, 0.0)));
                        if upper {
                            d.mul_const(Complex64::new(-1.0, 0.0))
                        } else {
                            d
                        }
                    });
                    let diag: Vec<AffExpr> = (0..n).map(|i| h[i][i].re.clone()).collect();
                    let block = hermitian_embedding(n).embed_exprs(
                        &diag,
                        &|i, j| h[i][j].re.clone(),
                        &|i, j| h[i][j].im.clone(),
                    );
                    p.push_psd(block);
                }
            }
        }
    }

    // -- Rank reinforcement at SVR secondaries --
    if opts.svr_mode == SvrMode::Mbopf && opts.rank_reinforcement {
        for si in 0..network.svrs.len() {
            add_rank_reinforcement(&mut p, &mut vm, network, si)?;
            stats.minor_eq_rows += vm.minors[si]
                .as_ref()
                .map(|mv| mv.principal.len() + 2 * mv.offdiag.len())
                .unwrap_or(0);
        }
    }

    objective(&mut p, &vm, network, opts.objective)?;

    stats.vars = p.num_vars;
    stats.eq_rows = p.eq.len();
    stats.ineq_rows = p.ineq.len();
    stats.soc_cones = p.soc.len();
    stats.psd_blocks = p.psd.len();
    stats.mccormick_minor = vm.stats.mccormick_minor;
    vm.stats = stats;
    vm.num_vars = p.num_vars;
    Ok((p, vm))
}

/// Ratio boxes, split-variable links, the linear recast of the gain
/// equation, and all McCormick groups for one SVR edge.
fn emit_svr_tap_machinery(
    p: &mut ConicProblem,
    stats: &mut BuildStats,
    network: &Network,
    vm: &VarMap,
    si: usize,
    opts: &BuildOptions,
) -> Result<(), BuildError> {
    let svr = &network.svrs[si];
    let tap = vm.svr_tap[si].as_ref().expect("mbopf mode allocates taps");
    let n = svr.phases.len();
    let labels = tap.r.len();
    let sel_n = phase_selection(network.buses[svr.from].phases, svr.phases);
    let triple = GainTriple::new(svr.spec.svr_type, svr.phases);

    // Ratio boxes (fixed labels collapse to an equality-width box).
    for (k, &rv) in tap.r.iter().enumerate() {
        p.push_box(rv, svr.spec.r_min[k], svr.spec.r_max[k]);
    }

    // Gang rows.
    if opts.gang_for(svr.spec.gang) {
        let fixed = svr.spec.fixed_labels();
        let free: Vec<usize> = (0..labels).filter(|&k| !fixed[k]).collect();
        for pair in free.windows(2) {
            p.push_eq(AffExpr::var(tap.r[pair[0]]).sub(&AffExpr::var(tap.r[pair[1]])));
        }
    }

    // Split-variable links: U/W equal the real and imaginary parts of the
    // endpoint voltage blocks.
    let v_n = herm_expr_sub(&vm.v[svr.from], &sel_n);
    let v_m = herm_expr_sub(&vm.v[svr.to], &(0..n).collect::<Vec<_>>());
    for i in 0..n {
        for j in i..n {
            p.push_eq(tap.u_n.expr(i, j).sub(&v_n[i][j].re));
            p.push_eq(tap.u_m.expr(i, j).sub(&v_m[i][j].re));
            if j > i {
                p.push_eq(tap.w_n.expr(i, j).sub(&v_n[i][j].im));
                p.push_eq(tap.w_m.expr(i, j).sub(&v_m[i][j].im));
            }
        }
    }

    // Images under D and F as linear maps of the split variables.
    for i in 0..n {
        for j in 0..n {
            if j >= i {
                let map = EntryMap::of_product(&triple.d, &triple.d, i, j, true);
                p.push_eq(
                    tap.tilde_u
                        .expr(i, j)
                        .sub(&entry_map_expr(&map, &tap.u_m, &tap.w_m)),
                );
            }
            if j > i {
                let map = EntryMap::of_product(&triple.d, &triple.d, i, j, false);
                p.push_eq(
                    tap.tilde_w
                        .expr(i, j)
                        .sub(&entry_map_expr(&map, &tap.u_m, &tap.w_m)),
                );
            }
            if let Some(hat) = &tap.hat {
                let map = EntryMap::of_product(&triple.d, &triple.f, i, j, true);
                p.push_eq(
                    hat.hat_u
                        .expr(i, j)
                        .sub(&entry_map_expr(&map, &tap.u_m, &tap.w_m)),
                );
                let map = EntryMap::of_product(&triple.d, &triple.f, i, j, false);
                p.push_eq(
                    hat.hat_w
                        .expr(i, j)
                        .sub(&entry_map_expr(&map, &tap.u_m, &tap.w_m)),
                );
            }
        }
    }

    // Recast gain equation: U_n = 𝖀̃ + 𝖀̂ + 𝖀̂ᵀ + F·U_m·Fᵀ and
    // W_n = Ψ̃ + Ψ̂ − Ψ̂ᵀ + F·W_m·Fᵀ.
    for i in 0..n {
        for j in i..n {
            let mut rhs = tap.frak_tilde_u.expr(i, j);
            if let Some(hat) = &tap.hat {
                rhs = rhs
                    .add(&hat.frak_hat_u.expr(i, j))
                    .add(&hat.frak_hat_u.expr(j, i));
                let map = EntryMap::of_product(&triple.f, &triple.f, i, j, true);
                rhs = rhs.add(&entry_map_expr(&map, &tap.u_m, &tap.w_m));
            }
            p.push_eq(tap.u_n.expr(i, j).sub(&rhs));
            if j > i {
                let mut rhs = tap.frak_tilde_psi.expr(i, j);
                if let Some(hat) = &tap.hat {
                    rhs = rhs
                        .add(&hat.frak_hat_psi.expr(i, j))
                        .sub(&hat.frak_hat_psi.expr(j, i));
                    let map = EntryMap::of_product(&triple.f, &triple.f, i, j, false);
                    rhs = rhs.add(&entry_map_expr(&map, &tap.u_m, &tap.w_m));
                }
                p.push_eq(tap.w_n.expr(i, j).sub(&rhs));
            }
        }
    }

    // Boxes on the secondary splits and their images.
    let bx = &tap.voltage_box;
    let tb = &tap.transformed_box;
    for i in 0..n {
        for j in i..n {
            p.push_box(tap.u_m.ix(i, j), bx.u_min[(i, j)], bx.u_max[(i, j)]);
            p.push_box(
                tap.tilde_u.ix(i, j),
                tb.tilde_u_min[(i, j)],
                tb.tilde_u_max[(i, j)],
            );
            if j > i {
                p.push_box(tap.w_m.upper_ix(i, j), bx.w_min[(i, j)], bx.w_max[(i, j)]);
                p.push_box(
                    tap.tilde_w.upper_ix(i, j),
                    tb.tilde_w_min[(i, j)],
                    tb.tilde_w_max[(i, j)],
                );
            }
        }
    }
    if let Some(hat) = &tap.hat {
        for i in 0..n {
            for j in 0..n {
                p.push_box(hat.hat_u.ix(i, j), tb.hat_u_min[(i, j)], tb.hat_u_max[(i, j)]);
                p.push_box(hat.hat_w.ix(i, j), tb.hat_w_min[(i, j)], tb.hat_w_max[(i, j)]);
            }
        }
    }

    // Ratio products: R = r rᵀ via McCormick over all ordered label pairs,
    // plus the optional PSD strengthening. Entry boxes once per unique entry
    // (ratios are positive, so the product box is the product of bounds).
    for a in 0..labels {
        for b in a..labels {
            p.push_box(
                tap.big_r.ix(a, b),
                svr.spec.r_min[a] * svr.spec.r_min[b],
                svr.spec.r_max[a] * svr.spec.r_max[b],
            );
        }
    }
    for a in 0..labels {
        for b in 0..labels {
            let env = mccormick_rows(
                svr.spec.r_min[a],
                svr.spec.r_max[a],
                svr.spec.r_min[b],
                svr.spec.r_max[b],
            )?;
            push_mccormick(
                p,
                &AffExpr::var(tap.r[a]),
                &AffExpr::var(tap.r[b]),
                &tap.big_r.expr(a, b),
                &env,
            );
            stats.mccormick_r += 1;
        }
    }
    if opts.psd_on_r {
        let block = PsdBlock::from_upper(labels + 1, |i, j| {
            if j < labels {
                tap.big_r.expr(i, j)
            } else if i < labels {
                AffExpr::var(tap.r[i])
            } else {
                AffExpr::constant(1.0)
            }
        });
        p.push_psd(block);
    }

    // Trilinear chains. Tilde entries pair with R over the diagonal-and-
    // right-shift wedge; hat entries pair with r over all ordered pairs.
    let ph = svr.phases.phases();
    let local_shift = |i: usize| -> usize {
        svr.phases
            .index_of(svr.phases.right_shift(ph[i]))
            .expect("shift stays in mask")
    };
    for i in 0..n {
        let js = if local_shift(i) == i {
            vec![i]
        } else {
            vec![i, local_shift(i)]
        };
        for &j in &js {
            // 𝖀̃_ij = R_ij · Ũ_ij (labels coincide with phases here).
            let env = mccormick_rows(
                svr.spec.r_min[i] * svr.spec.r_min[j],
                svr.spec.r_max[i] * svr.spec.r_max[j],
                tb.tilde_u_min[(i, j)],
                tb.tilde_u_max[(i, j)],
            )?;
            push_mccormick(
                p,
                &tap.big_r.expr(i, j),
                &tap.tilde_u.expr(i, j),
                &tap.frak_tilde_u.expr(i, j),
                &env,
            );
            stats.mccormick_trilinear += 1;
            if j != i {
                // Ψ̃_ij = R_ij · W̃_ij; the diagonal vanishes identically.
                let env = mccormick_rows(
                    svr.spec.r_min[i] * svr.spec.r_min[j],
                    svr.spec.r_max[i] * svr.spec.r_max[j],
                    tb.tilde_w_min[(i, j)],
                    tb.tilde_w_max[(i, j)],
                )?;
                push_mccormick(
                    p,
                    &tap.big_r.expr(i, j),
                    &tap.tilde_w.expr(i, j),
                    &tap.frak_tilde_psi.expr(i, j),
                    &env,
                );
                stats.mccormick_trilinear += 1;
            }
        }
    }
    if let Some(hat) = &tap.hat {
        for i in 0..n {
            for j in 0..n {
                let env = mccormick_rows(
                    svr.spec.r_min[i],
                    svr.spec.r_max[i],
                    tb.hat_u_min[(i, j)],
                    tb.hat_u_max[(i, j)],
                )?;
                push_mccormick(
                    p,
                    &AffExpr::var(tap.r[i]),
                    &hat.hat_u.expr(i, j),
                    &hat.frak_hat_u.expr(i, j),
                    &env,
                );
                stats.mccormick_trilinear += 1;
                let env = mccormick_rows(
                    svr.spec.r_min[i],
                    svr.spec.r_max[i],
                    tb.hat_w_min[(i, j)],
                    tb.hat_w_max[(i, j)],
                )?;
                push_mccormick(
                    p,
                    &AffExpr::var(tap.r[i]),
                    &hat.hat_w.expr(i, j),
                    &hat.frak_hat_psi.expr(i, j),
                    &env,
                );
                stats.mccormick_trilinear += 1;
            }
        }
    }

    Ok(())
}

/// Adds the linearized 2×2-minor conditions approximating rank-1-ness of the
/// SVR secondary voltage block. Three-phase secondaries get all nine product
/// variables per phase triple; two-phase secondaries only the principal
/// group; single-phase secondaries contribute nothing. Returns the number of
/// rows added.
pub fn add_rank_reinforcement(
    p: &mut ConicProblem,
    vm: &mut VarMap,
    network: &Network,
    svr_idx: usize,
) -> Result<usize, BuildError> {
    let svr = network
        .svrs
        .get(svr_idx)
        .ok_or(BuildError::NotSvrSecondary(svr_idx))?;
    let tap = vm.svr_tap[svr_idx]
        .as_ref()
        .ok_or(BuildError::NotSvrSecondary(svr.to))?
        .clone();
    let n = svr.phases.len();
    if n < 2 {
        vm.minors[svr_idx] = Some(MinorVars {
            principal: Vec::new(),
            offdiag: Vec::new(),
        });
        return Ok(0);
    }
    let bx = tap.voltage_box.clone();
    let rows_before = p.eq.len() + p.ineq.len();
    let mut groups = 0usize;

    let push_group = |p: &mut ConicProblem,
                      u: &AffExpr,
                      ub: (f64, f64),
                      w: &AffExpr,
                      wb: (f64, f64),
                      x: usize|
     -> Result<(), BuildError> {
        let env = mccormick_rows(ub.0, ub.1, wb.0, wb.1)?;
        push_mccormick(p, u, w, &AffExpr::var(x), &env);
        Ok(())
    };

    let u_diag_box = |i: usize| (bx.u_min[(i, i)], bx.u_max[(i, i)]);
    let u_off_box = |i: usize, j: usize| (bx.u_min[(i, j)], bx.u_max[(i, j)]);
    let w_box = |i: usize, j: usize| (bx.w_min[(i, j)], bx.w_max[(i, j)]);

    let mut principal = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let xs = [p.add_var(), p.add_var(), p.add_var()];
            // X¹ − X² − X³ = 0 with X¹ = U_ii·U_jj, X² = U_ij², X³ = W_ij².
            p.push_eq(
                AffExpr::var(xs[0])
                    .sub(&AffExpr::var(xs[1]))
                    .sub(&AffExpr::var(xs[2])),
            );
            push_group(
                p,
                &tap.u_m.expr(i, i),
                u_diag_box(i),
                &tap.u_m.expr(j, j),
                u_diag_box(j),
                xs[0],
            )?;
            push_group(
                p,
                &tap.u_m.expr(i, j),
                u_off_box(i, j),
                &tap.u_m.expr(i, j),
                u_off_box(i, j),
                xs[1],
            )?;
            push_group(
                p,
                &tap.w_m.expr(i, j),
                w_box(i, j),
                &tap.w_m.expr(i, j),
                w_box(i, j),
                xs[2],
            )?;
            groups += 3;
            principal.push(((i, j), xs));
        }
    }

    let mut offdiag = Vec::new();
    if n == 3 {
        for i in 0..3 {
            let j = (i + 1) % 3; // right shift
            let k = (i + 2) % 3; // left shift
            let xs = [
                p.add_var(),
                p.add_var(),
                p.add_var(),
                p.add_var(),
                p.add_var(),
                p.add_var(),
            ];
            // X⁴ − X⁵ − X⁶ = 0 and X⁷ + X⁸ − X⁹ = 0: the real and imaginary
            // parts of the off-principal 2×2 minor of a rank-1 Hermitian
            // block vanish.
            p.push_eq(
                AffExpr::var(xs[0])
                    .sub(&AffExpr::var(xs[1]))
                    .sub(&AffExpr::var(xs[2])),
            );
            p.push_eq(
                AffExpr::var(xs[3])
                    .add(&AffExpr::var(xs[4]))
                    .sub(&AffExpr::var(xs[5])),
            );
            // X⁴ = U_ki·U_ij
            push_group(p, &tap.u_m.expr(k, i), u_off_box(k, i), &tap.u_m.expr(i, j), u_off_box(i, j), xs[0])?;
            // X⁵ = W_ij·W_ki
            push_group(p, &tap.w_m.expr(i, j), w_box(i, j), &tap.w_m.expr(k, i), w_box(k, i), xs[1])?;
            // X⁶ = U_ii·U_kj
            push_group(p, &tap.u_m.expr(i, i), u_diag_box(i), &tap.u_m.expr(k, j), u_off_box(k, j), xs[2])?;
            // X⁷ = U_ki·W_ij
            push_group(p, &tap.u_m.expr(k, i), u_off_box(k, i), &tap.w_m.expr(i, j), w_box(i, j), xs[3])?;
            // X⁸ = U_ij·W_ki
            push_group(p, &tap.u_m.expr(i, j), u_off_box(i, j), &tap.w_m.expr(k, i), w_box(k, i), xs[4])?;
            // X⁹ = U_ii·W_kj
            push_group(p, &tap.u_m.expr(i, i), u_diag_box(i), &tap.w_m.expr(k, j), w_box(k, j), xs[5])?;
            groups += 6;
            offdiag.push((i, xs));
        }
    }

    vm.minors[svr_idx] = Some(MinorVars { principal, offdiag });
    vm.stats.mccormick_minor += groups;
    vm.num_vars = p.num_vars;
    Ok(p.eq.len() + p.ineq.len() - rows_before)
}

/// Installs the cost row: real slack import, optionally plus total real DG
/// injection.
pub fn objective(
    p: &mut ConicProblem,
    vm: &VarMap,
    _network: &Network,
    kind: ObjectiveKind,
) -> Result<(), BuildError> {
    let mut obj = AffExpr::zero();
    for k in 0..vm.s[0].dim {
        obj.push(vm.s[0].re + k, 1.0);
    }
    if kind == ObjectiveKind::ImportPlusDg {
        let mut any = false;
        for lay in vm.dg.iter().flatten() {
            any = true;
            for k in 0..lay.dim {
                obj.push(lay.re + k, 1.0);
            }
        }
        if !any {
            return Err(BuildError::MissingDg);
        }
    }
    p.objective = obj.normalized();
    Ok(())
}

// ---------------------------------------------------------------------------
// Minor products and residuals (rank-1 characterization)
// ---------------------------------------------------------------------------

/// The nine bilinear products of the 2×2-minor conditions for a 3×3 split
/// pair `(U, W)`, per phase `i` (with `j` the right and `k` the left shift).
pub fn minor_products(u: &DMatrix<f64>, w: &DMatrix<f64>, i: usize) -> [f64; 9] {
    let j = (i + 1) % 3;
    let k = (i + 2) % 3;
    [
        u[(i, i)] * u[(j, j)],
        u[(i, j)] * u[(i, j)],
        w[(i, j)] * w[(i, j)],
        u[(k, i)] * u[(i, j)],
        w[(i, j)] * w[(k, i)],
        u[(i, i)] * u[(k, j)],
        u[(k, i)] * w[(i, j)],
        u[(i, j)] * w[(k, i)],
        u[(i, i)] * w[(k, j)],
    ]
}

/// The nine minor identities (three per phase) that vanish exactly on rank-1
/// Hermitian `U + jW`.
pub fn minor_residuals(u: &DMatrix<f64>, w: &DMatrix<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        let x = minor_products(u, w, i);
        out[3 * i] = x[0] - x[1] - x[2];
        out[3 * i + 1] = x[3] - x[4] - x[5];
        out[3 * i + 2] = x[6] + x[7] - x[8];
    }
    out
}

// ---------------------------------------------------------------------------
// Residual evaluation and exact lift
// ---------------------------------------------------------------------------

/// Max violations of the lifted equations at a candidate point, plus the
/// rank-1 proximity `λ₂/λ₁` of every flow block.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualReport {
    /// Lifted series-drop equation on line edges.
    pub ohm: f64,
    /// SVR lifted gain equation `V_n = A V_m Ā` (from the ratio variables).
    pub svr_voltage: f64,
    /// SVR power link `diag(A⁻¹ S A) = diag(S')`.
    pub svr_power: f64,
    /// Shunt/constant-power split.
    pub shunt_split: f64,
    /// Per-phase power balance.
    pub power_balance: f64,
    /// Slack lift.
    pub slack: f64,
    /// Voltage-magnitude box violation.
    pub voltage_box: f64,
    /// Most negative eigenvalue over all flow PSD blocks.
    pub psd: f64,
    /// λ₂/λ₁ per edge (lines first, then SVR edges).
    pub eig_ratio: Vec<f64>,
    /// Average λ₂/λ₁ over non-SVR edges.
    pub eig_ratio_avg_lines: f64,
    pub max_violation: f64,
}

fn herm_value_sub(lay: &HermLayout, sel: &[usize], x: &[f64]) -> DMatrix<Complex64> {
    let full = lay.value(x);
    DMatrix::from_fn(sel.len(), sel.len(), |i, j| full[(sel[i], sel[j])])
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Evaluates the lifted-equation residuals of a candidate point supplying
/// all symbols of the map.
pub fn rbopf_residuals(network: &Network, vm: &VarMap, x: &[f64]) -> ResidualReport {
    let mut rep = ResidualReport {
        ohm: 0.0,
        svr_voltage: 0.0,
        svr_power: 0.0,
        shunt_split: 0.0,
        power_balance: 0.0,
        slack: 0.0,
        voltage_box: 0.0,
        psd: 0.0,
        eig_ratio: Vec::new(),
        eig_ratio_avg_lines: 0.0,
        max_violation: 0.0,
    };

    // Slack lift.
    let v0 = &network.slack_voltage;
    let v0_lift = DMatrix::from_fn(v0.len(), v0.len(), |i, j| v0[i] * v0[j].conj());
    rep.slack = max_abs(&(vm.v[0].value(x) - v0_lift));

    // Per-bus rows.
    for (m, bus) in network.buses.iter().enumerate() {
        let v_m = vm.v[m].value(x);
        let s_m = vm.s[m].value(x);
        let frak = vm.frak_s[m].value(x);
        let n = bus.phases.len();
        for k in 0..n {
            let d = v_m[(k, k)].re;
            rep.voltage_box = rep
                .voltage_box
                .max((network.v_min * network.v_min - d).max(0.0))
                .max((d - network.v_max * network.v_max).max(0.0));
        }
        // s = 𝔰 − diag(V Ȳ)
        let v_yh = &v_m * bus.shunt_y.adjoint();
        for k in 0..n {
            let r = s_m[k] - frak[k] + v_yh[(k, k)];
            rep.shunt_split = rep.shunt_split.max(r.norm());
        }
        // Power balance.
        let mut acc = s_m.clone();
        for (li, l) in network.lines.iter().enumerate() {
            let s_e = vm.line_s[li].value(x);
            if l.from == m {
                let sel = phase_selection(bus.phases, l.phases);
                for (k, &slot) in sel.iter().enumerate() {
                    acc[slot] -= s_e[(k, k)];
                }
            }
            if l.to == m {
                let i_e = vm.line_i[li].value(x);
                let zi = &l.z * &i_e;
                for k in 0..l.phases.len() {
                    acc[k] += s_e[(k, k)] - zi[(k, k)];
                }
            }
        }
        for (si, s) in network.svrs.iter().enumerate() {
            if s.from == m {
                let s_e = vm.svr_s[si].value(x);
                let sel = phase_selection(bus.phases, s.phases);
                for (k, &slot) in sel.iter().enumerate() {
                    acc[slot] -= s_e[(k, k)];
                }
            }
            if s.to == m {
                let sp = vm.svr_sp[si].value(x);
                for k in 0..s.phases.len() {
                    acc[k] += sp[(k, k)];
                }
            }
        }
        rep.power_balance = rep
            .power_balance
            .max(acc.iter().map(|c| c.norm()).fold(0.0, f64::max));
    }

    // Edge blocks.
    let mut line_ratio_sum = 0.0;
    let eval_block = |v_n: &DMatrix<Complex64>,
                      s_e: &DMatrix<Complex64>,
                      i_e: &DMatrix<Complex64>|
     -> (f64, f64) {
        let q = v_n.nrows();
        let mut blk = DMatrix::zeros(2 * q, 2 * q);
        for i in 0..q {
            for j in 0..q {
                blk[(i, j)] = v_n[(i, j)];
                blk[(i, q + j)] = s_e[(i, j)];
                blk[(q + i, j)] = s_e[(j, i)].conj();
                blk[(q + i, q + j)] = i_e[(i, j)];
            }
        }
        let eig = blk.symmetric_eigenvalues();
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let neg = (-vals[vals.len() - 1]).max(0.0);
        let ratio = if vals[0] > 1e-12 {
            (vals[1] / vals[0]).max(0.0)
        } else {
            0.0
        };
        (neg, ratio)
    };
    for (li, l) in network.lines.iter().enumerate() {
        let sel_n = phase_selection(network.buses[l.from].phases, l.phases);
        let v_n = herm_value_sub(&vm.v[l.from], &sel_n, x);
        let v_m = vm.v[l.to].value(x);
        let i_e = vm.line_i[li].value(x);
        let s_e = vm.line_s[li].value(x);
        let resid =
            &v_m - &v_n - &l.z * &i_e * l.z.adjoint() + &s_e * l.z.adjoint() + &l.z * s_e.adjoint();
        rep.ohm = rep.ohm.max(max_abs(&resid));
        let (neg, ratio) = eval_block(&v_n, &s_e, &i_e);
        rep.psd = rep.psd.max(neg);
        rep.eig_ratio.push(ratio);
        line_ratio_sum += ratio;
    }
    for (si, svr) in network.svrs.iter().enumerate() {
        let sel_n = phase_selection(network.buses[svr.from].phases, svr.phases);
        let v_n = herm_value_sub(&vm.v[svr.from], &sel_n, x);
        let v_m = vm.v[svr.to].value(x);
        let i_e = vm.svr_i[si].value(x);
        let s_e = vm.svr_s[si].value(x);
        let sp_e = vm.svr_sp[si].value(x);
        if let Some(tap) = &vm.svr_tap[si] {
            let r: Vec<f64> = tap.r.iter().map(|&ix| x[ix]).collect();
            let a = dmatrix_complex(&GainTriple::new(svr.spec.svr_type, svr.phases).gain(&r));
            let resid = &v_n - &a * &v_m * a.adjoint();
            rep.svr_voltage = rep.svr_voltage.max(max_abs(&resid));
            if let Some(a_inv) = a.clone().try_inverse() {
                let m = &a_inv * &s_e * &a;
                for k in 0..svr.phases.len() {
                    rep.svr_power = rep.svr_power.max((m[(k, k)] - sp_e[(k, k)]).norm());
                }
            }
        } else {
            // Baseline modes carry no ratio variables; check total power only.
            let tr_s: Complex64 = (0..svr.phases.len()).map(|k| s_e[(k, k)]).sum();
            let tr_sp: Complex64 = (0..svr.phases.len()).map(|k| sp_e[(k, k)]).sum();
            rep.svr_power = rep.svr_power.max((tr_s - tr_sp).norm());
        }
        let (neg, ratio) = eval_block(&v_n, &s_e, &i_e);
        rep.psd = rep.psd.max(neg);
        rep.eig_ratio.push(ratio);
    }
    rep.eig_ratio_avg_lines = if network.lines.is_empty() {
        0.0
    } else {
        line_ratio_sum / network.lines.len() as f64
    };
    rep.max_violation = rep
        .ohm
        .max(rep.svr_voltage)
        .max(rep.svr_power)
        .max(rep.shunt_split)
        .max(rep.power_balance)
        .max(rep.slack)
        .max(rep.voltage_box)
        .max(rep.psd);
    rep
}

/// Lifts a converged load-flow solution into the decision vector: the exact
/// outer products for `V`, `I`, `S`, `S'`, the injections, the ratio
/// products, the voltage splits with their images, and the minor products.
/// The result satisfies every lifted equation to rounding error.
pub fn lift_point(
    network: &Network,
    vm: &VarMap,
    lf: &LoadFlowSolution,
    injections: &[DVector<Complex64>],
    ratios: &[Vec<f64>],
) -> Vec<f64> {
    let mut x = vec![0.0; vm.num_vars];

    for (m, bus) in network.buses.iter().enumerate() {
        let v = &lf.voltages[m];
        let lift = DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj());
        vm.v[m].set(&mut x, &lift);
        // s = 𝔰 − diag(V Ȳ); the slack's 𝔰 takes the import.
        let v_yh = &lift * bus.shunt_y.adjoint();
        let shunt = DVector::from_fn(v.len(), |k, _| v_yh[(k, k)]);
        if m == 0 {
            // Net injection from outgoing flows.
            let mut s0: DVector<Complex64> = DVector::zeros(v.len());
            {
                let mut add = |phases: PhaseMask, cur: &DVector<Complex64>| {
                    for (k, ph) in phases.iter().enumerate() {
                        let slot = bus.phases.index_of(ph).unwrap();
                        s0[slot] += v[slot] * cur[k].conj();
                    }
                };
                for (li, l) in network.lines.iter().enumerate() {
                    if l.from == 0 {
                        add(l.phases, &lf.line_currents[li]);
                    }
                }
                for (si, s) in network.svrs.iter().enumerate() {
                    if s.from == 0 {
                        add(s.phases, &lf.svr_primary_currents[si]);
                    }
                }
            }
            vm.s[0].set(&mut x, &s0);
            vm.frak_s[0].set(&mut x, &(s0 + shunt));
        } else {
            let s_m = injections[m].clone() - &shunt;
            vm.s[m].set(&mut x, &s_m);
            vm.frak_s[m].set(&mut x, &injections[m].clone());
            if let Some(dgl) = &vm.dg[m] {
                let g = injections[m].clone() + &bus.load_s;
                dgl.set(&mut x, &g);
            }
        }
    }

    for (li, l) in network.lines.iter().enumerate() {
        let sel = phase_selection(network.buses[l.from].phases, l.phases);
        let v_n = &lf.voltages[l.from];
        let i = &lf.line_currents[li];
        let s = DMatrix::from_fn(sel.len(), sel.len(), |a, b| v_n[sel[a]] * i[b].conj());
        let i_lift = DMatrix::from_fn(sel.len(), sel.len(), |a, b| i[a] * i[b].conj());
        vm.line_s[li].set(&mut x, &s);
        vm.line_i[li].set(&mut x, &i_lift);
    }

    for (si, svr) in network.svrs.iter().enumerate() {
        let sel = phase_selection(network.buses[svr.from].phases, svr.phases);
        let v_n = &lf.voltages[svr.from];
        let v_m = &lf.voltages[svr.to];
        let ip = &lf.svr_primary_currents[si];
        let is = &lf.svr_secondary_currents[si];
        let n = sel.len();
        vm.svr_s[si].set(
            &mut x,
            &DMatrix::from_fn(n, n, |a, b| v_n[sel[a]] * ip[b].conj()),
        );
        vm.svr_i[si].set(&mut x, &DMatrix::from_fn(n, n, |a, b| ip[a] * ip[b].conj()));
        vm.svr_sp[si].set(&mut x, &DMatrix::from_fn(n, n, |a, b| v_m[a] * is[b].conj()));

        if let Some(tap) = &vm.svr_tap[si] {
            for (k, &ix) in tap.r.iter().enumerate() {
                x[ix] = ratios[si][k];
            }
            let labels = tap.r.len();
            let big_r = DMatrix::from_fn(labels, labels, |a, b| ratios[si][a] * ratios[si][b]);
            tap.big_r.set(&mut x, &big_r);

            let vn_sub = DVector::from_fn(n, |k, _| v_n[sel[k]]);
            let (u_n, w_n) = bounds::lift_voltage(&vn_sub);
            let (u_m, w_m) = bounds::lift_voltage(v_m);
            tap.u_n.set(&mut x, &u_n);
            tap.w_n.set(&mut x, &w_n);
            tap.u_m.set(&mut x, &u_m);
            tap.w_m.set(&mut x, &w_m);

            let triple = GainTriple::new(svr.spec.svr_type, svr.phases);
            let dt = triple.d.transpose();
            let ft = triple.f.transpose();
            let tilde_u = &triple.d * &u_m * &dt;
            let tilde_w = &triple.d * &w_m * &dt;
            tap.tilde_u.set(&mut x, &tilde_u);
            tap.tilde_w.set(&mut x, &tilde_w);
            let diag_r =
                DMatrix::from_fn(n, n, |a, b| if a == b { ratios[si][a] } else { 0.0 });
            tap.frak_tilde_u.set(&mut x, &(&diag_r * &tilde_u * &diag_r));
            tap.frak_tilde_psi.set(&mut x, &(&diag_r * &tilde_w * &diag_r));
            if let Some(hat) = &tap.hat {
                let hat_u = &triple.d * &u_m * &ft;
                let hat_w = &triple.d * &w_m * &ft;
                hat.hat_u.set(&mut x, &hat_u);
                hat.hat_w.set(&mut x, &hat_w);
                hat.frak_hat_u.set(&mut x, &(&diag_r * &hat_u));
                hat.frak_hat_psi.set(&mut x, &(&diag_r * &hat_w));
            }

            if let Some(minors) = &vm.minors[si] {
                for ((i, j), xs) in &minors.principal {
                    x[xs[0]] = u_m[(*i, *i)] * u_m[(*j, *j)];
                    x[xs[1]] = u_m[(*i, *j)] * u_m[(*i, *j)];
                    x[xs[2]] = w_m[(*i, *j)] * w_m[(*i, *j)];
                }
                for (i, xs) in &minors.offdiag {
                    let prods = minor_products(&u_m, &w_m, *i);
                    for (slot, &ix) in xs.iter().enumerate() {
                        x[ix] = prods[slot + 3];
                    }
                }
            }
        }
    }

    x
}
