//! Extraction of physical taps and voltages from a relaxation solution, and
//! certification of the resulting operating point with a load flow.
//!
//! Ratios come from the lifted products: `r̆ᵠ = √Rᵠᵠ` for wye and
//! closed-delta SVRs; open-delta ratios solve the small fit
//! `v̂_n = A(r)·v̂_m·e^{jθ}` over the two free ratios and the gauge angle,
//! where `v̂` are rank-1 spectral approximations of the voltage blocks.
//! Branch variables are retrieved by walking the tree from the slack,
//! computing each edge current from the flow block and each downstream
//! voltage from the series drop or the inverse gain; on exactly-rank-1
//! inputs the retrieved point reproduces the originating power-flow solution.
//! Certification quantizes the ratios to integer taps, reruns the sweep, and
//! reports the optimality gap against the relaxation objective.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::builder::VarMap;
use crate::conic::ConicSolution;
use crate::loadflow::{self, LoadFlowError, LoadFlowSolution, Metrics, SweepOptions};
use crate::netmodel::{radial_order, EdgeRef, NetError, Network};
use crate::svrgain::{gain_matrix, ratio_to_tap, tap_to_ratio, GainError, GainTriple, SvrType};

#[derive(Debug, thiserror::Error)]
pub enum RecoveryError {
    #[error("lifted ratio product is negative: {0}")]
    NegativeR(f64),
    #[error("voltage block is degenerate (leading eigenvalue {0:.3e})")]
    DegenerateV(f64),
    #[error("retrieval requires a radial network")]
    NonRadial,
    #[error("flow block has (near-)zero trace at bus {0}")]
    ZeroTrace(u64),
    #[error("relaxation solution is not usable (status {0:?}, accuracy {1:.3e})")]
    NotOptimal(crate::conic::SolveStatusKind, f64),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    LoadFlow(#[from] LoadFlowError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Numeric values of the lifted blocks of a solution.
#[derive(Debug, Clone)]
pub struct LiftedBlocks {
    pub v: Vec<DMatrix<Complex64>>,
    pub line_i: Vec<DMatrix<Complex64>>,
    pub line_s: Vec<DMatrix<Complex64>>,
    pub svr_i: Vec<DMatrix<Complex64>>,
    pub svr_s: Vec<DMatrix<Complex64>>,
    pub svr_sp: Vec<DMatrix<Complex64>>,
}

impl LiftedBlocks {
    pub fn from_solution(vm: &VarMap, x: &[f64]) -> LiftedBlocks {
        LiftedBlocks {
            v: vm.v.iter().map(|l| l.value(x)).collect(),
            line_i: vm.line_i.iter().map(|l| l.value(x)).collect(),
            line_s: vm.line_s.iter().map(|l| l.value(x)).collect(),
            svr_i: vm.svr_i.iter().map(|l| l.value(x)).collect(),
            svr_s: vm.svr_s.iter().map(|l| l.value(x)).collect(),
            svr_sp: vm.svr_sp.iter().map(|l| l.value(x)).collect(),
        }
    }
}

/// Leading spectral component of a Hermitian PSD block: `v = √λ₁·u₁`,
/// rotated so the first entry carries `reference_angle`. Also returns
/// `λ₂/λ₁` as a rank-1 quality figure (0 for 1×1 blocks).
pub fn rank1_vector(
    v_block: &DMatrix<Complex64>,
    reference_angle: f64,
) -> Result<(DVector<Complex64>, f64), RecoveryError> {
    let eig = v_block.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let l1 = eig.eigenvalues[order[0]];
    if l1 <= 1e-12 {
        return Err(RecoveryError::DegenerateV(l1));
    }
    let ratio = if order.len() > 1 {
        (eig.eigenvalues[order[1]] / l1).max(0.0)
    } else {
        0.0
    };
    let mut v: DVector<Complex64> = eig.eigenvectors.column(order[0]).into();
    v *= Complex64::new(l1.sqrt(), 0.0);
    let rot = Complex64::from_polar(1.0, reference_angle - v[0].arg());
    Ok((v * rot, ratio))
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Recovers per-SVR continuous ratio vectors from a solved relaxation.
pub fn recover_ratios(
    network: &Network,
    vm: &VarMap,
    sol: &ConicSolution,
) -> Result<Vec<Vec<f64>>, RecoveryError> {
    if !sol.near_optimal() {
        return Err(RecoveryError::NotOptimal(sol.status, sol.accuracy));
    }
    let x = &sol.x;
    let mut out = Vec::with_capacity(network.svrs.len());
    for (si, svr) in network.svrs.iter().enumerate() {
        let spec = &svr.spec;
        let ratios = match &vm.svr_tap[si] {
            Some(_) if spec.svr_type == SvrType::OpenDelta => {
                recover_open_delta(network, vm, si, x)?
            }
            Some(tap) => {
                let big_r = tap.big_r.value(x);
                let mut r = Vec::with_capacity(tap.r.len());
                for k in 0..tap.r.len() {
                    let rkk = big_r[(k, k)];
                    if rkk < -1e-8 {
                        return Err(RecoveryError::NegativeR(rkk));
                    }
                    r.push(clamp(rkk.max(0.0).sqrt(), spec.r_min[k], spec.r_max[k]));
                }
                r
            }
            None => {
                // Baseline modes carry no ratio variables; read the per-phase
                // voltage-magnitude ratio off the lifted diagonals.
                let v_n = vm.v[svr.from].value(x);
                let v_m = vm.v[svr.to].value(x);
                let sel: Vec<usize> = svr
                    .phases
                    .iter()
                    .map(|p| network.buses[svr.from].phases.index_of(p).unwrap())
                    .collect();
                (0..svr.phases.len())
                    .map(|k| {
                        let num = v_n[(sel[k], sel[k])].re.max(0.0);
                        let den = v_m[(k, k)].re.max(1e-12);
                        clamp((num / den).sqrt(), spec.r_min[k], spec.r_max[k])
                    })
                    .collect()
            }
        };
        out.push(ratios);
    }
    Ok(out)
}

/// Open-delta ratio fit: dense 1° sweep of the gauge angle with closed-form
/// per-angle ratios, then local refinement around the best angle.
fn recover_open_delta(
    network: &Network,
    vm: &VarMap,
    si: usize,
    x: &[f64],
) -> Result<Vec<f64>, RecoveryError> {
    let svr = &network.svrs[si];
    let spec = &svr.spec;
    let slack = &network.slack_voltage;
    let slack_phases = network.buses[0].phases;
    let first_angle = |bus: usize| -> f64 {
        let first = network.buses[bus].phases.iter().next().unwrap();
        slack_phases
            .index_of(first)
            .map(|k| slack[k].arg())
            .unwrap_or(0.0)
    };

    let sel: Vec<usize> = svr
        .phases
        .iter()
        .map(|p| network.buses[svr.from].phases.index_of(p).unwrap())
        .collect();
    let v_n_full = vm.v[svr.from].value(x);
    let v_n_blk = DMatrix::from_fn(3, 3, |i, j| v_n_full[(sel[i], sel[j])]);
    let (v_n, _) = rank1_vector(&v_n_blk, first_angle(svr.from))?;
    let (v_m, _) = rank1_vector(&vm.v[svr.to].value(x), first_angle(svr.to))?;

    let triple = GainTriple::new(SvrType::OpenDelta, svr.phases);
    let dc = triple.d.map(|v| Complex64::new(v, 0.0));
    let fc = triple.f.map(|v| Complex64::new(v, 0.0));

    // Given the gauge angle, each free ratio minimizes an independent scalar
    // least squares; the fixed middle row contributes a pure angle residual.
    let eval = |theta: f64| -> (f64, [f64; 3]) {
        let w = &v_m * Complex64::from_polar(1.0, theta);
        let dw = &dc * &w;
        let fw = &fc * &w;
        let mut r = [1.0f64; 3];
        let mut res = 0.0;
        for k in [0usize, 2] {
            let denom = dw[k].norm_sqr();
            if denom > 1e-14 {
                let raw = ((v_n[k] - fw[k]) * dw[k].conj()).re / denom;
                r[k] = clamp(raw, spec.r_min[k], spec.r_max[k]);
            }
            res += (v_n[k] - dw[k] * Complex64::new(r[k], 0.0) - fw[k]).norm_sqr();
        }
        res += (v_n[1] - w[1]).norm_sqr();
        (res, r)
    };

    let mut best = (f64::INFINITY, 0.0f64, [1.0f64; 3]);
    let mut theta = -std::f64::consts::PI;
    while theta < std::f64::consts::PI {
        let (res, r) = eval(theta);
        if res < best.0 {
            best = (res, theta, r);
        }
        theta += 1.0f64.to_radians();
    }

    // Local refinement by coordinate descent: with the ratios held fixed the
    // optimal gauge angle also has a closed form, θ = arg Σ v_n·conj(A(r)v_m).
    let (mut theta, mut r) = (best.1, best.2);
    for _ in 0..60 {
        let a = GainTriple::new(SvrType::OpenDelta, svr.phases).gain(&r);
        let av = a.map(|v| Complex64::new(v, 0.0)) * &v_m;
        let corr: Complex64 = (0..3).map(|k| v_n[k] * av[k].conj()).sum();
        let new_theta = corr.arg();
        let (res, new_r) = eval(new_theta);
        let moved = (new_theta - theta).abs() + (new_r[0] - r[0]).abs() + (new_r[2] - r[2]).abs();
        theta = new_theta;
        r = new_r;
        if res < best.0 {
            best = (res, theta, r);
        }
        if moved < 1e-14 {
            break;
        }
    }
    Ok(best.2.to_vec())
}

/// Point retrieved from lifted blocks by the tree walk.
#[derive(Debug, Clone)]
pub struct RetrievedPoint {
    pub solution: LoadFlowSolution,
    /// Smallest flow-block trace seen during the walk (diagnostic).
    pub min_trace: f64,
}

/// Walks the tree from the slack: `i_nm = S̄_nm·v_n / tr(V_n)` on every edge,
/// then `v_m = A⁻¹·v_n` and `i'_nm = diag(v_m*)⁻¹·diag(S̄'_nm)` across SVR
/// edges or `v_m = v_n − Z·i_nm` along lines. On rank-1 inputs the result is
/// feasible for the original nonconvex problem; rank deficiencies surface as
/// load-flow residuals of the returned point rather than being repaired.
pub fn retrieve_branch_variables(
    network: &Network,
    blocks: &LiftedBlocks,
    ratios: &[Vec<f64>],
) -> Result<RetrievedPoint, RecoveryError> {
    let order = match radial_order(network, true) {
        Ok(o) => o,
        Err(NetError::Cycle) => return Err(RecoveryError::NonRadial),
        Err(e) => return Err(e.into()),
    };

    let n = network.n_buses();
    let mut v: Vec<DVector<Complex64>> = vec![DVector::zeros(0); n];
    v[0] = network.slack_voltage.clone();
    let mut line_i = vec![DVector::zeros(0); network.lines.len()];
    let mut svr_ip = vec![DVector::zeros(0); network.svrs.len()];
    let mut svr_is = vec![DVector::zeros(0); network.svrs.len()];
    let mut min_trace = f64::INFINITY;

    for &(e, up, _down) in &order.edges {
        let edge_phases = network.edge_phases(e);
        let sel: Vec<usize> = edge_phases
            .iter()
            .map(|p| network.buses[up].phases.index_of(p).unwrap())
            .collect();
        let v_up = DVector::from_fn(sel.len(), |k, _| v[up][sel[k]]);
        let trace: f64 = sel.iter().map(|&k| blocks.v[up][(k, k)].re).sum();
        min_trace = min_trace.min(trace);
        if trace < 1e-12 {
            return Err(RecoveryError::ZeroTrace(network.buses[up].ext_id));
        }
        match e {
            EdgeRef::Line(li) => {
                let i = blocks.line_s[li].adjoint() * &v_up / Complex64::new(trace, 0.0);
                v[network.lines[li].to] = &v_up - &network.lines[li].z * &i;
                line_i[li] = i;
            }
            EdgeRef::Svr(si) => {
                let svr = &network.svrs[si];
                let i = blocks.svr_s[si].adjoint() * &v_up / Complex64::new(trace, 0.0);
                let a = gain_matrix(&svr.spec, svr.phases, &ratios[si])?;
                let a_inv = a
                    .try_inverse()
                    .ok_or(GainError::SingularGain)?
                    .map(|x| Complex64::new(x, 0.0));
                let v_m = &a_inv * &v_up;
                let ip = DVector::from_fn(v_m.len(), |k, _| {
                    blocks.svr_sp[si][(k, k)].conj() / v_m[k].conj()
                });
                v[svr.to] = v_m;
                svr_ip[si] = i;
                svr_is[si] = ip;
            }
        }
    }

    Ok(RetrievedPoint {
        solution: LoadFlowSolution {
            voltages: v,
            line_currents: line_i,
            svr_primary_currents: svr_ip,
            svr_secondary_currents: svr_is,
            iterations: 0,
            residual: 0.0,
        },
        min_trace,
    })
}

/// A certified operating point: quantized taps, load-flow voltages, metrics,
/// and the gap to the relaxation bound.
#[derive(Debug, Clone)]
pub struct RecoveredOperatingPoint {
    /// Continuous recovered ratios.
    pub ratios_raw: Vec<Vec<f64>>,
    /// Tap-quantized ratios actually used for certification.
    pub ratios: Vec<Vec<f64>>,
    pub taps: Vec<Vec<i32>>,
    /// Feasible cost: load-flow import plus any fixed injection cost.
    pub objective_feasible: f64,
    pub gap_percent: Option<f64>,
    pub metrics: Metrics,
    /// Max violation of the voltage-magnitude limits at the load-flow point.
    pub voltage_violation: f64,
    pub solution: LoadFlowSolution,
}

/// Quantizes ratios to taps, reruns the load flow, and assembles metrics.
/// `extra_cost` covers objective terms fixed outside the load flow (total
/// real DG injection); the gap convention reports 0 when the relaxation
/// objective is 0.
pub fn evaluate(
    network: &Network,
    ratios_raw: &[Vec<f64>],
    injections: &[DVector<Complex64>],
    relax_objective: Option<f64>,
    extra_cost: f64,
    opts: &SweepOptions,
) -> Result<RecoveredOperatingPoint, RecoveryError> {
    let mut taps = Vec::with_capacity(network.svrs.len());
    let mut quantized = Vec::with_capacity(network.svrs.len());
    for (svr, r) in network.svrs.iter().zip(ratios_raw) {
        let fixed = svr.spec.fixed_labels();
        let mut t = Vec::with_capacity(r.len());
        let mut q = Vec::with_capacity(r.len());
        for (k, &rk) in r.iter().enumerate() {
            if fixed[k] {
                t.push(0);
                q.push(rk);
            } else {
                let tap = ratio_to_tap(rk, svr.spec.variant);
                t.push(tap);
                q.push(tap_to_ratio(tap, svr.spec.variant)?);
            }
        }
        taps.push(t);
        quantized.push(q);
    }

    let solution = loadflow::sweep(network, &quantized, injections, opts)?;
    let mut metrics = loadflow::metrics(network, &solution, None);
    let feasible = metrics.power_import + extra_cost;
    let gap = relax_objective.map(|c| {
        if c.abs() < 1e-12 {
            0.0
        } else {
            100.0 * (feasible - c) / c
        }
    });
    metrics.gap_percent = gap;

    let mut violation: f64 = 0.0;
    for v in &solution.voltages {
        for e in v.iter() {
            let m = e.norm();
            violation = violation.max(network.v_min - m).max(m - network.v_max);
        }
    }

    Ok(RecoveredOperatingPoint {
        ratios_raw: ratios_raw.to_vec(),
        ratios: quantized,
        taps,
        objective_feasible: feasible,
        gap_percent: gap,
        metrics,
        voltage_violation: violation.max(0.0),
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build_mbopf, lift_point, BuildOptions};
    use crate::loadflow::{kcl_residual, sweep};
    use crate::netmodel::parse_feeder;
    use crate::svrgain::SvrVariant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn balanced(mag: f64) -> DVector<Complex64> {
        DVector::from_vec(vec![
            Complex64::from_polar(mag, 0.0),
            Complex64::from_polar(mag, (-120.0f64).to_radians()),
            Complex64::from_polar(mag, (120.0f64).to_radians()),
        ])
    }

    fn four_bus(svr_type: &str) -> crate::netmodel::Network {
        parse_feeder(&format!(
            r#"{{
            "buses": [
                {{"id": 0, "phases": "abc"}},
                {{"id": 1, "phases": "abc", "load_s": [[0.05, 0.02], [0.06, 0.025], [0.04, 0.015]]}},
                {{"id": 2, "phases": "abc"}},
                {{"id": 3, "phases": "abc", "load_s": [[0.25, 0.12], [0.3, 0.1], [0.22, 0.09]]}}
            ],
            "lines": [
                {{"from": 0, "to": 1, "z": [
                    [[0.02, 0.05], [0.005, 0.015], [0.005, 0.015]],
                    [[0.005, 0.015], [0.021, 0.052], [0.005, 0.015]],
                    [[0.005, 0.015], [0.005, 0.015], [0.0205, 0.051]]
                ]}},
                {{"from": 2, "to": 3, "z": [
                    [[0.03, 0.07], [0.008, 0.02], [0.008, 0.02]],
                    [[0.008, 0.02], [0.031, 0.072], [0.008, 0.02]],
                    [[0.008, 0.02], [0.008, 0.02], [0.0305, 0.071]]
                ]}}
            ],
            "svrs": [{{"from": 1, "to": 2, "type": "{svr_type}"}}],
            "slack": {{"bus": 0, "voltage": [[1.0, 0.0], [-0.5, -0.8660254037844386], [-0.5, 0.8660254037844386]]}},
            "v_min": 0.9, "v_max": 1.1
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn rank1_vector_recovers_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let v = DVector::from_fn(3, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let block = &v * v.adjoint();
            let (rec, ratio) = rank1_vector(&block, v[0].arg()).unwrap();
            assert!(ratio < 1e-12);
            assert!((rec - &v).norm() < 1e-9);
        }
    }

    #[test]
    fn rank1_vector_flags_identity_as_low_quality() {
        let eye = DMatrix::from_diagonal(&DVector::from_element(3, Complex64::new(1.0, 0.0)));
        let (v, ratio) = rank1_vector(&eye, 0.0).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-12, "unit leading eigenvector");
        assert!((ratio - 1.0).abs() < 1e-12, "rank-3 must report ratio 1");
        let zero = DMatrix::zeros(3, 3);
        assert!(matches!(
            rank1_vector(&zero, 0.0),
            Err(RecoveryError::DegenerateV(_))
        ));
    }

    fn fake_sol(x: Vec<f64>) -> ConicSolution {
        ConicSolution {
            status: crate::conic::SolveStatusKind::Optimal,
            x,
            objective: 0.0,
            accuracy: 0.0,
            iterations: 0,
            solve_time: 0.0,
        }
    }

    #[test]
    fn sqrt_of_diagonal_products() {
        // R = I → unit ratios; R = 1.1025·I → 1.05 per phase.
        let net = four_bus("wye");
        let (_, vm) = build_mbopf(&net, &BuildOptions::default()).unwrap();
        let tap = vm.svr_tap[0].as_ref().unwrap();
        let mut x = vec![0.0; vm.num_vars];
        for k in 0..3 {
            x[tap.big_r.ix(k, k)] = 1.0;
        }
        let r = recover_ratios(&net, &vm, &fake_sol(x.clone())).unwrap();
        assert_eq!(r[0], vec![1.0, 1.0, 1.0]);
        for k in 0..3 {
            x[tap.big_r.ix(k, k)] = 1.1025;
        }
        let r = recover_ratios(&net, &vm, &fake_sol(x.clone())).unwrap();
        for v in &r[0] {
            assert!((v - 1.05).abs() < 1e-12);
        }
        x[tap.big_r.ix(0, 0)] = -1.0;
        assert!(matches!(
            recover_ratios(&net, &vm, &fake_sol(x)),
            Err(RecoveryError::NegativeR(_))
        ));
    }

    fn vm_set_herm(lay: &crate::builder::HermLayout, x: &mut [f64], m: &DMatrix<Complex64>) {
        for i in 0..lay.dim {
            x[lay.diag_ix(i)] = m[(i, i)].re;
            for j in i + 1..lay.dim {
                x[lay.re_ix(i, j)] = m[(i, j)].re;
                x[lay.im_ix(i, j)] = m[(i, j)].im;
            }
        }
    }

    #[test]
    fn open_delta_fit_recovers_known_ratios() {
        // Forward-construction oracle: build V_n = A(r*) V_m Ā(r*) from known
        // ratios and a balanced secondary, then recover.
        let net = four_bus("open_delta");
        let (_, vm) = build_mbopf(&net, &BuildOptions::default()).unwrap();
        let r_star = [1.03, 1.0, 0.97];
        let spec = &net.svrs[0].spec;
        let a = gain_matrix(spec, net.svrs[0].phases, &r_star)
            .unwrap()
            .map(|v| Complex64::new(v, 0.0));
        let v_m = balanced(1.02);
        let v_n = &a * &v_m;

        let mut x = vec![0.0; vm.num_vars];
        vm_set_herm(&vm.v[net.svrs[0].from], &mut x, &(&v_n * v_n.adjoint()));
        vm_set_herm(&vm.v[net.svrs[0].to], &mut x, &(&v_m * v_m.adjoint()));
        let r = recover_ratios(&net, &vm, &fake_sol(x)).unwrap();
        for (got, want) in r[0].iter().zip(r_star) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_load_lift_retrieves_slack_everywhere() {
        let mut net = four_bus("wye");
        for b in net.buses.iter_mut() {
            b.load_s.fill(Complex64::new(0.0, 0.0));
        }
        let (_, vm) = build_mbopf(&net, &BuildOptions::default()).unwrap();
        let inj = net.load_injections();
        let ratios = vec![vec![1.0, 1.0, 1.0]];
        let lf = sweep(&net, &ratios, &inj, &SweepOptions::default()).unwrap();
        let x = lift_point(&net, &vm, &lf, &inj, &ratios);
        let blocks = LiftedBlocks::from_solution(&vm, &x);
        let ret = retrieve_branch_variables(&net, &blocks, &ratios).unwrap();
        for v in &ret.solution.voltages {
            for (k, e) in v.iter().enumerate() {
                assert!((e - net.slack_voltage[k]).norm() < 1e-12);
            }
        }
        for i in &ret.solution.line_currents {
            assert!(i.iter().all(|c| c.norm() < 1e-12));
        }
    }

    fn roundtrip(svr_type: &str, ratios: Vec<Vec<f64>>) {
        let net = four_bus(svr_type);
        let (_, vm) = build_mbopf(&net, &BuildOptions::default()).unwrap();
        let inj = net.load_injections();
        let lf = sweep(
            &net,
            &ratios,
            &inj,
            &SweepOptions {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap();
        let x = lift_point(&net, &vm, &lf, &inj, &ratios);
        let blocks = LiftedBlocks::from_solution(&vm, &x);
        let ret = retrieve_branch_variables(&net, &blocks, &ratios).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in ret.solution.voltages.iter().zip(&lf.voltages) {
            worst = worst.max((a - b).norm());
        }
        for (a, b) in ret.solution.line_currents.iter().zip(&lf.line_currents) {
            worst = worst.max((a - b).norm());
        }
        for (a, b) in ret
            .solution
            .svr_primary_currents
            .iter()
            .zip(&lf.svr_primary_currents)
        {
            worst = worst.max((a - b).norm());
        }
        for (a, b) in ret
            .solution
            .svr_secondary_currents
            .iter()
            .zip(&lf.svr_secondary_currents)
        {
            worst = worst.max((a - b).norm());
        }
        assert!(worst < 1e-8, "{svr_type}: roundtrip discrepancy {worst}");

        // The current gain holds on the retrieved point.
        let a = gain_matrix(&net.svrs[0].spec, net.svrs[0].phases, &ratios[0]).unwrap();
        let at_inv = a
            .transpose()
            .try_inverse()
            .unwrap()
            .map(|v| Complex64::new(v, 0.0));
        let expect = &at_inv * &ret.solution.svr_secondary_currents[0];
        assert!((&ret.solution.svr_primary_currents[0] - expect).norm() < 1e-8);
    }

    #[test]
    fn retrieval_roundtrip_wye() {
        roundtrip("wye", vec![vec![1.04, 0.97, 1.02]]);
    }

    #[test]
    fn retrieval_roundtrip_closed_delta() {
        roundtrip("closed_delta", vec![vec![1.05, 1.0, 0.95]]);
    }

    #[test]
    fn retrieval_roundtrip_open_delta() {
        roundtrip("open_delta", vec![vec![1.05, 1.0, 0.95]]);
    }

    #[test]
    fn rank2_block_surfaces_as_kcl_residual() {
        // Replacing an upstream voltage block with the (rank-3) identity
        // breaks the current law of the retrieved point downstream; the
        // violation is reported, not repaired.
        let net = four_bus("wye");
        let (_, vm) = build_mbopf(&net, &BuildOptions::default()).unwrap();
        let inj = net.load_injections();
        let ratios = vec![vec![1.0, 1.0, 1.0]];
        let lf = sweep(&net, &ratios, &inj, &SweepOptions::default()).unwrap();
        let x = lift_point(&net, &vm, &lf, &inj, &ratios);
        let mut blocks = LiftedBlocks::from_solution(&vm, &x);
        // Bus 2 feeds the 2→3 line, so its block trace enters the retrieval.
        blocks.v[2] =
            DMatrix::from_diagonal(&DVector::from_element(3, Complex64::new(1.2, 0.0)));
        let ret = retrieve_branch_variables(&net, &blocks, &ratios).unwrap();
        let resid = kcl_residual(&net, &inj, &ret.solution);
        assert!(resid > 1e-3, "expected a visible violation, got {resid}");
    }

    #[test]
    fn diag_identity_for_complex_pairs() {
        // diag(u)·w* = diag(u w̄) entrywise, for random complex pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let u = DVector::from_fn(3, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let w = DVector::from_fn(3, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let outer = &u * w.adjoint();
            for k in 0..3 {
                let lhs = u[k] * w[k].conj();
                assert!((lhs - outer[(k, k)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_quantizes_and_reports_gap() {
        let net = four_bus("wye");
        let inj = net.load_injections();
        let raw = vec![vec![0.903, 0.9041, 0.9108]];
        let rec = evaluate(&net, &raw, &inj, Some(0.9), 0.0, &SweepOptions::default()).unwrap();
        assert_eq!(
            rec.taps[0],
            vec![
                ratio_to_tap(0.903, SvrVariant::B),
                ratio_to_tap(0.9041, SvrVariant::B),
                ratio_to_tap(0.9108, SvrVariant::B)
            ]
        );
        for (q, t) in rec.ratios[0].iter().zip(&rec.taps[0]) {
            assert!((q - tap_to_ratio(*t, SvrVariant::B).unwrap()).abs() < 1e-12);
        }
        assert!(rec.gap_percent.unwrap() > 0.0);
        assert!(rec.voltage_violation < 0.05);
    }

    #[test]
    fn evaluate_zero_cost_convention() {
        let mut net = four_bus("wye");
        for b in net.buses.iter_mut() {
            b.load_s.fill(Complex64::new(0.0, 0.0));
        }
        let inj = net.load_injections();
        let raw = vec![vec![1.0, 1.0, 1.0]];
        let rec = evaluate(&net, &raw, &inj, Some(0.0), 0.0, &SweepOptions::default()).unwrap();
        assert!(rec.objective_feasible.abs() < 1e-9);
        assert_eq!(rec.gap_percent, Some(0.0));
    }
}
