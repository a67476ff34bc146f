//! Forward-backward-sweep load flow on radial feeders with fixed SVR ratios,
//! plus the verification metrics computed from a converged solution.
//!
//! The sweep alternates a backward pass that aggregates currents from the
//! leaves toward the slack (injection currents from constant-power loads and
//! shunts, current gains across SVR edges) with a forward pass that updates
//! voltages from the slack outward (series-impedance drop on lines, inverse
//! voltage gain across SVR edges). Ideal SVRs have no admittance
//! representation, which is why a sweep is used here rather than an
//! impedance-matrix method.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::netmodel::{EdgeRef, NetError, Network, PhaseMask};
use crate::svrgain::{gain_matrix, GainError};

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Convergence tolerance on the max entrywise voltage change, per unit.
    pub tol: f64,
    pub max_iter: usize,
    /// Update relaxation factor; 1.0 = undamped.
    pub damping: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-9,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

/// Converged sweep state: per-bus voltages and per-edge currents. SVR edges
/// carry both the primary current `i` and the secondary current `i'`
/// (related by the current gain).
#[derive(Debug, Clone)]
pub struct LoadFlowSolution {
    pub voltages: Vec<DVector<Complex64>>,
    pub line_currents: Vec<DVector<Complex64>>,
    pub svr_primary_currents: Vec<DVector<Complex64>>,
    pub svr_secondary_currents: Vec<DVector<Complex64>>,
    pub iterations: usize,
    /// Max voltage change of the final sweep.
    pub residual: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadFlowError {
    #[error("no convergence after {0} iterations (residual {1:.3e})")]
    NonConvergence(usize, f64),
    #[error("voltage collapsed to zero at bus {0}")]
    ZeroVoltage(u64),
    #[error("load flow requires a radial network")]
    NotRadial,
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Selects the entries of a parent-bus vector that lie on an edge phase set.
fn restrict(
    v: &DVector<Complex64>,
    from: PhaseMask,
    to: PhaseMask,
) -> DVector<Complex64> {
    DVector::from_iterator(
        to.len(),
        to.iter().map(|p| v[from.index_of(p).expect("edge phase present at bus")]),
    )
}

/// Runs the sweep for fixed per-SVR ratio vectors and per-bus constant-power
/// injections (`injections[m]` is the net constant power over bus `m`'s
/// phases; the slack entry is ignored).
pub fn sweep(
    network: &Network,
    ratios: &[Vec<f64>],
    injections: &[DVector<Complex64>],
    opts: &SweepOptions,
) -> Result<LoadFlowSolution, LoadFlowError> {
    assert_eq!(ratios.len(), network.svrs.len(), "one ratio vector per SVR");
    assert_eq!(injections.len(), network.n_buses());
    let order = match crate::netmodel::radial_order(network, true) {
        Ok(o) => o,
        Err(NetError::Cycle) => return Err(LoadFlowError::NotRadial),
        Err(e) => return Err(e.into()),
    };

    // Gains and their inverses, cast to complex once.
    let mut a_inv = Vec::with_capacity(network.svrs.len());
    let mut a_t_inv = Vec::with_capacity(network.svrs.len());
    for (svr, r) in network.svrs.iter().zip(ratios) {
        let a = gain_matrix(&svr.spec, svr.phases, r)?;
        let inv = a.clone().try_inverse().ok_or(GainError::SingularGain)?;
        a_inv.push(inv.map(|x| Complex64::new(x, 0.0)));
        a_t_inv.push(
            a.transpose()
                .try_inverse()
                .ok_or(GainError::SingularGain)?
                .map(|x| Complex64::new(x, 0.0)),
        );
    }

    let n = network.n_buses();

    // Flat start: slack phasor propagated through SVR gains.
    let mut v: Vec<DVector<Complex64>> = vec![DVector::zeros(0); n];
    v[0] = network.slack_voltage.clone();
    for &(e, up, down) in &order.edges {
        let up_phases = network.buses[up].phases;
        let restricted = restrict(&v[up], up_phases, network.edge_phases(e));
        v[down] = match e {
            EdgeRef::Line(_) => restricted,
            EdgeRef::Svr(i) => &a_inv[i] * restricted,
        };
    }

    let mut line_i = vec![DVector::zeros(0); network.lines.len()];
    let mut svr_ip = vec![DVector::zeros(0); network.svrs.len()];
    let mut svr_is = vec![DVector::zeros(0); network.svrs.len()];
    let mut residual = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        // Injection currents from constant-power elements and shunts.
        let mut inj = Vec::with_capacity(n);
        for (m, bus) in network.buses.iter().enumerate() {
            let mut i_m = DVector::zeros(bus.phases.len());
            if m > 0 {
                for k in 0..bus.phases.len() {
                    let vk = v[m][k];
                    if vk.norm() < 1e-9 {
                        return Err(LoadFlowError::ZeroVoltage(bus.ext_id));
                    }
                    i_m[k] = (injections[m][k] / vk).conj();
                }
                i_m -= &bus.shunt_y * &v[m];
            }
            inj.push(i_m);
        }

        // Backward pass: aggregate currents from the leaves up. `arriving[m]`
        // is the current received at bus m through its supply edge.
        let mut arriving: Vec<DVector<Complex64>> =
            network.buses.iter().map(|b| DVector::zeros(b.phases.len())).collect();
        for (m, i_m) in inj.iter().enumerate() {
            if m > 0 {
                arriving[m] = -i_m.clone();
            }
        }
        for &(e, _up, down) in order.edges.iter().rev() {
            let down_phases = network.buses[down].phases;
            // Sending-end current of the supply edge as seen at `down`'s parent.
            let sending = match e {
                EdgeRef::Line(i) => {
                    line_i[i] = arriving[down].clone();
                    arriving[down].clone()
                }
                EdgeRef::Svr(i) => {
                    svr_is[i] = arriving[down].clone();
                    svr_ip[i] = &a_t_inv[i] * &arriving[down];
                    svr_ip[i].clone()
                }
            };
            let up = match e {
                EdgeRef::Line(i) => network.lines[i].from,
                EdgeRef::Svr(i) => network.svrs[i].from,
            };
            if up > 0 {
                let up_phases = network.buses[up].phases;
                for (k, p) in down_phases.iter().enumerate() {
                    let slot = up_phases.index_of(p).expect("validated");
                    arriving[up][slot] += sending[k];
                }
            }
        }

        // Forward pass: update voltages from the slack outward.
        let mut maxdiff: f64 = 0.0;
        for &(e, up, down) in &order.edges {
            let up_phases = network.buses[up].phases;
            let vn = restrict(&v[up], up_phases, network.edge_phases(e));
            let v_new = match e {
                EdgeRef::Line(i) => &vn - &network.lines[i].z * &line_i[i],
                EdgeRef::Svr(i) => &a_inv[i] * vn,
            };
            for k in 0..v_new.len() {
                let delta = v_new[k] - v[down][k];
                maxdiff = maxdiff.max(delta.norm());
                v[down][k] += opts.damping * delta;
            }
        }

        residual = maxdiff;
        if maxdiff < opts.tol {
            return Ok(LoadFlowSolution {
                voltages: v,
                line_currents: line_i,
                svr_primary_currents: svr_ip,
                svr_secondary_currents: svr_is,
                iterations: iter,
                residual,
            });
        }
    }

    Err(LoadFlowError::NonConvergence(opts.max_iter, residual))
}

/// Verification metrics of a converged load flow.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Metrics {
    /// Real power import through the slack branches, per unit.
    pub power_import: f64,
    /// `100 · (c̆ − c)/c` against a relaxation objective; 0 by convention
    /// when `c = 0`.
    pub gap_percent: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    /// Max deviation of any voltage magnitude from the network-wide average.
    pub unbalance: f64,
    /// Max angle-difference deviation from 120° over SVR secondaries, degrees.
    pub phase_separation: f64,
    /// Per-SVR phase-separation values, degrees.
    pub svr_phase_separation: Vec<f64>,
}

fn wrap_deg(mut x: f64) -> f64 {
    while x > 180.0 {
        x -= 360.0;
    }
    while x <= -180.0 {
        x += 360.0;
    }
    x
}

/// Angle-difference deviation from 120° over the full-cycle right-shift pairs
/// present at a bus (degrees). Returns 0 for single-phase buses.
pub fn phase_separation_at(phases: PhaseMask, v: &DVector<Complex64>) -> f64 {
    let mut worst: f64 = 0.0;
    for p in phases.iter() {
        let q = p.right();
        if !phases.contains(q) {
            continue;
        }
        let ti = v[phases.index_of(p).unwrap()].arg().to_degrees();
        let tj = v[phases.index_of(q).unwrap()].arg().to_degrees();
        worst = worst.max(wrap_deg(ti - tj - 120.0).abs());
    }
    worst
}

/// Computes the metric set. The power import is taken from the slack branch
/// flows, which on a converged solution agrees with the admittance-form
/// bookkeeping (see [`complex_power_balance`]).
pub fn metrics(
    network: &Network,
    solution: &LoadFlowSolution,
    relax_objective: Option<f64>,
) -> Metrics {
    let import = slack_import(network, solution).re;

    let gap_percent = relax_objective.map(|c| {
        if c.abs() < 1e-12 {
            0.0
        } else {
            100.0 * (import - c) / c
        }
    });

    let mut v_min = f64::INFINITY;
    let mut v_max: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in &solution.voltages {
        for x in v.iter() {
            let m = x.norm();
            v_min = v_min.min(m);
            v_max = v_max.max(m);
            sum += m;
            count += 1;
        }
    }
    let v_avg = sum / count as f64;
    let unbalance = solution
        .voltages
        .iter()
        .flat_map(|v| v.iter())
        .map(|x| (1.0 - x.norm() / v_avg).abs())
        .fold(0.0, f64::max);

    let svr_phase_separation: Vec<f64> = network
        .svrs
        .iter()
        .map(|s| phase_separation_at(network.buses[s.to].phases, &solution.voltages[s.to]))
        .collect();
    let phase_separation = svr_phase_separation.iter().copied().fold(0.0, f64::max);

    Metrics {
        power_import: import,
        gap_percent,
        v_min,
        v_max,
        unbalance,
        phase_separation,
        svr_phase_separation,
    }
}

/// Complex power leaving the slack bus through its incident edges.
pub fn slack_import(network: &Network, solution: &LoadFlowSolution) -> Complex64 {
    let slack_phases = network.buses[0].phases;
    let mut total = Complex64::new(0.0, 0.0);
    let mut add = |phases: PhaseMask, current: &DVector<Complex64>| {
        for (k, p) in phases.iter().enumerate() {
            let v0 = network.slack_voltage[slack_phases.index_of(p).unwrap()];
            total += v0 * current[k].conj();
        }
    };
    for (i, l) in network.lines.iter().enumerate() {
        if l.from == 0 {
            add(l.phases, &solution.line_currents[i]);
        }
    }
    for (i, s) in network.svrs.iter().enumerate() {
        if s.from == 0 {
            add(s.phases, &solution.svr_primary_currents[i]);
        }
    }
    total
}

/// Complex power-balance residual of a solution: slack import plus net
/// injections at user buses, minus shunt extraction and series losses. Zero
/// at a converged solution (ideal SVR edges are lossless).
pub fn complex_power_balance(
    network: &Network,
    injections: &[DVector<Complex64>],
    solution: &LoadFlowSolution,
) -> Complex64 {
    let mut acc = slack_import(network, solution);
    for (m, bus) in network.buses.iter().enumerate().skip(1) {
        let v = &solution.voltages[m];
        acc += injections[m].sum();
        let shunt_i = &bus.shunt_y * v;
        let extract: Complex64 = v.iter().zip(shunt_i.iter()).map(|(v, i)| v * i.conj()).sum();
        acc -= extract;
    }
    for (i, l) in network.lines.iter().enumerate() {
        let cur = &solution.line_currents[i];
        let drop = &l.z * cur;
        let loss: Complex64 = drop.iter().zip(cur.iter()).map(|(d, i)| d * i.conj()).sum();
        acc -= loss;
    }
    acc
}

/// Per-SVR total-power mismatch `1ᵀdiag(v_n ī) − 1ᵀdiag(v_m ī')`; exactly
/// zero for the ideal device up to arithmetic rounding.
pub fn svr_power_mismatch(network: &Network, solution: &LoadFlowSolution) -> Vec<f64> {
    network
        .svrs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let up_phases = network.buses[s.from].phases;
            let vn = restrict(&solution.voltages[s.from], up_phases, s.phases);
            let pri: Complex64 = vn
                .iter()
                .zip(solution.svr_primary_currents[i].iter())
                .map(|(v, c)| v * c.conj())
                .sum();
            let sec: Complex64 = solution.voltages[s.to]
                .iter()
                .zip(solution.svr_secondary_currents[i].iter())
                .map(|(v, c)| v * c.conj())
                .sum();
            (pri - sec).norm()
        })
        .collect()
}

/// Max KCL residual over user buses: net injection current from constant
/// power and shunts versus the aggregated branch currents.
pub fn kcl_residual(
    network: &Network,
    injections: &[DVector<Complex64>],
    solution: &LoadFlowSolution,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (m, bus) in network.buses.iter().enumerate().skip(1) {
        let mut lhs = DVector::zeros(bus.phases.len());
        for k in 0..bus.phases.len() {
            lhs[k] = (injections[m][k] / solution.voltages[m][k]).conj();
        }
        lhs -= &bus.shunt_y * &solution.voltages[m];

        // Branch side of the KCL at bus m.
        let mut rhs = DVector::zeros(bus.phases.len());
        let mut add = |phases: PhaseMask, cur: &DVector<Complex64>, sign: f64| {
            for (k, p) in phases.iter().enumerate() {
                let slot = bus.phases.index_of(p).unwrap();
                rhs[slot] += sign * cur[k];
            }
        };
        for (i, l) in network.lines.iter().enumerate() {
            if l.from == m {
                add(l.phases, &solution.line_currents[i], 1.0);
            }
            if l.to == m {
                add(l.phases, &solution.line_currents[i], -1.0);
            }
        }
        for (i, s) in network.svrs.iter().enumerate() {
            if s.from == m {
                add(s.phases, &solution.svr_primary_currents[i], 1.0);
            }
            if s.to == m {
                add(s.phases, &solution.svr_secondary_currents[i], -1.0);
            }
        }
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_feeder;

    fn balanced_slack() -> &'static str {
        r#""slack": {"bus": 0, "voltage": [[1.0, 0.0], [-0.5, -0.8660254037844386], [-0.5, 0.8660254037844386]]}"#
    }

    #[test]
    fn zero_load_network_is_flat_in_one_iteration() {
        let json = format!(
            r#"{{
            "buses": [{{"id": 0, "phases": "abc"}}, {{"id": 1, "phases": "abc"}}],
            "lines": [{{"from": 0, "to": 1, "z": [
                [[0.01, 0.03], [0.0, 0.01], [0.0, 0.01]],
                [[0.0, 0.01], [0.01, 0.03], [0.0, 0.01]],
                [[0.0, 0.01], [0.0, 0.01], [0.01, 0.03]]
            ]}}],
            {}, "v_min": 0.9, "v_max": 1.1
        }}"#,
            balanced_slack()
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let sol = sweep(&net, &[], &inj, &SweepOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.voltages[1], net.slack_voltage);
        assert!(sol.line_currents[0].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn two_bus_single_phase_matches_closed_form() {
        // Oracle: v satisfies v·conj((v0 − v)/z) = s_load, solved exactly via
        // the quadratic in |v|^2.
        let z = Complex64::new(0.02, 0.06);
        let s = Complex64::new(0.4, 0.15);
        let json = format!(
            r#"{{
            "buses": [{{"id": 0, "phases": "a"}}, {{"id": 1, "phases": "a", "load_s": [[{}, {}]]}}],
            "lines": [{{"from": 0, "to": 1, "z": [[[{}, {}]]]}}],
            "slack": {{"bus": 0, "voltage": [[1.0, 0.0]]}},
            "v_min": 0.8, "v_max": 1.1
        }}"#,
            s.re, s.im, z.re, z.im
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let opts = SweepOptions {
            tol: 1e-14,
            ..Default::default()
        };
        let sol = sweep(&net, &[], &inj, &opts).unwrap();

        let zs = z * s.conj();
        let (a, b) = (zs.re, zs.im);
        let q = 1.0 - 2.0 * a; // |v0|^2 = 1
        let t = 0.5 * (q + (q * q - 4.0 * (a * a + b * b)).sqrt());
        let v_exact = (Complex64::new(t, 0.0) + z.conj() * s) / Complex64::new(1.0, 0.0);
        assert!(
            (sol.voltages[1][0] - v_exact).norm() < 1e-10,
            "sweep {} vs closed form {}",
            sol.voltages[1][0],
            v_exact
        );
        // The line current and power at the load check out as well.
        let i = (Complex64::new(1.0, 0.0) - v_exact) / z;
        assert!((sol.line_currents[0][0] - i).norm() < 1e-9);
    }

    #[test]
    fn wye_svr_pure_gain_no_load() {
        let json = format!(
            r#"{{
            "buses": [
                {{"id": 0, "phases": "abc"}}, {{"id": 1, "phases": "abc"}}, {{"id": 2, "phases": "abc"}}
            ],
            "lines": [{{"from": 0, "to": 1, "z": [
                [[0.01, 0.03], [0, 0], [0, 0]],
                [[0, 0], [0.01, 0.03], [0, 0]],
                [[0, 0], [0, 0], [0.01, 0.03]]
            ]}}],
            "svrs": [{{"from": 1, "to": 2, "type": "wye"}}],
            {}, "v_min": 0.9, "v_max": 1.1
        }}"#,
            balanced_slack()
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let sol = sweep(&net, &[vec![1.05, 1.05, 1.05]], &inj, &SweepOptions::default()).unwrap();
        for k in 0..3 {
            let expect = net.slack_voltage[k] / 1.05;
            assert!((sol.voltages[2][k] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn balanced_solution_has_zero_unbalance_metrics() {
        let json = format!(
            r#"{{
            "buses": [{{"id": 0, "phases": "abc"}}, {{"id": 1, "phases": "abc"}}],
            "lines": [{{"from": 0, "to": 1, "z": [
                [[0.0001, 0.0], [0, 0], [0, 0]],
                [[0, 0], [0.0001, 0.0], [0, 0]],
                [[0, 0], [0, 0], [0.0001, 0.0]]
            ]}}],
            "svrs": [],
            {}, "v_min": 0.9, "v_max": 1.1
        }}"#,
            balanced_slack()
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let sol = sweep(&net, &[], &inj, &SweepOptions::default()).unwrap();
        let m = metrics(&net, &sol, Some(0.0));
        assert_eq!(m.gap_percent, Some(0.0));
        assert!(m.unbalance < 1e-12);
        assert!(m.phase_separation < 1e-9);
        assert!((m.v_min - 1.0).abs() < 1e-9 && (m.v_max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gap_is_zero_when_import_matches_objective() {
        let json = format!(
            r#"{{
            "buses": [{{"id": 0, "phases": "a"}}, {{"id": 1, "phases": "a", "load_s": [[0.2, 0.1]]}}],
            "lines": [{{"from": 0, "to": 1, "z": [[[0.01, 0.02]]]}}],
            "slack": {{"bus": 0, "voltage": [[1.0, 0.0]]}},
            "v_min": 0.9, "v_max": 1.1
        }}"#
        );
        let _ = balanced_slack();
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let sol = sweep(&net, &[], &inj, &SweepOptions::default()).unwrap();
        let base = metrics(&net, &sol, None);
        let m = metrics(&net, &sol, Some(base.power_import));
        assert!(m.gap_percent.unwrap().abs() < 1e-12);
    }

    #[test]
    fn conservation_and_kcl_residuals_are_small() {
        let json = format!(
            r#"{{
            "buses": [
                {{"id": 0, "phases": "abc"}},
                {{"id": 1, "phases": "abc", "load_s": [[0.1, 0.04], [0.12, 0.05], [0.08, 0.03]],
                  "shunt_y": [[[0.0, 0.02], [0,0], [0,0]], [[0,0], [0.0, 0.02], [0,0]], [[0,0], [0,0], [0.0, 0.02]]]}},
                {{"id": 2, "phases": "abc", "load_s": [[0.05, 0.02], [0.0, 0.0], [0.07, 0.02]]}}
            ],
            "lines": [
                {{"from": 0, "to": 1, "z": [
                    [[0.01, 0.03], [0.002, 0.008], [0.002, 0.008]],
                    [[0.002, 0.008], [0.011, 0.031], [0.002, 0.008]],
                    [[0.002, 0.008], [0.002, 0.008], [0.0105, 0.0305]]
                ]}}
            ],
            "svrs": [{{"from": 1, "to": 2, "type": "closed_delta"}}],
            {}, "v_min": 0.9, "v_max": 1.1
        }}"#,
            balanced_slack()
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let sol = sweep(&net, &[vec![1.02, 0.99, 1.01]], &inj, &SweepOptions::default()).unwrap();
        assert!(complex_power_balance(&net, &inj, &sol).norm() < 1e-8);
        assert!(kcl_residual(&net, &inj, &sol) < 1e-8);
        for mm in svr_power_mismatch(&net, &sol) {
            assert!(mm < 1e-10);
        }
    }

    #[test]
    fn residual_sequence_is_monotone_after_first_iteration() {
        // Regression property on shipped feeders, not a theorem: rerun the
        // sweep with increasing iteration caps and check the final residuals
        // decrease.
        let json = format!(
            r#"{{
            "buses": [
                {{"id": 0, "phases": "abc"}},
                {{"id": 1, "phases": "abc", "load_s": [[0.3, 0.1], [0.25, 0.12], [0.28, 0.09]]}}
            ],
            "lines": [{{"from": 0, "to": 1, "z": [
                [[0.02, 0.05], [0.005, 0.01], [0.005, 0.01]],
                [[0.005, 0.01], [0.02, 0.05], [0.005, 0.01]],
                [[0.005, 0.01], [0.005, 0.01], [0.02, 0.05]]
            ]}}],
            {}, "v_min": 0.9, "v_max": 1.1
        }}"#,
            balanced_slack()
        );
        let net = parse_feeder(&json).unwrap();
        let inj = net.load_injections();
        let mut last = f64::INFINITY;
        for cap in 2..8 {
            let opts = SweepOptions {
                tol: 0.0,
                max_iter: cap,
                damping: 1.0,
            };
            match sweep(&net, &[], &inj, &opts) {
                Err(LoadFlowError::NonConvergence(_, r)) => {
                    assert!(r <= last * (1.0 + 1e-12), "residual grew: {r} > {last}");
                    last = r;
                }
                other => panic!("expected forced non-convergence, got {other:?}"),
            }
        }
    }

    #[test]
    fn phase_separation_wraps_correctly() {
        let mask = PhaseMask::ABC;
        let v = DVector::from_vec(vec![
            Complex64::from_polar(1.0, 0.0),
            Complex64::from_polar(1.0, (-118.0f64).to_radians()),
            Complex64::from_polar(1.0, 121.0f64.to_radians()),
        ]);
        // a−b = 118 (dev 2), b−c = −239 ≡ 121 (dev 1), c−a = 121 (dev 1).
        let sep = phase_separation_at(mask, &v);
        assert!((sep - 2.0).abs() < 1e-9, "{sep}");
    }

    #[test]
    fn nonconvergence_is_reported() {
        // A hopeless loading level collapses the voltage instead of converging.
        let json = r#"{
            "buses": [{"id": 0, "phases": "a"}, {"id": 1, "phases": "a", "load_s": [[30.0, 10.0]]}],
            "lines": [{"from": 0, "to": 1, "z": [[[0.05, 0.1]]]}],
            "slack": {"bus": 0, "voltage": [[1.0, 0.0]]},
            "v_min": 0.9, "v_max": 1.1
        }"#;
        let net = parse_feeder(json).unwrap();
        let inj = net.load_injections();
        match sweep(&net, &[], &inj, &SweepOptions::default()) {
            Err(LoadFlowError::NonConvergence(..)) | Err(LoadFlowError::ZeroVoltage(_)) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

}
