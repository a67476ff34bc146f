//! Entry-wise boxes on the real and imaginary parts of lifted voltage
//! matrices at SVR secondaries, and on their images under the constant gain
//! matrices `D` and `F`.
//!
//! With `V = v v̄`, `U = Re V`, `W = Im V`, voltage magnitudes in
//! `[v_min, v_max]` and adjacent-phase angle differences in
//! `[120° − Δ, 120° + Δ]` (phase separation), every entry of `U` and `W` is
//! confined to a closed interval:
//!
//! - diagonal: `U ∈ [v_min², v_max²]`, `W = 0`;
//! - a right-shift pair `(φ, φ́)`: `U ∈ [v_max²·cos(120°+Δ), v_min²·cos(120°−Δ)]`
//!   and `W ∈ [v_min²·sin(120°+Δ), v_max²·sin(120°−Δ)]`;
//! - the mirrored pair flips the sign of the `W` interval (Hermitian
//!   symmetry).
//!
//! The window `Δ ≤ 30°` keeps the cosine non-positive and the sine positive
//! and monotone over the admissible angles, which is what makes these the
//! extreme values. Images `D·X·Dᵀ` and `D·X·Fᵀ` are fixed linear maps of the
//! independent entries of `U` and `W`; their boxes follow by sign-split
//! interval arithmetic over those maps (positive coefficients bind to the
//! matching extreme, negative ones to the opposite extreme), so the reduced
//! phase case and the antisymmetric cancellations on `W` come out exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::netmodel::PhaseMask;

/// Entry-wise box on `U = Re V` and `W = Im V` over the present phases.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageBox {
    pub phases: PhaseMask,
    pub u_min: DMatrix<f64>,
    pub u_max: DMatrix<f64>,
    pub w_min: DMatrix<f64>,
    pub w_max: DMatrix<f64>,
}

/// Boxes for the transformed matrices `Ũ = D U Dᵀ`, `W̃ = D W Dᵀ`,
/// `Û = D U Fᵀ`, `Ŵ = D W Fᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedBox {
    pub tilde_u_min: DMatrix<f64>,
    pub tilde_u_max: DMatrix<f64>,
    pub tilde_w_min: DMatrix<f64>,
    pub tilde_w_max: DMatrix<f64>,
    pub hat_u_min: DMatrix<f64>,
    pub hat_u_max: DMatrix<f64>,
    pub hat_w_min: DMatrix<f64>,
    pub hat_w_max: DMatrix<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BoundsError {
    #[error("phase separation delta {0}° outside [0°, 30°]")]
    DeltaOutOfRange(f64),
    #[error("voltage bounds require 0 < v_min <= v_max, got [{0}, {1}]")]
    BadVoltageBounds(f64, f64),
}

/// Entry-wise box on `U`, `W` for voltages with magnitudes in
/// `[v_min, v_max]` and phase separation `delta` (degrees).
pub fn voltage_box(
    phases: PhaseMask,
    v_min: f64,
    v_max: f64,
    delta: f64,
) -> Result<VoltageBox, BoundsError> {
    if !(v_min > 0.0 && v_min <= v_max) {
        return Err(BoundsError::BadVoltageBounds(v_min, v_max));
    }
    if !(0.0..=30.0).contains(&delta) {
        return Err(BoundsError::DeltaOutOfRange(delta));
    }
    let lo2 = v_min * v_min;
    let hi2 = v_max * v_max;
    let plus = (120.0 + delta).to_radians();
    let minus = (120.0 - delta).to_radians();

    let n = phases.len();
    let ph = phases.phases();
    let mut u_min = DMatrix::zeros(n, n);
    let mut u_max = DMatrix::zeros(n, n);
    let mut w_min = DMatrix::zeros(n, n);
    let mut w_max = DMatrix::zeros(n, n);
    for i in 0..n {
        u_min[(i, i)] = lo2;
        u_max[(i, i)] = hi2;
        for j in 0..n {
            if i == j {
                continue;
            }
            // Angle of V^{φψ} is θ^φ − θ^ψ: +120°±Δ when ψ is the full-cycle
            // right neighbor of φ, −120°∓Δ when it is the left neighbor.
            u_min[(i, j)] = hi2 * plus.cos();
            u_max[(i, j)] = lo2 * minus.cos();
            if ph[j] == ph[i].right() {
                w_min[(i, j)] = lo2 * plus.sin();
                w_max[(i, j)] = hi2 * minus.sin();
            } else {
                w_min[(i, j)] = -hi2 * minus.sin();
                w_max[(i, j)] = -lo2 * plus.sin();
            }
        }
    }
    Ok(VoltageBox {
        phases,
        u_min,
        u_max,
        w_min,
        w_max,
    })
}

/// Linear map from the independent Hermitian parameters of one `n × n`
/// lifted matrix to a scalar. Parameters are the diagonal of `U`, the upper
/// off-diagonal entries of `U`, and the upper off-diagonal entries of `W`
/// (`U` is symmetric, `W` antisymmetric with zero diagonal).
#[derive(Debug, Clone)]
pub(crate) struct EntryMap {
    pub u_diag: Vec<f64>,
    /// Coefficients on `U` upper entries, pair order (0,1), (0,2), .., (1,2), ..
    pub u_off: Vec<f64>,
    pub w_off: Vec<f64>,
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    // Row-major upper triangle.
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl EntryMap {
    fn zero(n: usize) -> EntryMap {
        let offs = n * (n - 1) / 2;
        EntryMap {
            u_diag: vec![0.0; n],
            u_off: vec![0.0; offs],
            w_off: vec![0.0; offs],
        }
    }

    /// Coefficients of `(L X Rᵀ)_{ψψ'}` where `X = U` (take_u) or `X = W`.
    pub fn of_product(
        l: &DMatrix<f64>,
        r: &DMatrix<f64>,
        psi: usize,
        psi2: usize,
        take_u: bool,
    ) -> EntryMap {
        let n = l.nrows();
        let mut m = EntryMap::zero(n);
        for i in 0..n {
            for j in 0..n {
                let c = l[(psi, i)] * r[(psi2, j)];
                if c == 0.0 {
                    continue;
                }
                if take_u {
                    if i == j {
                        m.u_diag[i] += c;
                    } else {
                        m.u_off[pair_index(n, i.min(j), i.max(j))] += c;
                    }
                } else if i < j {
                    m.w_off[pair_index(n, i, j)] += c;
                } else if i > j {
                    m.w_off[pair_index(n, j, i)] -= c;
                }
            }
        }
        m
    }

    #[cfg(test)]
    pub fn eval(&self, u: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        let n = self.u_diag.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.u_diag[i] * u[(i, i)];
        }
        for i in 0..n {
            for j in i + 1..n {
                let k = pair_index(n, i, j);
                acc += self.u_off[k] * u[(i, j)] + self.w_off[k] * w[(i, j)];
            }
        }
        acc
    }

    /// Sign-split interval of the map over the box: positive coefficients
    /// take the matching extreme, negative ones the opposite extreme.
    pub fn interval(&self, bx: &VoltageBox) -> (f64, f64) {
        let n = self.u_diag.len();
        let mut lo = 0.0;
        let mut hi = 0.0;
        let mut push = |c: f64, pmin: f64, pmax: f64| {
            if c >= 0.0 {
                lo += c * pmin;
                hi += c * pmax;
            } else {
                lo += c * pmax;
                hi += c * pmin;
            }
        };
        for i in 0..n {
            push(self.u_diag[i], bx.u_min[(i, i)], bx.u_max[(i, i)]);
        }
        for i in 0..n {
            for j in i + 1..n {
                let k = pair_index(n, i, j);
                push(self.u_off[k], bx.u_min[(i, j)], bx.u_max[(i, j)]);
                push(self.w_off[k], bx.w_min[(i, j)], bx.w_max[(i, j)]);
            }
        }
        (lo, hi)
    }

    /// The box-corner parameter assignment attaining the lower (or upper)
    /// extreme; used to certify interval tightness.
    #[cfg(test)]
    pub fn corner(&self, bx: &VoltageBox, lower: bool) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.u_diag.len();
        let mut u = DMatrix::zeros(n, n);
        let mut w = DMatrix::zeros(n, n);
        let pick = |c: f64, pmin: f64, pmax: f64| {
            if (c >= 0.0) == lower {
                pmin
            } else {
                pmax
            }
        };
        for i in 0..n {
            u[(i, i)] = pick(self.u_diag[i], bx.u_min[(i, i)], bx.u_max[(i, i)]);
        }
        for i in 0..n {
            for j in i + 1..n {
                let k = pair_index(n, i, j);
                u[(i, j)] = pick(self.u_off[k], bx.u_min[(i, j)], bx.u_max[(i, j)]);
                u[(j, i)] = u[(i, j)];
                w[(i, j)] = pick(self.w_off[k], bx.w_min[(i, j)], bx.w_max[(i, j)]);
                w[(j, i)] = -w[(i, j)];
            }
        }
        (u, w)
    }
}

/// Boxes for `D X Dᵀ` and `D X Fᵀ` over a voltage box. With `D = I`, `F = 0`
/// (wye) the tilde boxes equal the input and the hat boxes collapse to zero.
pub fn transformed_box(d: &DMatrix<f64>, f: &DMatrix<f64>, bx: &VoltageBox) -> TransformedBox {
    let n = d.nrows();
    let mut out = TransformedBox {
        tilde_u_min: DMatrix::zeros(n, n),
        tilde_u_max: DMatrix::zeros(n, n),
        tilde_w_min: DMatrix::zeros(n, n),
        tilde_w_max: DMatrix::zeros(n, n),
        hat_u_min: DMatrix::zeros(n, n),
        hat_u_max: DMatrix::zeros(n, n),
        hat_w_min: DMatrix::zeros(n, n),
        hat_w_max: DMatrix::zeros(n, n),
    };
    for psi in 0..n {
        for psi2 in 0..n {
            let (lo, hi) = EntryMap::of_product(d, d, psi, psi2, true).interval(bx);
            out.tilde_u_min[(psi, psi2)] = lo;
            out.tilde_u_max[(psi, psi2)] = hi;
            let (lo, hi) = EntryMap::of_product(d, d, psi, psi2, false).interval(bx);
            out.tilde_w_min[(psi, psi2)] = lo;
            out.tilde_w_max[(psi, psi2)] = hi;
            let (lo, hi) = EntryMap::of_product(d, f, psi, psi2, true).interval(bx);
            out.hat_u_min[(psi, psi2)] = lo;
            out.hat_u_max[(psi, psi2)] = hi;
            let (lo, hi) = EntryMap::of_product(d, f, psi, psi2, false).interval(bx);
            out.hat_w_min[(psi, psi2)] = lo;
            out.hat_w_max[(psi, psi2)] = hi;
        }
    }
    out
}

/// Splits a lifted voltage `v v̄` into its real and imaginary parts.
pub fn lift_voltage(v: &DVector<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = v.len();
    let mut u = DMatrix::zeros(n, n);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let e = v[i] * v[j].conj();
            u[(i, j)] = e.re;
            w[(i, j)] = e.im;
        }
    }
    (u, w)
}

/// Draws a random voltage over `phases` with magnitudes in `[v_min, v_max]`
/// and every adjacent-phase angle difference within `120° ± delta` — the
/// sampling oracle for box-soundness diagnostics. The global rotation is
/// uniform and irrelevant to the lifted entries.
pub fn sample_separated_voltage<R: Rng>(
    rng: &mut R,
    phases: PhaseMask,
    v_min: f64,
    v_max: f64,
    delta: f64,
) -> DVector<Complex64> {
    let base: f64 = rng.gen_range(0.0..360.0);
    let angles: [f64; 3] = loop {
        let d_ab = rng.gen_range(120.0 - delta..=120.0 + delta);
        let d_bc = rng.gen_range(120.0 - delta..=120.0 + delta);
        let d_ca = 360.0 - d_ab - d_bc;
        if (120.0 - delta..=120.0 + delta).contains(&d_ca) {
            break [base, base - d_ab, base - d_ab - d_bc];
        }
    };
    DVector::from_iterator(
        phases.len(),
        phases.iter().map(|p| {
            let mag = rng.gen_range(v_min..=v_max);
            let theta = angles[match p {
                crate::netmodel::Phase::A => 0,
                crate::netmodel::Phase::B => 1,
                crate::netmodel::Phase::C => 2,
            }];
            Complex64::from_polar(mag, theta.to_radians())
        }),
    )
}
