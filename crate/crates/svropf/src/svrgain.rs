//! SVR gain algebra: the constant matrices `D`, `F` per connection type, the
//! voltage-gain matrix `A(r) = diag(r)·D + F`, and ratio/tap conversion.
//!
//! A three-phase SVR is a bank of single-phase autotransformers in wye,
//! closed-delta, or open-delta connection. Treating the bank as ideal, the
//! primary/secondary quantities satisfy `v_pri = A v_sec` and
//! `i_pri = Ā⁻¹ i_sec` (bar = conjugate transpose), so total complex power is
//! conserved exactly across the device. Closed-delta ratios are labeled by
//! the leading phase of their winding pair (ab → a, bc → b, ca → c);
//! open-delta has no `b` winding and fixes that ratio to 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::netmodel::PhaseMask;

/// Ratio step per tap position. Taps in `[-16, 16]` span ratios `[0.9, 1.1]`.
pub const TAP_STEP: f64 = 0.00625;
pub const TAP_MIN: i32 = -16;
pub const TAP_MAX: i32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvrType {
    Wye,
    ClosedDelta,
    OpenDelta,
}

/// Regulator winding variant. Type A adds turns on the source side, type B on
/// the load side; they differ only in the sign of the tap/ratio map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvrVariant {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrSpec {
    pub svr_type: SvrType,
    pub variant: SvrVariant,
    /// Gang operation: all (non-fixed) ratios of this SVR share one value.
    pub gang: bool,
    /// Per-label lower ratio bounds (labels: present phases for wye, a/b/c
    /// winding pairs for deltas).
    pub r_min: Vec<f64>,
    pub r_max: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GainError {
    #[error("ratio {0} outside [{1}, {2}]")]
    RatioOutOfBounds(f64, f64, f64),
    #[error("tap {0} outside [{TAP_MIN}, {TAP_MAX}]")]
    TapOutOfRange(i32),
    #[error("gain matrix is singular")]
    SingularGain,
    #[error("{0}")]
    BadSpec(String),
}

impl SvrSpec {
    /// Number of ratio labels for this SVR on the given phase set.
    pub fn label_count(svr_type: SvrType, phases: PhaseMask) -> usize {
        match svr_type {
            SvrType::Wye => phases.len(),
            SvrType::ClosedDelta | SvrType::OpenDelta => 3,
        }
    }

    pub fn new(
        svr_type: SvrType,
        variant: SvrVariant,
        gang: bool,
        phases: PhaseMask,
        r_min: Option<Vec<f64>>,
        r_max: Option<Vec<f64>>,
    ) -> Result<SvrSpec, GainError> {
        let n = Self::label_count(svr_type, phases);
        let mut r_min = r_min.unwrap_or_else(|| vec![0.9; n]);
        let mut r_max = r_max.unwrap_or_else(|| vec![1.1; n]);
        if r_min.len() != n || r_max.len() != n {
            return Err(GainError::BadSpec(format!(
                "expected {n} ratio bounds, got {}/{}",
                r_min.len(),
                r_max.len()
            )));
        }
        if svr_type == SvrType::OpenDelta {
            // No middle autotransformer: the b ratio is identically 1.
            r_min[1] = 1.0;
            r_max[1] = 1.0;
        }
        for (lo, hi) in r_min.iter().zip(&r_max) {
            if !(lo <= hi) {
                return Err(GainError::BadSpec(format!("r_min {lo} > r_max {hi}")));
            }
        }
        Ok(SvrSpec {
            svr_type,
            variant,
            gang,
            r_min,
            r_max,
        })
    }

    /// Fixed ratio labels (true = not a decision variable).
    pub fn fixed_labels(&self) -> Vec<bool> {
        self.r_min
            .iter()
            .zip(&self.r_max)
            .map(|(lo, hi)| lo == hi)
            .collect()
    }
}

/// Constant matrices of the gain decomposition `A(r) = diag(r)·D + F` for one
/// SVR type on a phase set. Wye banks use the identity restricted to the
/// present phases; delta banks are inherently three-phase.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTriple {
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl GainTriple {
    pub fn new(svr_type: SvrType, phases: PhaseMask) -> GainTriple {
        match svr_type {
            SvrType::Wye => {
                let n = phases.len();
                GainTriple {
                    d: DMatrix::identity(n, n),
                    f: DMatrix::zeros(n, n),
                }
            }
            SvrType::ClosedDelta => GainTriple {
                d: DMatrix::from_row_slice(
                    3,
                    3,
                    &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 1.0],
                ),
                f: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
            },
            SvrType::OpenDelta => GainTriple {
                d: DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 1.0]),
                f: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            },
        }
    }

    /// `A(r) = diag(r)·D + F`.
    pub fn gain(&self, r: &[f64]) -> DMatrix<f64> {
        let n = self.d.nrows();
        debug_assert_eq!(r.len(), n);
        let mut a = self.f.clone();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += r[i] * self.d[(i, j)];
            }
        }
        a
    }
}

/// Voltage gain matrix for a spec at ratio vector `r`, checking bounds.
pub fn gain_matrix(
    spec: &SvrSpec,
    phases: PhaseMask,
    r: &[f64],
) -> Result<DMatrix<f64>, GainError> {
    let tol = 1e-9;
    for ((&ri, &lo), &hi) in r.iter().zip(&spec.r_min).zip(&spec.r_max) {
        if ri < lo - tol || ri > hi + tol {
            return Err(GainError::RatioOutOfBounds(ri, lo, hi));
        }
    }
    Ok(GainTriple::new(spec.svr_type, phases).gain(r))
}

/// Effective turns ratio → integer tap position.
///
/// `tap = round(∓(1 − r)/0.00625)` with the plus sign for type A and the
/// minus sign for type B.
pub fn ratio_to_tap(r: f64, variant: SvrVariant) -> i32 {
    let raw = match variant {
        SvrVariant::A => (1.0 - r) / TAP_STEP,
        SvrVariant::B => (r - 1.0) / TAP_STEP,
    };
    raw.round() as i32
}

/// Integer tap position → effective turns ratio (inverse of [`ratio_to_tap`]).
pub fn tap_to_ratio(tap: i32, variant: SvrVariant) -> Result<f64, GainError> {
    if !(TAP_MIN..=TAP_MAX).contains(&tap) {
        return Err(GainError::TapOutOfRange(tap));
    }
    Ok(match variant {
        SvrVariant::A => 1.0 - TAP_STEP * tap as f64,
        SvrVariant::B => 1.0 + TAP_STEP * tap as f64,
    })
}

/// Applies the ideal-SVR gains to secondary quantities:
/// `v_pri = A v_sec`, `i_pri = (Aᵀ)⁻¹ i_sec` (A is real, so the conjugate
/// transpose is the plain transpose).
pub fn apply_gains(
    a: &DMatrix<f64>,
    v_secondary: &DVector<Complex64>,
    i_secondary: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, DVector<Complex64>), GainError> {
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let at_inv = a
        .transpose()
        .try_inverse()
        .ok_or(GainError::SingularGain)?
        .map(|x| Complex64::new(x, 0.0));
    Ok((&ac * v_secondary, &at_inv * i_secondary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn full() -> PhaseMask {
        PhaseMask::ABC
    }

    fn spec(t: SvrType) -> SvrSpec {
        SvrSpec::new(t, SvrVariant::B, false, full(), None, None).unwrap()
    }

    #[test]
    fn wye_unit_ratio_gives_identity() {
        let a = gain_matrix(&spec(SvrType::Wye), full(), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));
    }

    #[test]
    fn closed_delta_matches_tabulated_form() {
        let (ra, rb, rc) = (1.04, 0.97, 1.0125);
        let a = gain_matrix(&spec(SvrType::ClosedDelta), full(), &[ra, rb, rc]).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[ra, 1.0 - ra, 0.0, 0.0, rb, 1.0 - rb, 1.0 - rc, 0.0, rc],
        );
        assert_eq!(a, expected);
    }

    #[test]
    fn open_delta_middle_row_is_unit() {
        let a = gain_matrix(&spec(SvrType::OpenDelta), full(), &[1.08, 1.0, 0.93]).unwrap();
        assert_eq!(a.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(a[(0, 0)], 1.08);
        assert_eq!(a[(2, 1)], 1.0 - 0.93);
    }

    #[test]
    fn out_of_bounds_ratio_is_rejected() {
        assert!(matches!(
            gain_matrix(&spec(SvrType::Wye), full(), &[1.2, 1.0, 1.0]),
            Err(GainError::RatioOutOfBounds(..))
        ));
    }

    #[test]
    fn tap_mapping_endpoints() {
        assert_eq!(ratio_to_tap(1.0, SvrVariant::A), 0);
        assert_eq!(ratio_to_tap(1.0, SvrVariant::B), 0);
        assert_eq!(ratio_to_tap(1.1, SvrVariant::B), 16);
        assert_eq!(ratio_to_tap(1.1, SvrVariant::A), -16);
        assert_eq!(ratio_to_tap(0.9, SvrVariant::B), -16);
    }

    #[test]
    fn tap_to_ratio_inverts() {
        assert_eq!(tap_to_ratio(0, SvrVariant::A).unwrap(), 1.0);
        assert_eq!(tap_to_ratio(16, SvrVariant::B).unwrap(), 1.1);
        // Derived by inverting the tap formula for type A at tap -8.
        assert_eq!(tap_to_ratio(-8, SvrVariant::A).unwrap(), 1.05);
        for variant in [SvrVariant::A, SvrVariant::B] {
            for tap in TAP_MIN..=TAP_MAX {
                let r = tap_to_ratio(tap, variant).unwrap();
                assert_eq!(ratio_to_tap(r, variant), tap);
            }
        }
        assert!(matches!(
            tap_to_ratio(17, SvrVariant::B),
            Err(GainError::TapOutOfRange(17))
        ));
    }

    #[test]
    fn gain_determinant_nonzero_over_ratio_grid() {
        // 21 samples per axis over [0.9, 1.1] for each type.
        let grid: Vec<f64> = (0..21).map(|k| 0.9 + 0.01 * k as f64).collect();
        for t in [SvrType::Wye, SvrType::ClosedDelta, SvrType::OpenDelta] {
            let triple = GainTriple::new(t, full());
            for &ra in &grid {
                for &rb in &grid {
                    for &rc in &grid {
                        let r = if t == SvrType::OpenDelta {
                            [ra, 1.0, rc]
                        } else {
                            [ra, rb, rc]
                        };
                        let det = triple.gain(&r).determinant();
                        assert!(det.abs() > 1e-6, "{t:?} singular at {r:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn identity_gain_passes_through() {
        let a = DMatrix::identity(3, 3);
        let v = DVector::from_vec(vec![
            Complex64::new(1.0, 0.1),
            Complex64::new(-0.4, -0.8),
            Complex64::new(-0.5, 0.9),
        ]);
        let i = v.map(|x| x * Complex64::new(0.2, -0.1));
        let (vp, ip) = apply_gains(&a, &v, &i).unwrap();
        assert_eq!(vp, v);
        assert_eq!(ip, i);
    }

    #[test]
    fn wye_scaling_and_power_conservation() {
        let spec = spec(SvrType::Wye);
        let r = [1.05, 1.05, 1.05];
        let a = gain_matrix(&spec, full(), &r).unwrap();
        let v = DVector::from_element(3, Complex64::new(1.0, 0.0));
        let i = DVector::from_element(3, Complex64::new(0.3, -0.1));
        let (vp, ip) = apply_gains(&a, &v, &i).unwrap();
        for k in 0..3 {
            assert!((vp[k] - Complex64::new(1.05, 0.0)).norm() < 1e-14);
            assert!((ip[k] - i[k] / 1.05).norm() < 1e-14);
        }
    }

    #[test]
    fn closed_delta_conserves_complex_power() {
        // Oracle: direct complex arithmetic plus the ideal-transformer power
        // conservation identity sum(v_pri * conj(i_pri)) = sum(v_sec * conj(i_sec)).
        let spec = spec(SvrType::ClosedDelta);
        let a = gain_matrix(&spec, full(), &[1.05, 1.0, 0.95]).unwrap();
        let angle = |deg: f64| Complex64::from_polar(1.0, deg.to_radians());
        let v = DVector::from_vec(vec![angle(0.0), angle(-120.0), angle(120.0)]);
        let i = DVector::from_vec(vec![
            Complex64::new(0.21, -0.08),
            Complex64::new(-0.15, -0.22),
            Complex64::new(-0.02, 0.27),
        ]);
        let (vp, ip) = apply_gains(&a, &v, &i).unwrap();
        // Voltage side verified by direct multiply.
        let ac = a.map(|x| Complex64::new(x, 0.0));
        assert!((&ac * &v - &vp).norm() < 1e-14);
        let s_pri: Complex64 = vp.iter().zip(ip.iter()).map(|(v, i)| v * i.conj()).sum();
        let s_sec: Complex64 = v.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).sum();
        assert!((s_pri - s_sec).norm() < 1e-12, "{s_pri} vs {s_sec}");
    }

    #[test]
    fn reduced_phase_wye_uses_principal_submatrix() {
        let mask = PhaseMask::parse("ac").unwrap();
        let spec = SvrSpec::new(SvrType::Wye, SvrVariant::B, false, mask, None, None).unwrap();
        let a = gain_matrix(&spec, mask, &[1.05, 0.95]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.05, 0.0, 0.0, 0.95]);
        assert_eq!(a, expected);
    }
}
