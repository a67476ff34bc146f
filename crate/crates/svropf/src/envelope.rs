//! McCormick polyhedra: the standard four-halfspace linear relaxation of a
//! bilinear constraint `x = u·w` over a box, plus the box rows themselves.
//!
//! For `u ∈ [u_min, u_max]` and `w ∈ [w_min, w_max]` the polyhedron is
//!
//! ```text
//!   u_min·w + u·w_min − u_min·w_min ≤ x      (under-estimators)
//!   u_max·w + u·w_max − u_max·w_max ≤ x
//!   u_max·w + u·w_min − u_max·w_min ≥ x      (over-estimators)
//!   u_min·w + u·w_max − u_min·w_max ≥ x
//! ```
//!
//! It contains every `(u, w, u·w)` with `(u, w)` in the box and is exact at
//! the box corners. Degenerate boxes (`u_min = u_max`) are allowed and then
//! linearize the product exactly.

/// One halfspace `cu·u + cw·w + cx·x ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRow {
    pub cu: f64,
    pub cw: f64,
    pub cx: f64,
    pub rhs: f64,
}

/// The six rows of a McCormick polyhedron over one box.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub u_min: f64,
    pub u_max: f64,
    pub w_min: f64,
    pub w_max: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvelopeError {
    #[error("empty box: [{0}, {1}] x [{2}, {3}]")]
    EmptyBox(f64, f64, f64, f64),
}

/// Builds the envelope for `x = u·w` over the given box.
pub fn mccormick_rows(
    u_min: f64,
    u_max: f64,
    w_min: f64,
    w_max: f64,
) -> Result<Envelope, EnvelopeError> {
    if u_min > u_max || w_min > w_max {
        return Err(EnvelopeError::EmptyBox(u_min, u_max, w_min, w_max));
    }
    Ok(Envelope {
        u_min,
        u_max,
        w_min,
        w_max,
    })
}

impl Envelope {
    /// Rows in order: u box (2), w box (2), under-estimators (2),
    /// over-estimators (2).
    pub fn rows(&self) -> [EnvelopeRow; 8] {
        let (ul, uh, wl, wh) = (self.u_min, self.u_max, self.w_min, self.w_max);
        [
            // u_min <= u <= u_max
            EnvelopeRow { cu: 1.0, cw: 0.0, cx: 0.0, rhs: uh },
            EnvelopeRow { cu: -1.0, cw: 0.0, cx: 0.0, rhs: -ul },
            // w_min <= w <= w_max
            EnvelopeRow { cu: 0.0, cw: 1.0, cx: 0.0, rhs: wh },
            EnvelopeRow { cu: 0.0, cw: -1.0, cx: 0.0, rhs: -wl },
            // u_min·w + u·w_min − u_min·w_min ≤ x
            EnvelopeRow { cu: wl, cw: ul, cx: -1.0, rhs: ul * wl },
            // u_max·w + u·w_max − u_max·w_max ≤ x
            EnvelopeRow { cu: wh, cw: uh, cx: -1.0, rhs: uh * wh },
            // x ≤ u_max·w + u·w_min − u_max·w_min
            EnvelopeRow { cu: -wl, cw: -uh, cx: 1.0, rhs: -uh * wl },
            // x ≤ u_min·w + u·w_max − u_min·w_max
            EnvelopeRow { cu: -wh, cw: -ul, cx: 1.0, rhs: -ul * wh },
        ]
    }

    /// The four estimator halfspaces alone (rows 5–8 of [`rows`](Self::rows)).
    /// Together with one copy of each variable's box rows they cut the same
    /// polyhedron; program builders use this form to avoid re-emitting boxes
    /// per group.
    pub fn estimator_rows(&self) -> [EnvelopeRow; 4] {
        let r = self.rows();
        [r[4], r[5], r[6], r[7]]
    }

    /// Feasible x-interval at a fixed `(u, w)` inside the box:
    /// max of the under-estimators up to min of the over-estimators.
    pub fn x_interval(&self, u: f64, w: f64) -> (f64, f64) {
        let lo = (self.u_min * w + u * self.w_min - self.u_min * self.w_min)
            .max(self.u_max * w + u * self.w_max - self.u_max * self.w_max);
        let hi = (self.u_max * w + u * self.w_min - self.u_max * self.w_min)
            .min(self.u_min * w + u * self.w_max - self.u_min * self.w_max);
        (lo, hi)
    }
}

/// Feasibility tolerance of the diagnostic checker.
pub const CHECK_TOL: f64 = 1e-9;

/// Checks a point against all rows; returns feasibility at [`CHECK_TOL`] and
/// the worst violation magnitude (0 when feasible with slack).
pub fn check_envelope(u: f64, w: f64, x: f64, envelope: &Envelope) -> (bool, f64) {
    let worst = envelope
        .rows()
        .iter()
        .map(|r| r.cu * u + r.cw * w + r.cx * x - r.rhs)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    (worst <= CHECK_TOL, worst)
}
