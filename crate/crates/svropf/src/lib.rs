//! Optimal tap selection for step-voltage regulators (SVRs) in unbalanced
//! multi-phase distribution feeders.
//!
//! The crate builds a convex conic relaxation of the branch-flow optimal
//! power flow problem in which the effective turns ratios of wye,
//! closed-delta, and open-delta SVRs are continuous decision variables.
//! Voltages, currents, and flows are lifted to matrix variables
//! (`V = v v̄`, `I = i ī`, `S = v ī`), rank constraints on non-SVR edges are
//! dropped, SVR power transfer is handled by per-phase or trace equalities,
//! and the trilinear tap/voltage couplings are replaced by McCormick
//! polyhedra whose boxes come from a phase-separation assumption on the SVR
//! secondary voltage. Taps are recovered from the relaxation solution and
//! certified with an unbalanced forward-backward-sweep load flow.
//!
//! Module map:
//! - [`netmodel`]: network graph types, feeder-file ingestion, radial ordering
//! - [`svrgain`]: SVR gain algebra (D/F matrices, ratio/tap conversion)
//! - [`loadflow`]: forward-backward sweep and verification metrics
//! - [`bounds`]: entry-wise boxes on lifted voltage matrices and their images
//! - [`envelope`]: McCormick polyhedra for bilinear terms
//! - [`conic`]: solver-agnostic conic program representation and solve contract
//! - [`builder`]: assembly of the relaxation (and baseline variants)
//! - [`recovery`]: tap recovery, branch-variable retrieval, certification
//! - [`cli`]: command-line front end

pub mod bounds;
pub mod builder;
pub mod cli;
pub mod conic;
pub mod envelope;
pub mod loadflow;
pub mod netmodel;
pub mod recovery;
pub mod svrgain;

pub use netmodel::{Bus, DgSpec, LineEdge, Network, Phase, PhaseMask, SvrEdge};
pub use svrgain::{SvrSpec, SvrType, SvrVariant};
