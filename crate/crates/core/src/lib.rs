//! Convex inner approximations of AC power flow feasibility sets.
//!
//! The crate builds a restriction model around a solved, feasible operating
//! point, certifies active-injection vectors as feasible without solving
//! power flow (a Brouwer self-mapping witness over a box of angle
//! differences and PQ voltages), and validates certificates against a
//! Newton-Raphson ground-truth oracle.

pub mod basis;
pub mod envelopes;
pub mod error;
pub mod matpower;
pub mod network;
pub mod powerflow;
pub mod restriction;
pub mod scan;
pub mod selftest;
pub mod testing;

pub use basis::{build_model, ModelOptions, PsiLayout, RestrictionModel};
pub use envelopes::{assemble_bounds, BoundVectors, LineIntervals};
pub use error::{Error, Result};
pub use matpower::{parse_case, parse_case_path, Branch, Bus, BusKind, Gen, NetworkCase};
pub use network::{build_admittance, build_incidence, Admittance, Incidence, IndexMaps};
pub use powerflow::{
    check_operational, flat_start, injections, nr_solve, pf_jacobian, ConstraintReport,
    ControlVector, Diverged, PolarState,
};
pub use restriction::{
    certify, check_at, BoxBounds, CertStatus, Certificate, CertifyOptions, RefusalReason,
};
pub use scan::{cross_section, emit_csv, emit_svg, ScanResult, ScanSpec, Truth};
