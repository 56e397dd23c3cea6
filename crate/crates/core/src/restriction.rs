//! The certification engine: evaluate the self-mapping condition, search for
//! a witness box by monotone fixed-point iteration, and emit certificates
//! with margins and state enclosures.
//!
//! A control vector is certified feasible when some box b satisfies
//! `w(u, b) <= b`, `L+ psi_up + L- psi_lo <= d`, and `b <= b_max`. The
//! witness search seeds a degenerate box at the base point and iterates
//! `b <- max(b, w(u, b))`; because the bound vectors nest as the box grows,
//! the iterates are elementwise nondecreasing and any limit with
//! `w(b) <= b` is a valid witness. The search is incomplete (it can miss
//! witnesses), which only shrinks the certified region; it never certifies
//! an infeasible injection.

use crate::basis::RestrictionModel;
use crate::envelopes::{assemble_bounds, BoundVectors};
use crate::error::{Error, Result};
use crate::powerflow::ControlVector;
use nalgebra::DVector;
use serde::Serialize;

/// The box parameter in interval form: angle-difference bounds per line (in
/// the slack-removed coordinate the polytope rows measure) and magnitude
/// bounds per PQ bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub phi_ub: Vec<f64>,
    pub phi_lb: Vec<f64>,
    pub v_ub: Vec<f64>,
    pub v_lb: Vec<f64>,
}

impl BoxBounds {
    /// Pack as `[phi_ub; v_ub; -phi_lb; -v_lb]`.
    pub fn pack(&self) -> DVector<f64> {
        let (nl, npq) = (self.phi_ub.len(), self.v_ub.len());
        let mut b = DVector::zeros(2 * nl + 2 * npq);
        for l in 0..nl {
            b[l] = self.phi_ub[l];
            b[nl + npq + l] = -self.phi_lb[l];
        }
        for k in 0..npq {
            b[nl + k] = self.v_ub[k];
            b[nl + npq + nl + k] = -self.v_lb[k];
        }
        b
    }

    pub fn unpack(b: &DVector<f64>, n_lines: usize, n_pq: usize) -> Self {
        let (nl, npq) = (n_lines, n_pq);
        debug_assert_eq!(b.len(), 2 * nl + 2 * npq);
        BoxBounds {
            phi_ub: (0..nl).map(|l| b[l]).collect(),
            phi_lb: (0..nl).map(|l| -b[nl + npq + l]).collect(),
            v_ub: (0..npq).map(|k| b[nl + k]).collect(),
            v_lb: (0..npq).map(|k| -b[nl + npq + nl + k]).collect(),
        }
    }

    /// Degenerate box at the model's base point.
    pub fn degenerate(model: &RestrictionModel) -> Self {
        BoxBounds::unpack(&model.b_hat(), model.layout.n_lines, model.layout.n_pq)
    }

    pub fn is_consistent(&self) -> bool {
        self.phi_lb
            .iter()
            .zip(&self.phi_ub)
            .all(|(lo, hi)| lo <= hi)
            && self.v_lb.iter().zip(&self.v_ub).all(|(lo, hi)| lo <= hi)
    }

    /// Elementwise interval midpoint of two boxes.
    pub fn midpoint(a: &BoxBounds, b: &BoxBounds) -> BoxBounds {
        let avg = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(p, q)| 0.5 * (p + q))
                .collect::<Vec<_>>()
        };
        BoxBounds {
            phi_ub: avg(&a.phi_ub, &b.phi_ub),
            phi_lb: avg(&a.phi_lb, &b.phi_lb),
            v_ub: avg(&a.v_ub, &b.v_ub),
            v_lb: avg(&a.v_lb, &b.v_lb),
        }
    }
}

/// One evaluation of the certification conditions at a fixed box.
pub struct Evaluation {
    pub w: DVector<f64>,
    pub ineq_margin: DVector<f64>,
    pub bounds: BoundVectors,
}

/// The self-mapping requirement `w = K+ g_up + K- g_lo`.
pub fn self_map(
    u: &ControlVector,
    b: &BoxBounds,
    model: &RestrictionModel,
) -> Result<DVector<f64>> {
    Ok(evaluate(u, b, model)?.w)
}

/// Margin of the PV reactive-limit condition: `d - (L+ psi_up + L- psi_lo)`.
/// Nonnegative entries mean the condition holds everywhere in the box.
pub fn ineq_check(
    u: &ControlVector,
    b: &BoxBounds,
    model: &RestrictionModel,
) -> Result<DVector<f64>> {
    Ok(evaluate(u, b, model)?.ineq_margin)
}

pub fn evaluate(u: &ControlVector, b: &BoxBounds, model: &RestrictionModel) -> Result<Evaluation> {
    if !b.is_consistent() {
        return Err(Error::Domain {
            detail: "box has an empty interval".into(),
        });
    }
    let bounds = assemble_bounds(u, b, model)?;
    let w = &model.k_plus * &bounds.g_up + &model.k_minus * &bounds.g_lo;
    let lhs = &model.l_plus * &bounds.psi_up + &model.l_minus * &bounds.psi_lo;
    let ineq_margin = &model.d - lhs;
    Ok(Evaluation {
        w,
        ineq_margin,
        bounds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    /// The self-map produced non-finite entries.
    Diverged,
    /// The box left the operational limits b_max.
    BoxExceeded,
    /// The box left the envelope validity window.
    ValidityExceeded,
    /// The fixed-point iteration did not settle.
    IterationCap,
    /// The PV reactive-limit condition failed at the settled box.
    InequalityViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertStatus {
    Certified,
    NotCertified(RefusalReason),
}

impl CertStatus {
    pub fn is_certified(&self) -> bool {
        matches!(self, CertStatus::Certified)
    }
}

/// State intervals implied by a certified box, in physical coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct Enclosure {
    /// Angle-difference interval per line, radians.
    pub angle_difference: Vec<(f64, f64)>,
    /// Magnitude interval per PQ bus, pu.
    pub pq_voltage: Vec<(f64, f64)>,
}

/// Outcome of a certification attempt.
///
/// Margins are signed so that nonnegative means satisfied:
/// `self_map_margin = b - w`, `ineq_margin = d - L-bounds`,
/// `box_margin = b_max - b`. They reflect the last box the engine could
/// evaluate and are empty only if that box never existed.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub status: CertStatus,
    pub b_star: BoxBounds,
    pub self_map_margin: DVector<f64>,
    pub ineq_margin: DVector<f64>,
    pub box_margin: DVector<f64>,
    pub iterations: usize,
    pub enclosure: Option<Enclosure>,
    /// Certification slack: conditions are accepted up to this tolerance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    /// Initial inflation of the degenerate base box.
    pub eps0: f64,
    /// Convergence threshold on the iterates.
    pub tol_conv: f64,
    /// Slack applied to every certification inequality.
    pub tol_cert: f64,
    pub max_iter: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            eps0: 1e-6,
            tol_conv: 1e-9,
            tol_cert: 1e-9,
            max_iter: 500,
        }
    }
}

/// Optional external source of candidate witness boxes, each verified by
/// [`check_at`]; lets a convex-solver backend tighten coverage without
/// touching the trust boundary.
pub trait WitnessProvider {
    fn propose(&self, u: &ControlVector, model: &RestrictionModel) -> Vec<BoxBounds>;
}

fn enclosure_of(model: &RestrictionModel, b: &BoxBounds) -> Enclosure {
    Enclosure {
        angle_difference: model
            .lines
            .iter()
            .enumerate()
            .map(|(l, line)| {
                (
                    b.phi_lb[l] + line.slack_offset,
                    b.phi_ub[l] + line.slack_offset,
                )
            })
            .collect(),
        pq_voltage: b
            .v_lb
            .iter()
            .zip(&b.v_ub)
            .map(|(&lo, &hi)| (lo, hi))
            .collect(),
    }
}

fn build_certificate(
    model: &RestrictionModel,
    status: CertStatus,
    b: DVector<f64>,
    eval: Option<&Evaluation>,
    iterations: usize,
    tol: f64,
) -> Certificate {
    let bounds = BoxBounds::unpack(&b, model.layout.n_lines, model.layout.n_pq);
    let (self_map_margin, ineq_margin) = match eval {
        Some(e) => (&b - &e.w, e.ineq_margin.clone()),
        None => (DVector::zeros(0), DVector::zeros(0)),
    };
    let enclosure = status.is_certified().then(|| enclosure_of(model, &bounds));
    Certificate {
        status,
        box_margin: &model.b_max - &b,
        b_star: bounds,
        self_map_margin,
        ineq_margin,
        iterations,
        enclosure,
        tolerance: tol,
    }
}

/// Verify the certification conditions at an externally supplied box,
/// without iterating.
pub fn check_at(u: &ControlVector, b: &BoxBounds, model: &RestrictionModel) -> Certificate {
    let tol = CertifyOptions::default().tol_cert;
    let packed = b.pack();
    match evaluate(u, b, model) {
        Err(_) => build_certificate(
            model,
            CertStatus::NotCertified(RefusalReason::ValidityExceeded),
            packed,
            None,
            0,
            tol,
        ),
        Ok(eval) => {
            let status = verdict(model, &packed, &eval, tol);
            build_certificate(model, status, packed, Some(&eval), 0, tol)
        }
    }
}

fn verdict(model: &RestrictionModel, b: &DVector<f64>, eval: &Evaluation, tol: f64) -> CertStatus {
    if !eval.w.iter().all(|v| v.is_finite()) {
        return CertStatus::NotCertified(RefusalReason::Diverged);
    }
    if eval.w.iter().zip(b.iter()).any(|(&w, &bi)| w > bi + tol) {
        return CertStatus::NotCertified(RefusalReason::IterationCap);
    }
    if b.iter()
        .zip(model.b_max.iter())
        .any(|(&bi, &bm)| bi > bm + tol)
    {
        return CertStatus::NotCertified(RefusalReason::BoxExceeded);
    }
    if eval.ineq_margin.iter().any(|&m| m < -tol) {
        return CertStatus::NotCertified(RefusalReason::InequalityViolated);
    }
    CertStatus::Certified
}

/// Certify a control vector by the monotone witness search.
pub fn certify(u: &ControlVector, model: &RestrictionModel, opts: &CertifyOptions) -> Certificate {
    certify_with(u, model, opts, None)
}

/// [`certify`] with an optional witness provider consulted before the
/// fixed-point search.
pub fn certify_with(
    u: &ControlVector,
    model: &RestrictionModel,
    opts: &CertifyOptions,
    provider: Option<&dyn WitnessProvider>,
) -> Certificate {
    if let Some(provider) = provider {
        for candidate in provider.propose(u, model) {
            let cert = check_at(u, &candidate, model);
            if cert.status.is_certified() {
                return cert;
            }
        }
    }

    let p = model.n_rows();
    let mut b = model.b_hat() + DVector::from_element(p, opts.eps0);
    let mut eval = match evaluate(
        u,
        &BoxBounds::unpack(&b, model.layout.n_lines, model.layout.n_pq),
        model,
    ) {
        Ok(e) => e,
        Err(_) => {
            // seed box already outside the validity window
            return build_certificate(
                model,
                CertStatus::NotCertified(RefusalReason::ValidityExceeded),
                b,
                None,
                0,
                opts.tol_cert,
            );
        }
    };

    for iter in 1..=opts.max_iter {
        if !eval.w.iter().all(|v| v.is_finite()) {
            return build_certificate(
                model,
                CertStatus::NotCertified(RefusalReason::Diverged),
                b,
                Some(&eval),
                iter,
                opts.tol_cert,
            );
        }
        let b_next = b.zip_map(&eval.w, f64::max);
        debug_assert!(b_next.iter().zip(b.iter()).all(|(&n, &o)| n >= o));
        let moved = (&b_next - &b).amax();

        if b_next
            .iter()
            .zip(model.b_max.iter())
            .any(|(&bi, &bm)| bi > bm + opts.tol_cert)
        {
            // margins reported at the exceeded box when it is still evaluable
            let bounds = BoxBounds::unpack(&b_next, model.layout.n_lines, model.layout.n_pq);
            let eval_next = evaluate(u, &bounds, model).ok();
            return build_certificate(
                model,
                CertStatus::NotCertified(RefusalReason::BoxExceeded),
                b_next,
                eval_next.as_ref().or(Some(&eval)),
                iter,
                opts.tol_cert,
            );
        }

        if moved < opts.tol_conv {
            // b itself is the witness: moved < tol means w(b) <= b + tol
            // componentwise, with every condition evaluated at the same box
            let status = verdict(model, &b, &eval, opts.tol_cert);
            return build_certificate(model, status, b, Some(&eval), iter, opts.tol_cert);
        }

        let bounds = BoxBounds::unpack(&b_next, model.layout.n_lines, model.layout.n_pq);
        match evaluate(u, &bounds, model) {
            Ok(e) => {
                b = b_next;
                eval = e;
            }
            Err(_) => {
                return build_certificate(
                    model,
                    CertStatus::NotCertified(RefusalReason::ValidityExceeded),
                    b,
                    Some(&eval),
                    iter,
                    opts.tol_cert,
                );
            }
        }
    }
    build_certificate(
        model,
        CertStatus::NotCertified(RefusalReason::IterationCap),
        b,
        Some(&eval),
        opts.max_iter,
        opts.tol_cert,
    )
}

/// Serializable view of a certificate: status, per-family margin summaries,
/// the witness box blocks, and the state enclosure.
#[derive(Debug, Serialize)]
pub struct CertificateJson {
    pub status: &'static str,
    pub reason: Option<RefusalReason>,
    pub iterations: usize,
    pub tolerance: f64,
    pub b_star: BStarJson,
    pub margins: MarginsJson,
    pub enclosure: Option<Enclosure>,
}

#[derive(Debug, Serialize)]
pub struct BStarJson {
    pub phi_upper: Vec<f64>,
    pub phi_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct MarginsJson {
    pub self_map: Option<MarginSummary>,
    pub inequality: Option<MarginSummary>,
    pub box_limits: Option<MarginSummary>,
}

/// Worst (minimum) margin of a family and where it occurs.
#[derive(Debug, Serialize)]
pub struct MarginSummary {
    pub min: f64,
    pub argmin: usize,
}

fn summarize(v: &DVector<f64>) -> Option<MarginSummary> {
    if v.is_empty() {
        return None;
    }
    let (argmin, min) =
        v.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(ai, am), (i, &m)| {
                if m < am {
                    (i, m)
                } else {
                    (ai, am)
                }
            },
        );
    Some(MarginSummary { min, argmin })
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.status.is_certified()
    }

    pub fn to_json(&self) -> CertificateJson {
        let (status, reason) = match self.status {
            CertStatus::Certified => ("certified", None),
            CertStatus::NotCertified(r) => ("not_certified", Some(r)),
        };
        CertificateJson {
            status,
            reason,
            iterations: self.iterations,
            tolerance: self.tolerance,
            b_star: BStarJson {
                phi_upper: self.b_star.phi_ub.clone(),
                phi_lower: self.b_star.phi_lb.clone(),
                v_upper: self.b_star.v_ub.clone(),
                v_lower: self.b_star.v_lb.clone(),
            },
            margins: MarginsJson {
                self_map: summarize(&self.self_map_margin),
                inequality: summarize(&self.ineq_margin),
                box_limits: summarize(&self.box_margin),
            },
            enclosure: self.enclosure.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("certificate serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_model_at_base, ModelOptions, RestrictionModel};
    use crate::matpower::parse_case;
    use crate::network::IndexMaps;
    use crate::powerflow::{flat_start, nr_solve};
    use crate::testing::TWO_BUS;
    use approx::assert_relative_eq;

    fn two_bus_model() -> (RestrictionModel, ControlVector) {
        let case = parse_case(TWO_BUS).unwrap();
        let (model, _) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
        let u0 = model.base_u.clone();
        (model, u0)
    }

    #[test]
    fn pack_round_trips() {
        let b = BoxBounds {
            phi_ub: vec![0.1, 0.3],
            phi_lb: vec![-0.2, 0.05],
            v_ub: vec![1.04],
            v_lb: vec![0.97],
        };
        let packed = b.pack();
        assert_eq!(packed.len(), 6);
        let again = BoxBounds::unpack(&packed, 2, 1);
        assert_eq!(b, again);
    }

    proptest::proptest! {
        #[test]
        fn pack_round_trips_exactly(
            phi in proptest::collection::vec(-3.0_f64..3.0, 1..6),
            v in proptest::collection::vec(0.5_f64..1.5, 0..4),
            widen in 0.0_f64..0.5,
        ) {
            let b = BoxBounds {
                phi_ub: phi.iter().map(|&x| x + widen).collect(),
                phi_lb: phi.clone(),
                v_ub: v.iter().map(|&x| x + widen).collect(),
                v_lb: v.clone(),
            };
            let again = BoxBounds::unpack(&b.pack(), b.phi_ub.len(), b.v_ub.len());
            proptest::prop_assert_eq!(&b, &again);
            proptest::prop_assert!(b.is_consistent());
        }
    }

    #[test]
    fn degenerate_box_satisfies_remark5_identity() {
        let (model, u0) = two_bus_model();
        let b_hat = model.b_hat();
        let b = BoxBounds::degenerate(&model);
        let w = self_map(&u0, &b, &model).unwrap();
        // w(u0, b_hat) = K g(x0, u0) = b_hat exactly
        assert_relative_eq!((w - b_hat).amax(), 0.0, epsilon = 1e-10);

        let margin = ineq_check(&u0, &b, &model).unwrap();
        assert!(margin.iter().all(|&m| m >= -1e-12));

        let cert = check_at(&u0, &b, &model);
        assert!(cert.is_certified(), "{:?}", cert.status);
    }

    #[test]
    fn base_point_certifies() {
        let (model, u0) = two_bus_model();
        let cert = certify(&u0, &model, &CertifyOptions::default());
        assert!(cert.is_certified(), "{:?}", cert.status);
        assert!(cert.iterations <= 3);
        let b_hat = model.b_hat();
        let b_star = cert.b_star.pack();
        // the witness stays within eps0 + tol_conv of the degenerate box
        assert!((b_star - b_hat).amax() <= 1e-6 + 1e-9);
        let enc = cert.enclosure.expect("certified carries enclosure");
        assert_eq!(enc.angle_difference.len(), 1);
        assert_eq!(enc.pq_voltage.len(), 1);
    }

    #[test]
    fn moderate_load_certifies_and_infeasible_load_refused() {
        let (model, u0) = two_bus_model();
        let opts = CertifyOptions::default();

        let cert = certify(&u0.with_p_delta(0, -0.3), &model, &opts);
        assert!(cert.is_certified(), "{:?}", cert.status);
        // re-verify through the one-shot checker
        let again = check_at(&u0.with_p_delta(0, -0.3), &cert.b_star, &model);
        assert!(again.is_certified());

        for p in [-6.0, -8.0, 6.0, 10.0] {
            let cert = certify(&u0.with_p_delta(0, p), &model, &opts);
            assert!(!cert.is_certified(), "p = {p} must be refused");
        }
    }

    #[test]
    fn self_map_is_monotone_in_b() {
        let (model, u0) = two_bus_model();
        let u = u0.with_p_delta(0, -0.2);
        let mut smaller = BoxBounds::degenerate(&model);
        let mut larger = smaller.clone();
        smaller.phi_ub[0] += 0.05;
        smaller.phi_lb[0] -= 0.02;
        smaller.v_ub[0] += 0.01;
        smaller.v_lb[0] -= 0.03;
        larger.phi_ub[0] += 0.15;
        larger.phi_lb[0] -= 0.10;
        larger.v_ub[0] += 0.04;
        larger.v_lb[0] -= 0.05;
        let w_small = self_map(&u, &smaller, &model).unwrap();
        let w_large = self_map(&u, &larger, &model).unwrap();
        assert!(w_small
            .iter()
            .zip(w_large.iter())
            .all(|(&a, &b)| a <= b + 1e-12));
    }

    #[test]
    fn certificate_json_shape() {
        let (model, u0) = two_bus_model();
        let cert = certify(&u0, &model, &CertifyOptions::default());
        let json = serde_json::to_value(cert.to_json()).unwrap();
        assert_eq!(json["status"], "certified");
        assert!(json["reason"].is_null());
        assert!(json["margins"]["self_map"]["min"].is_number());
        assert!(json["b_star"]["phi_upper"].is_array());
        assert!(json["enclosure"]["pq_voltage"].is_array());
    }

    #[test]
    fn no_pv_bus_gives_empty_inequality_margin() {
        let (model, u0) = two_bus_model();
        assert_eq!(model.d.len(), 0);
        let margin = ineq_check(&u0, &BoxBounds::degenerate(&model), &model).unwrap();
        assert!(margin.is_empty());
    }

    #[test]
    fn witness_provider_is_consulted_first() {
        struct Fixed(BoxBounds);
        impl WitnessProvider for Fixed {
            fn propose(&self, _: &ControlVector, _: &RestrictionModel) -> Vec<BoxBounds> {
                vec![self.0.clone()]
            }
        }
        let (model, u0) = two_bus_model();
        let mut seed = BoxBounds::degenerate(&model);
        seed.phi_ub[0] += 0.05;
        seed.phi_lb[0] -= 0.05;
        seed.v_ub[0] += 0.002;
        seed.v_lb[0] -= 0.002;
        let provider = Fixed(seed.clone());
        let cert = certify_with(&u0, &model, &CertifyOptions::default(), Some(&provider));
        assert!(cert.is_certified());
        assert_eq!(cert.iterations, 0, "provider witness accepted directly");
        assert_eq!(cert.b_star, seed);
    }

    /// Sampling oracle for the self-map upper bound: for states in the box,
    /// K g(x, u) stays below w.
    #[test]
    fn self_map_dominates_sampled_residuals() {
        use rand::{Rng, SeedableRng};
        let case = parse_case(TWO_BUS).unwrap();
        let (model, _adm) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
        let u = model.base_u.with_p_delta(0, -0.4);
        let mut b = BoxBounds::degenerate(&model);
        b.phi_ub[0] += 0.12;
        b.phi_lb[0] -= 0.12;
        b.v_ub[0] += 0.04;
        b.v_lb[0] -= 0.04;
        let w = self_map(&u, &b, &model).unwrap();
        let idx = IndexMaps::new(&case);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut state = model.base_state.clone();
            let phi = rng.gen_range(b.phi_lb[0]..=b.phi_ub[0]);
            state.va[1] = model.base_state.va[0] - phi;
            state.vm[1] = rng.gen_range(b.v_lb[0]..=b.v_ub[0]);
            let g = crate::basis::eval_g(&state, &u, &model);
            let kg = &model.k_mat * &g;
            assert!(
                kg.iter().zip(w.iter()).all(|(&a, &b)| a <= b + 1e-9),
                "K g exceeded w"
            );
        }
        let _ = idx;
    }

    #[test]
    fn averaged_witness_of_certified_pair_passes() {
        let (model, u0) = two_bus_model();
        let opts = CertifyOptions::default();
        let (u1, u2) = (u0.with_p_delta(0, -0.25), u0.with_p_delta(0, 0.2));
        let (c1, c2) = (certify(&u1, &model, &opts), certify(&u2, &model, &opts));
        assert!(c1.is_certified() && c2.is_certified());
        let mut mid_u = u0.clone();
        mid_u.p_ns[0] = 0.5 * (u1.p_ns[0] + u2.p_ns[0]);
        let mid_b = BoxBounds::midpoint(&c1.b_star, &c2.b_star);
        let cert = check_at(&mid_u, &mid_b, &model);
        assert!(cert.is_certified(), "{:?}", cert.status);
    }

    #[test]
    fn nr_solution_lies_in_certified_enclosure() {
        let case = parse_case(TWO_BUS).unwrap();
        let (model, adm) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
        let idx = IndexMaps::new(&case);
        let u = model.base_u.with_p_delta(0, -0.35);
        let cert = certify(&u, &model, &CertifyOptions::default());
        assert!(cert.is_certified());
        let sol = nr_solve(&adm, &idx, &u, &flat_start(&idx, &u), 1e-10, 50).unwrap();
        // A x <= b* + tol, checked through the typed box
        let phi = sol.va[0] - sol.va[1];
        assert!(phi <= cert.b_star.phi_ub[0] + 1e-6);
        assert!(phi >= cert.b_star.phi_lb[0] - 1e-6);
        assert!(sol.vm[1] <= cert.b_star.v_ub[0] + 1e-6);
        assert!(sol.vm[1] >= cert.b_star.v_lb[0] - 1e-6);
    }
}
