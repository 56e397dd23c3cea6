//! Seeded sampling-oracle suites: envelope soundness, interval-bound
//! soundness, Jacobian consistency, and the algebraic reconstruction
//! identities. Shared by the `selftest` CLI subcommand and the acceptance
//! tests; every oracle here evaluates the underlying mathematics directly
//! and never reuses the bound or Jacobian code it checks.

use crate::basis::{
    basis_jacobian, build_model_at_base, eval_g, eval_psi, phase_adjust, reconstruct_injections,
    LineBase, ModelOptions,
};
use crate::envelopes::{
    env_bilinear, env_quadratic, env_trig, interval_bounds_bus, interval_bounds_line, LineIntervals,
};
use crate::matpower::NetworkCase;
use crate::network::{build_admittance, IndexMaps};
use crate::powerflow::{injections, mismatch, pf_jacobian, PolarState};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        SuiteResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

const SOUNDNESS_SLACK: f64 = 1e-9;

/// Sampling check of the three scalar envelope families.
pub fn envelope_scalar_suites(seed: u64, samples: usize) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut violations = 0usize;
    for _ in 0..samples {
        let (x, x0) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (up, lo) = env_quadratic(x, x0);
        if x * x > up + SOUNDNESS_SLACK || x * x < lo - SOUNDNESS_SLACK {
            violations += 1;
        }
    }
    out.push(SuiteResult::new(
        "envelope quadratic",
        violations == 0,
        format!("{samples} samples, {violations} violations"),
    ));

    let mut violations = 0usize;
    for _ in 0..samples {
        let x = rng.gen_range(-2.0..2.0);
        let y = rng.gen_range(-2.0..2.0);
        let x0 = rng.gen_range(-2.0..2.0);
        let y0 = rng.gen_range(-2.0..2.0);
        let (up, lo) = env_bilinear(x, y, x0, y0);
        if x * y > up + SOUNDNESS_SLACK || x * y < lo - SOUNDNESS_SLACK {
            violations += 1;
        }
    }
    out.push(SuiteResult::new(
        "envelope bilinear",
        violations == 0,
        format!("{samples} samples, {violations} violations"),
    ));

    let mut violations = 0usize;
    for _ in 0..samples {
        let dp = rng.gen_range(1e-3..std::f64::consts::PI);
        let dm = rng.gen_range(-std::f64::consts::PI..-1e-3);
        let theta = rng.gen_range(dm..dp);
        let e = env_trig(theta, dp, dm).expect("inside the validity window");
        let (s, c) = theta.sin_cos();
        if s > e.sin_upper + SOUNDNESS_SLACK
            || s < e.sin_lower - SOUNDNESS_SLACK
            || c > e.cos_upper + SOUNDNESS_SLACK
            || c < e.cos_lower - SOUNDNESS_SLACK
        {
            violations += 1;
        }
    }
    out.push(SuiteResult::new(
        "envelope trigonometric",
        violations == 0,
        format!("{samples} samples, {violations} violations"),
    ));
    out
}

/// Brute-force polytope sampling of every per-line and per-bus interval
/// bound on random line configurations.
pub fn interval_bound_suite(seed: u64, configurations: usize, samples: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..configurations {
        let f_free = rng.gen_bool(0.7);
        let t_free = rng.gen_bool(0.7);
        let line = LineBase {
            phi0_x: rng.gen_range(-0.4..0.4),
            slack_offset: 0.0,
            v0f: rng.gen_range(0.9..1.1),
            v0t: rng.gen_range(0.9..1.1),
            delta_plus: rng.gen_range(0.2..std::f64::consts::PI - 1e-6),
            delta_minus: rng.gen_range(-(std::f64::consts::PI - 1e-6)..-0.2),
            f_free,
            t_free,
            f_pq: None,
            t_pq: None,
        };
        let tl = rng.gen_range(line.delta_minus..=0.0);
        let tu = rng.gen_range(0.0..=line.delta_plus);
        let sf = if f_free { rng.gen_range(0.0..0.2) } else { 0.0 };
        let st = if t_free { rng.gen_range(0.0..0.2) } else { 0.0 };
        let li = LineIntervals {
            phi_lb: line.phi0_x + tl,
            phi_ub: line.phi0_x + tu,
            vf_lb: line.v0f - sf,
            vf_ub: line.v0f + sf,
            vt_lb: line.v0t - st,
            vt_ub: line.v0t + st,
        };
        let b = interval_bounds_line(&li, &line).expect("intervals inside validity");
        let bus_f = interval_bounds_bus(li.vf_lb, li.vf_ub, line.v0f, f_free);

        for _ in 0..samples {
            let phi = rng.gen_range(li.phi_lb..=li.phi_ub);
            let vf = rng.gen_range(li.vf_lb..=li.vf_ub);
            let vt = rng.gen_range(li.vt_lb..=li.vt_ub);
            let t = phi - line.phi0_x;
            let vv0 = line.v0f * line.v0t;
            let (c_val, s_val) = {
                let (s, c) = t.sin_cos();
                (vf * vt * c, vf * vt * s)
            };
            let g_cos = t.cos() - 1.0;
            let g_sin = t.sin();
            let g_vv = vf * vt - vv0;
            let mut g_c = c_val;
            if line.f_free {
                g_c -= line.v0t * vf;
            }
            if line.t_free {
                g_c -= line.v0f * vt;
            }
            let g_s = s_val - vv0 * phi;
            let sub = if f_free { 2.0 * line.v0f } else { 0.0 };
            let g_q = vf * vf - sub * vf;

            let sound = g_cos <= b.g_cos_up + SOUNDNESS_SLACK
                && g_cos >= b.g_cos_lo - SOUNDNESS_SLACK
                && g_sin <= b.g_sin_up + SOUNDNESS_SLACK
                && g_sin >= b.g_sin_lo - SOUNDNESS_SLACK
                && g_vv <= b.g_vv_up + SOUNDNESS_SLACK
                && g_vv >= b.g_vv_lo - SOUNDNESS_SLACK
                && g_c <= b.g_c_up + SOUNDNESS_SLACK
                && g_c >= b.g_c_lo - SOUNDNESS_SLACK
                && g_s <= b.g_s_up + SOUNDNESS_SLACK
                && g_s >= b.g_s_lo - SOUNDNESS_SLACK
                && c_val <= b.psi_c_up + SOUNDNESS_SLACK
                && c_val >= b.psi_c_lo - SOUNDNESS_SLACK
                && s_val <= b.psi_s_up + SOUNDNESS_SLACK
                && s_val >= b.psi_s_lo - SOUNDNESS_SLACK
                && vf * vf <= bus_f.psi_q_up + SOUNDNESS_SLACK
                && vf * vf >= bus_f.psi_q_lo - SOUNDNESS_SLACK
                && g_q <= bus_f.g_q_up + SOUNDNESS_SLACK
                && g_q >= bus_f.g_q_lo - SOUNDNESS_SLACK;
            if !sound {
                violations += 1;
            }
            checked += 1;
        }
    }
    SuiteResult::new(
        "interval bounds",
        violations == 0,
        format!("{configurations} configurations x {samples} polytope samples = {checked}, {violations} violations"),
    )
}

fn random_state(
    rng: &mut ChaCha8Rng,
    idx: &IndexMaps,
    base: &PolarState,
    spread: f64,
) -> PolarState {
    let mut s = base.clone();
    for &i in &idx.ns {
        s.va[i] += rng.gen_range(-spread..spread);
    }
    for &i in &idx.pq {
        s.vm[i] += rng.gen_range(-spread..spread);
    }
    s
}

/// Analytic Jacobian vs central finite differences at random states near
/// the flat profile.
pub fn jacobian_suite(case: &NetworkCase, seed: u64, states: usize) -> SuiteResult {
    let adm = build_admittance(case).expect("valid case");
    let idx = IndexMaps::new(case);
    let u = crate::powerflow::ControlVector::base_point(case, &idx);
    let flat = crate::powerflow::flat_start(&idx, &u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let state = random_state(&mut rng, &idx, &flat, 0.05);
        let analytic = pf_jacobian(&state, &adm, &idx);
        let n = idx.n_state();
        let n_ns = idx.ns.len();
        let mut fd = nalgebra::DMatrix::zeros(n, n);
        for c in 0..n {
            let mut plus = state.clone();
            let mut minus = state.clone();
            if c < n_ns {
                plus.va[idx.ns[c]] += h;
                minus.va[idx.ns[c]] -= h;
            } else {
                plus.vm[idx.pq[c - n_ns]] += h;
                minus.vm[idx.pq[c - n_ns]] -= h;
            }
            let fp = mismatch(&plus, &adm, &idx, &u);
            let fm = mismatch(&minus, &adm, &idx, &u);
            for r in 0..n {
                fd[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let rel = (&analytic - &fd).amax() / analytic.amax().max(1.0);
        worst = worst.max(rel);
    }
    SuiteResult::new(
        "jacobian finite differences",
        worst <= 1e-5,
        format!("{states} states, worst relative error {worst:.3e} (limit 1e-5)"),
    )
}

/// The two reconstruction identities, checked at random states around the
/// solved base point: the phase-adjusted expansion equals the direct power
/// flow equations, and the residual decomposition
/// `f = J_f0 x + M g` reproduces the mismatch.
pub fn identity_suites(case: &NetworkCase, seed: u64, states: usize) -> Vec<SuiteResult> {
    let mut out = Vec::new();
    let (model, adm) = match build_model_at_base(case, &ModelOptions::default()) {
        Ok(pair) => pair,
        Err(e) => {
            out.push(SuiteResult::new(
                "identities",
                false,
                format!("model build failed: {e}"),
            ));
            return out;
        }
    };
    let idx = &model.idx;
    let base = &model.base_state;
    let pa = phase_adjust(&adm, idx, base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555aaaa);

    let mut worst_recon: f64 = 0.0;
    let mut worst_eq6: f64 = 0.0;
    let j_f0 = &model.m_mat * basis_jacobian(base, idx);
    let n_ns = idx.ns.len();
    for k in 0..states {
        let state = random_state(&mut rng, idx, base, 0.15);
        let (p_direct, q_direct) = injections(&state, &adm);
        let (p_rec, q_rec) = reconstruct_injections(&pa, idx, base, &state);
        worst_recon = worst_recon
            .max((p_direct - p_rec).amax())
            .max((q_direct - q_rec).amax());

        // identity holds for any injection parameters; perturb them too
        let mut u = model.base_u.clone();
        if !u.p_ns.is_empty() && k % 2 == 0 {
            let j = k % u.p_ns.len();
            u.p_ns[j] += rng.gen_range(-0.5..0.5);
        }
        let mut x = DVector::zeros(idx.n_state());
        for (c, &i) in idx.ns.iter().enumerate() {
            x[c] = state.va[i];
        }
        for (c, &i) in idx.pq.iter().enumerate() {
            x[n_ns + c] = state.vm[i];
        }
        let g = eval_g(&state, &u, &model);
        let lhs = &j_f0 * &x + &model.m_mat * &g;
        let rhs = mismatch(&state, &adm, idx, &u);
        worst_eq6 = worst_eq6.max((lhs - &rhs).amax());

        // M psi must agree with the mismatch as well
        let psi = eval_psi(&state, &u, idx, base);
        let direct = &model.m_mat * &psi;
        worst_eq6 = worst_eq6.max((direct - rhs).amax());
    }
    out.push(SuiteResult::new(
        "phase-adjusted reconstruction",
        worst_recon <= 1e-10,
        format!("{states} states, max error {worst_recon:.3e} (limit 1e-10)"),
    ));
    out.push(SuiteResult::new(
        "residual decomposition",
        worst_eq6 <= 1e-10,
        format!("{states} states, max error {worst_eq6:.3e} (limit 1e-10)"),
    ));
    out
}

/// Full suite at the acceptance sizes.
pub fn run_selftest(case: &NetworkCase, seed: u64) -> SelftestReport {
    let mut suites = envelope_scalar_suites(seed, 100_000);
    suites.push(interval_bound_suite(seed, 50, 10_000));
    suites.push(jacobian_suite(case, seed, 100));
    suites.extend(identity_suites(case, seed, 100));
    SelftestReport { seed, suites }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::parse_case;
    use crate::testing::TWO_BUS;

    #[test]
    fn small_selftest_passes_on_two_bus() {
        let case = parse_case(TWO_BUS).unwrap();
        let mut suites = envelope_scalar_suites(1, 2000);
        suites.push(interval_bound_suite(1, 5, 500));
        suites.push(jacobian_suite(&case, 1, 10));
        suites.extend(identity_suites(&case, 1, 20));
        for s in &suites {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = envelope_scalar_suites(7, 500);
        let b = envelope_scalar_suites(7, 500);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.detail, y.detail);
        }
    }
}
