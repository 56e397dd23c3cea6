//! Properties of the assembled bound vectors over a real model: elementwise
//! soundness against sampled in-box states, monotone nesting as the box
//! grows, and the one-shot checker's refusal behavior at the full
//! operational box.

use pfcert_core::basis::{build_model_at_base, eval_g, eval_psi, ModelOptions, RestrictionModel};
use pfcert_core::envelopes::assemble_bounds;
use pfcert_core::restriction::{check_at, BoxBounds};
use pfcert_core::testing::load_case;
use pfcert_core::{IndexMaps, PolarState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inflate(model: &RestrictionModel, d_phi: f64, d_v: f64) -> BoxBounds {
    let mut b = BoxBounds::degenerate(model);
    for v in &mut b.phi_ub {
        *v += d_phi;
    }
    for v in &mut b.phi_lb {
        *v -= d_phi;
    }
    for v in &mut b.v_ub {
        *v += d_v;
    }
    for v in &mut b.v_lb {
        *v -= d_v;
    }
    b
}

/// Draw a state whose free coordinates lie inside the box. Angle boxes
/// constrain differences, so angles are drawn as small perturbations and
/// rejected if any line leaves its interval.
fn sample_state_in_box(
    rng: &mut ChaCha8Rng,
    model: &RestrictionModel,
    idx: &IndexMaps,
    b: &BoxBounds,
    spread: f64,
) -> PolarState {
    'outer: loop {
        let mut s = model.base_state.clone();
        for &i in &idx.ns {
            s.va[i] += rng.gen_range(-spread..spread);
        }
        for (k, &i) in idx.pq.iter().enumerate() {
            s.vm[i] = rng.gen_range(b.v_lb[k]..=b.v_ub[k]);
        }
        for (l, &(f, t)) in idx.lines.iter().enumerate() {
            let phi_x = s.va[f] - s.va[t] - model.lines[l].slack_offset;
            if phi_x < b.phi_lb[l] || phi_x > b.phi_ub[l] {
                continue 'outer;
            }
        }
        return s;
    }
}

#[test]
fn assembled_bounds_enclose_sampled_states_elementwise() {
    let case = load_case("case9.m");
    let (model, _) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
    let idx = IndexMaps::new(&case);
    let u = model.base_u.with_p_delta(0, -0.2);
    let b = inflate(&model, 0.04, 0.01);
    let bounds = assemble_bounds(&u, &b, &model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let s = sample_state_in_box(&mut rng, &model, &idx, &b, 0.05);
        let g = eval_g(&s, &u, &model);
        let psi = eval_psi(&s, &u, &idx, &model.base_state);
        for c in 0..model.layout.len() {
            assert!(
                g[c] <= bounds.g_up[c] + 1e-9 && g[c] >= bounds.g_lo[c] - 1e-9,
                "g[{c}] = {} outside [{}, {}]",
                g[c],
                bounds.g_lo[c],
                bounds.g_up[c]
            );
            assert!(
                psi[c] <= bounds.psi_up[c] + 1e-9 && psi[c] >= bounds.psi_lo[c] - 1e-9,
                "psi[{c}] = {} outside [{}, {}]",
                psi[c],
                bounds.psi_lo[c],
                bounds.psi_up[c]
            );
        }
    }
}

#[test]
fn bounds_nest_as_the_box_grows() {
    let case = load_case("case9.m");
    let (model, _) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
    let u = model.base_u.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let d_phi: f64 = rng.gen_range(0.0..0.3);
        let d_v: f64 = rng.gen_range(0.0..0.04);
        let grow_phi: f64 = rng.gen_range(0.0..0.3);
        let grow_v: f64 = rng.gen_range(0.0..0.04);
        let small = inflate(&model, d_phi, d_v);
        let large = inflate(&model, d_phi + grow_phi, d_v + grow_v);
        let (Ok(bs), Ok(bl)) = (
            assemble_bounds(&u, &small, &model),
            assemble_bounds(&u, &large, &model),
        ) else {
            continue; // grown box left the validity window
        };
        for c in 0..model.layout.len() {
            assert!(bs.g_up[c] <= bl.g_up[c] + 1e-12, "g_up[{c}] not nested");
            assert!(bs.g_lo[c] >= bl.g_lo[c] - 1e-12, "g_lo[{c}] not nested");
            assert!(
                bs.psi_up[c] <= bl.psi_up[c] + 1e-12,
                "psi_up[{c}] not nested"
            );
            assert!(
                bs.psi_lo[c] >= bl.psi_lo[c] - 1e-12,
                "psi_lo[{c}] not nested"
            );
        }
    }
}

/// At the full operational box the envelopes are typically too loose to
/// certify; whatever the verdict, a certified answer must be backed by the
/// reactive condition holding at every sampled state in the box.
#[test]
fn full_box_check_is_refused_or_backed_by_samples() {
    let case = load_case("case9.m");
    let (model0, _) = build_model_at_base(&case, &ModelOptions::default()).unwrap();
    let vm: Vec<f64> = model0.base_state.vm.iter().cloned().collect();
    let scaled = case.scale_voltage_limits(0.01, Some(&vm)).unwrap();
    let (model, _) = build_model_at_base(&scaled, &ModelOptions::default()).unwrap();
    let idx = IndexMaps::new(&scaled);
    let b_max = BoxBounds::unpack(&model.b_max, model.layout.n_lines, model.layout.n_pq);
    let cert = check_at(&model.base_u, &b_max, &model);
    if cert.is_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let s = sample_state_in_box(&mut rng, &model, &idx, &b_max, 0.4);
            let psi = eval_psi(&s, &model.base_u, &idx, &model.base_state);
            let lhs = &model.l_mat * &psi;
            for (r, &v) in lhs.iter().enumerate() {
                assert!(
                    v <= model.d[r] + 1e-9,
                    "certified full box hides a violation"
                );
            }
        }
    }
}
