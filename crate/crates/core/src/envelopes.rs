//! Scalar concave envelopes for the quadratic, bilinear, and trigonometric
//! building blocks, and the per-line / per-bus interval bounds obtained by
//! evaluating them at polytope vertices.
//!
//! Every bound here is a pointwise max (upper) or min (lower) of convex
//! (resp. concave) quadratics of the box parameter, which gives the three
//! properties the certification engine leans on: soundness over the box,
//! tightness when the box degenerates to the base point, and monotone
//! nesting as the box grows.

use crate::basis::{LineBase, RestrictionModel};
use crate::error::{Error, Result};
use crate::powerflow::ControlVector;
use crate::restriction::BoxBounds;
use nalgebra::DVector;

/// Concave envelope of x^2 around x0: the function itself above, its
/// tangent at the base below.
pub fn env_quadratic(x: f64, x0: f64) -> (f64, f64) {
    (x * x, 2.0 * x0 * x - x0 * x0)
}

/// Concave envelope of x*y around (x0, y0) with unit scaling.
pub fn env_bilinear(x: f64, y: f64, x0: f64, y0: f64) -> (f64, f64) {
    let (dx, dy) = (x - x0, y - y0);
    let linear = x0 * y + x * y0 - x0 * y0;
    let upper = 0.25 * (dx + dy) * (dx + dy) + linear;
    let lower = -0.25 * (dx - dy) * (dx - dy) + linear;
    (upper, lower)
}

/// Quadratic envelopes of sine and cosine around zero.
#[derive(Debug, Clone, Copy)]
pub struct TrigEnvelope {
    pub sin_upper: f64,
    pub sin_lower: f64,
    pub cos_upper: f64,
    pub cos_lower: f64,
}

/// Curvature coefficient of the sine under-estimator for a parameter in
/// (0, pi]: `sin t >= t + c t^2` for `t <= delta`.
pub fn sin_curvature(delta: f64) -> f64 {
    (delta.sin() - delta) / (delta * delta)
}

const VALIDITY_SLACK: f64 = 1e-12;

/// Envelope of sin and cos at angle `theta`, with curvature parameters
/// `delta_plus` in (0, pi] and `delta_minus` in [-pi, 0). The sine bounds
/// are valid only for `delta_minus <= theta <= delta_plus`.
pub fn env_trig(theta: f64, delta_plus: f64, delta_minus: f64) -> Result<TrigEnvelope> {
    if !(delta_plus > 0.0 && delta_plus <= std::f64::consts::PI) {
        return Err(Error::Domain {
            detail: format!("delta_plus {delta_plus} outside (0, pi]"),
        });
    }
    if !(-std::f64::consts::PI..0.0).contains(&delta_minus) {
        return Err(Error::Domain {
            detail: format!("delta_minus {delta_minus} outside [-pi, 0)"),
        });
    }
    if theta > delta_plus + VALIDITY_SLACK || theta < delta_minus - VALIDITY_SLACK {
        return Err(Error::Domain {
            detail: format!("theta {theta} outside [{delta_minus}, {delta_plus}]"),
        });
    }
    Ok(TrigEnvelope {
        sin_upper: theta + sin_curvature(delta_minus) * theta * theta,
        sin_lower: theta + sin_curvature(delta_plus) * theta * theta,
        cos_upper: 1.0,
        cos_lower: 1.0 - 0.5 * theta * theta,
    })
}

/// Per-line intervals of the boxed quantities: the angle difference (with
/// any slack contribution removed, matching the polytope rows) and the two
/// end magnitudes. Fixed-voltage ends carry degenerate point intervals.
#[derive(Debug, Clone, Copy)]
pub struct LineIntervals {
    pub phi_lb: f64,
    pub phi_ub: f64,
    pub vf_lb: f64,
    pub vf_ub: f64,
    pub vt_lb: f64,
    pub vt_ub: f64,
}

/// Interval bounds of every per-line nonlinearity: residual bounds for the
/// cosine, sine, and bilinear pieces and for the composite C and S rows,
/// plus value bounds of the C and S basis entries.
#[derive(Debug, Clone, Copy)]
pub struct LineBounds {
    pub g_cos_up: f64,
    pub g_cos_lo: f64,
    pub g_sin_up: f64,
    pub g_sin_lo: f64,
    pub g_vv_up: f64,
    pub g_vv_lo: f64,
    pub g_c_up: f64,
    pub g_c_lo: f64,
    pub g_s_up: f64,
    pub g_s_lo: f64,
    pub psi_c_up: f64,
    pub psi_c_lo: f64,
    pub psi_s_up: f64,
    pub psi_s_lo: f64,
}

/// Vertex-traced interval bounds for one line.
pub fn interval_bounds_line(li: &LineIntervals, line: &LineBase) -> Result<LineBounds> {
    if li.phi_lb > li.phi_ub + VALIDITY_SLACK
        || li.vf_lb > li.vf_ub + VALIDITY_SLACK
        || li.vt_lb > li.vt_ub + VALIDITY_SLACK
    {
        return Err(Error::Domain {
            detail: "empty line interval".into(),
        });
    }
    if li.vf_lb < 0.0 || li.vt_lb < 0.0 {
        return Err(Error::Domain {
            detail: "magnitude interval must stay nonnegative".into(),
        });
    }
    let tl = li.phi_lb - line.phi0_x;
    let tu = li.phi_ub - line.phi0_x;
    if tu > line.delta_plus + VALIDITY_SLACK || tl < line.delta_minus - VALIDITY_SLACK {
        return Err(Error::Domain {
            detail: format!(
                "angle interval [{tl:.6}, {tu:.6}] leaves the envelope window [{:.6}, {:.6}]",
                line.delta_minus, line.delta_plus
            ),
        });
    }

    // cosine residual cos(t) - 1: zero above, the quadratic minorant below
    let g_cos_up = 0.0;
    let g_cos_lo = -0.5 * (tl * tl).max(tu * tu);

    // sine residual sin(t): quadratic over/under-estimators at the angle
    // vertices
    let c_over = sin_curvature(line.delta_minus);
    let c_under = sin_curvature(line.delta_plus);
    let over = |t: f64| t + c_over * t * t;
    let under = |t: f64| t + c_under * t * t;
    let g_sin_up = over(tl).max(over(tu));
    let g_sin_lo = under(tl).min(under(tu));

    // bilinear residual v^f v^t - v0^f v0^t over the four magnitude vertices
    let vv0 = line.v0f * line.v0t;
    let vertices = [
        (li.vf_lb, li.vt_lb),
        (li.vf_lb, li.vt_ub),
        (li.vf_ub, li.vt_lb),
        (li.vf_ub, li.vt_ub),
    ];
    let mut bil_up = [0.0; 4];
    let mut bil_lo = [0.0; 4];
    let mut lin = [0.0; 4];
    for (j, &(vf, vt)) in vertices.iter().enumerate() {
        let (df, dt) = (vf - line.v0f, vt - line.v0t);
        bil_up[j] = 0.25 * (df + dt) * (df + dt) + line.v0f * dt + df * line.v0t;
        bil_lo[j] = -0.25 * (df - dt) * (df - dt) + line.v0f * dt + df * line.v0t;
        if line.f_free {
            lin[j] -= line.v0t * vf;
        }
        if line.t_free {
            lin[j] -= line.v0f * vt;
        }
    }
    let g_vv_up = bil_up.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let g_vv_lo = bil_lo.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let lin_min = lin.iter().fold(f64::INFINITY, |m, &v| m.min(v));

    // composite C, upper side: cos <= 1 collapses the angle dependence, and
    // the per-vertex bilinear over-estimator shares the vertex with the
    // linear terms so the bound stays tight at the base point
    let psi_c_up = g_vv_up + vv0;
    let mut g_c_up = f64::NEG_INFINITY;
    for j in 0..4 {
        g_c_up = g_c_up.max(bil_up[j] + vv0 + lin[j]);
    }

    // composite C, lower side. The cascaded bilinear under-estimator in the
    // (vv, cos) residuals is nondecreasing in both slots on the usual
    // operating range; that makes the per-vertex substitution (magnitude
    // vertex j shared with the linear terms, angle vertex t driving the
    // cosine minorant) jointly concave, with the minimum at vertices. When
    // the monotonicity guard fails the evaluation falls back to the
    // decoupled interval form, which is sound unconditionally.
    let couple_c = 0.5 * g_vv_lo + vv0 >= 0.0 && g_vv_up - g_cos_lo <= 2.0;
    let (psi_c_lo, g_c_lo) = if couple_c {
        let mut p_lo = f64::INFINITY;
        let mut g_lo = f64::INFINITY;
        for j in 0..4 {
            for &t in &[tl, tu] {
                let c = -0.5 * t * t;
                let core = -0.25 * (bil_lo[j] - c) * (bil_lo[j] - c) + vv0 * c + bil_lo[j] + vv0;
                p_lo = p_lo.min(core);
                g_lo = g_lo.min(core + lin[j]);
            }
        }
        (p_lo, g_lo)
    } else {
        let mut p_lo = f64::INFINITY;
        for &a in &[g_vv_lo, g_vv_up] {
            for &c in &[g_cos_lo, g_cos_up] {
                p_lo = p_lo.min(-0.25 * (a - c) * (a - c) + vv0 * c + a + vv0);
            }
        }
        (p_lo, p_lo + lin_min)
    };

    // composite S: bilinear cascade in the (vv, sin) residuals. On the
    // monotone range the sine slot is substituted by its envelope evaluated
    // at the angle vertex, which shares the vertex with the linear angle
    // term and cancels its first-order part; outside that range the
    // decoupled interval form applies.
    let couple_s_up = 0.5 * (g_vv_lo + g_sin_lo) + vv0 >= 0.0;
    let (psi_s_up, g_s_up) = if couple_s_up {
        let mut pu = f64::NEG_INFINITY;
        let mut gu = f64::NEG_INFINITY;
        for &a in &[g_vv_lo, g_vv_up] {
            for &t in &[tl, tu] {
                let s = over(t);
                let core = 0.25 * (a + s) * (a + s) + vv0 * s;
                pu = pu.max(core);
                gu = gu.max(core - vv0 * (line.phi0_x + t));
            }
        }
        (pu, gu)
    } else {
        let mut pu = f64::NEG_INFINITY;
        for &a in &[g_vv_lo, g_vv_up] {
            for &s in &[g_sin_lo, g_sin_up] {
                pu = pu.max(0.25 * (a + s) * (a + s) + vv0 * s);
            }
        }
        (pu, pu - vv0 * li.phi_lb)
    };
    let couple_s_lo = 0.5 * (g_vv_lo - g_sin_up) + vv0 >= 0.0;
    let (psi_s_lo, g_s_lo) = if couple_s_lo {
        let mut pl = f64::INFINITY;
        let mut gl = f64::INFINITY;
        for &a in &[g_vv_lo, g_vv_up] {
            for &t in &[tl, tu] {
                let s = under(t);
                let core = -0.25 * (a - s) * (a - s) + vv0 * s;
                pl = pl.min(core);
                gl = gl.min(core - vv0 * (line.phi0_x + t));
            }
        }
        (pl, gl)
    } else {
        let mut pl = f64::INFINITY;
        for &a in &[g_vv_lo, g_vv_up] {
            for &s in &[g_sin_lo, g_sin_up] {
                pl = pl.min(-0.25 * (a - s) * (a - s) + vv0 * s);
            }
        }
        (pl, pl - vv0 * li.phi_ub)
    };

    Ok(LineBounds {
        g_cos_up,
        g_cos_lo,
        g_sin_up,
        g_sin_lo,
        g_vv_up,
        g_vv_lo,
        g_c_up,
        g_c_lo,
        g_s_up,
        g_s_lo,
        psi_c_up,
        psi_c_lo,
        psi_s_up,
        psi_s_lo,
    })
}

/// Interval bounds of the squared-magnitude entry at one bus. `free`
/// selects whether the magnitude is a state variable (PQ) whose
/// linearization is subtracted in the residual.
#[derive(Debug, Clone, Copy)]
pub struct BusBounds {
    pub psi_q_up: f64,
    pub psi_q_lo: f64,
    pub g_q_up: f64,
    pub g_q_lo: f64,
}

pub fn interval_bounds_bus(v_lb: f64, v_ub: f64, v0: f64, free: bool) -> BusBounds {
    let sub = if free { 2.0 * v0 } else { 0.0 };
    let psi_q_up = (v_lb * v_lb).max(v_ub * v_ub);
    let psi_q_lo = 2.0 * v0 * v_lb - v0 * v0;
    let g_q_up = (v_lb * v_lb - sub * v_lb).max(v_ub * v_ub - sub * v_ub);
    let g_q_lo = ((2.0 * v0 - sub) * v_lb).min((2.0 * v0 - sub) * v_ub) - v0 * v0;
    BusBounds {
        psi_q_up,
        psi_q_lo,
        g_q_up,
        g_q_lo,
    }
}

/// The four stacked bound vectors over the box: `g_up/g_lo` bound the basis
/// residual and `psi_up/psi_lo` bound the basis values. Injection entries
/// of all four equal the control parameters.
#[derive(Debug, Clone)]
pub struct BoundVectors {
    pub g_up: DVector<f64>,
    pub g_lo: DVector<f64>,
    pub psi_up: DVector<f64>,
    pub psi_lo: DVector<f64>,
}

/// Build the interval of each end magnitude of a line from the box.
fn line_intervals(b: &BoxBounds, line: &LineBase, l: usize) -> LineIntervals {
    let (vf_lb, vf_ub) = match line.f_pq {
        Some(k) => (b.v_lb[k], b.v_ub[k]),
        None => (line.v0f, line.v0f),
    };
    let (vt_lb, vt_ub) = match line.t_pq {
        Some(k) => (b.v_lb[k], b.v_ub[k]),
        None => (line.v0t, line.v0t),
    };
    LineIntervals {
        phi_lb: b.phi_lb[l],
        phi_ub: b.phi_ub[l],
        vf_lb,
        vf_ub,
        vt_lb,
        vt_ub,
    }
}

/// Stack per-line and per-bus interval bounds into the basis ordering.
pub fn assemble_bounds(
    u: &ControlVector,
    b: &BoxBounds,
    model: &RestrictionModel,
) -> Result<BoundVectors> {
    let layout = &model.layout;
    let q = layout.len();
    let mut g_up = DVector::zeros(q);
    let mut g_lo = DVector::zeros(q);
    let mut psi_up = DVector::zeros(q);
    let mut psi_lo = DVector::zeros(q);

    for k in 0..layout.n_ns {
        let c = layout.p_col(k);
        let v = u.p_ns[k];
        g_up[c] = v;
        g_lo[c] = v;
        psi_up[c] = v;
        psi_lo[c] = v;
    }
    for k in 0..layout.n_pq {
        let c = layout.q_col(k);
        let v = u.q_pq[k];
        g_up[c] = v;
        g_lo[c] = v;
        psi_up[c] = v;
        psi_lo[c] = v;
    }

    for (l, line) in model.lines.iter().enumerate() {
        let li = line_intervals(b, line, l);
        let lb = interval_bounds_line(&li, line)?;
        let (cc, sc) = (layout.cos_col(l), layout.sin_col(l));
        g_up[cc] = lb.g_c_up;
        g_lo[cc] = lb.g_c_lo;
        psi_up[cc] = lb.psi_c_up;
        psi_lo[cc] = lb.psi_c_lo;
        g_up[sc] = lb.g_s_up;
        g_lo[sc] = lb.g_s_lo;
        psi_up[sc] = lb.psi_s_up;
        psi_lo[sc] = lb.psi_s_lo;
    }

    for i in 0..layout.n_bus {
        let v0 = model.v0[i];
        let (v_lb, v_ub, free) = match model.idx.pq_pos(i) {
            Some(k) => (b.v_lb[k], b.v_ub[k], true),
            None => (v0, v0, false),
        };
        let bb = interval_bounds_bus(v_lb, v_ub, v0, free);
        let c = layout.vsq_col(i);
        g_up[c] = bb.g_q_up;
        g_lo[c] = bb.g_q_lo;
        psi_up[c] = bb.psi_q_up;
        psi_lo[c] = bb.psi_q_lo;
    }

    Ok(BoundVectors {
        g_up,
        g_lo,
        psi_up,
        psi_lo,
    })
}
