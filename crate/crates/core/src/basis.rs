//! Everything frozen at the base operating point: the phase-adjusted
//! admittance, basis functions and their residuals, the matrices M, L, A,
//! the limit vectors, and K with its sign split.
//!
//! The basis vector stacks, in this fixed order,
//! `[p_ns; q_pq; v^f v^t cos(phi - phi0); v^f v^t sin(phi - phi0); v^2]`
//! so that the power balance is `f = M psi` and the PV reactive limits are
//! `L psi <= d`. Residuals are taken against the linearization over the free
//! state `[theta_ns; v_pq]` only; fixed magnitudes and the slack angle enter
//! as constants. The injection rows of M carry -1 so that `f` is the
//! conventional mismatch (computed minus specified) and `M J_psi0` equals the
//! ordinary power flow Jacobian.

use crate::error::{Error, Result};
use crate::matpower::NetworkCase;
use crate::network::{Admittance, IndexMaps};
use crate::powerflow::{
    check_operational, mismatch, q_injection_limits, ControlVector, PolarState,
};
use nalgebra::{Complex, DMatrix, DVector};

/// Column layout of the basis vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsiLayout {
    pub n_ns: usize,
    pub n_pq: usize,
    pub n_lines: usize,
    pub n_bus: usize,
}

impl PsiLayout {
    pub fn new(idx: &IndexMaps) -> Self {
        PsiLayout {
            n_ns: idx.ns.len(),
            n_pq: idx.pq.len(),
            n_lines: idx.lines.len(),
            n_bus: idx.n_bus,
        }
    }

    pub fn len(&self) -> usize {
        self.n_ns + self.n_pq + 2 * self.n_lines + self.n_bus
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn p_col(&self, k: usize) -> usize {
        k
    }

    pub fn q_col(&self, k: usize) -> usize {
        self.n_ns + k
    }

    pub fn cos_col(&self, l: usize) -> usize {
        self.n_ns + self.n_pq + l
    }

    pub fn sin_col(&self, l: usize) -> usize {
        self.n_ns + self.n_pq + self.n_lines + l
    }

    pub fn vsq_col(&self, i: usize) -> usize {
        self.n_ns + self.n_pq + 2 * self.n_lines + i
    }
}

/// Phase-adjusted per-line admittance coefficients. Column `l` of each
/// matrix is nonzero only at the end buses of line `l`; the four matrices
/// are the cosine and sine coefficients of the active and reactive
/// line-flow expansions around the base angles.
#[derive(Debug, Clone)]
pub struct PhaseAdjusted {
    /// Cosine coefficients of p rows.
    pub g_c: DMatrix<f64>,
    /// Sine coefficients of p rows.
    pub b_s: DMatrix<f64>,
    /// Cosine coefficients of q rows.
    pub b_c: DMatrix<f64>,
    /// Sine coefficients of q rows.
    pub g_s: DMatrix<f64>,
    pub g_diag: DVector<f64>,
    pub b_diag: DVector<f64>,
}

/// Combine the base angles into the line admittances so that the power flow
/// equations become linear in the per-line nonlinearities
/// `v^f v^t cos(phi - phi0)` and `v^f v^t sin(phi - phi0)`.
pub fn phase_adjust(adm: &Admittance, idx: &IndexMaps, base: &PolarState) -> PhaseAdjusted {
    let n = idx.n_bus;
    let m = idx.lines.len();
    let mut g_c = DMatrix::zeros(n, m);
    let mut b_s = DMatrix::zeros(n, m);
    let mut b_c = DMatrix::zeros(n, m);
    let mut g_s = DMatrix::zeros(n, m);
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        let phi0 = base.va[f] - base.va[t];
        let wf = adm.lines[l].y_ft.conj() * Complex::from_polar(1.0, phi0);
        let wt = adm.lines[l].y_tf.conj() * Complex::from_polar(1.0, -phi0);
        g_c[(f, l)] = wf.re;
        b_s[(f, l)] = -wf.im;
        b_c[(f, l)] = wf.im;
        g_s[(f, l)] = wf.re;
        g_c[(t, l)] = wt.re;
        b_s[(t, l)] = wt.im;
        b_c[(t, l)] = wt.im;
        g_s[(t, l)] = -wt.re;
    }
    PhaseAdjusted {
        g_c,
        b_s,
        b_c,
        g_s,
        g_diag: DVector::from_iterator(n, (0..n).map(|i| adm.g[(i, i)])),
        b_diag: DVector::from_iterator(n, (0..n).map(|i| adm.b[(i, i)])),
    }
}

/// Evaluate all bus injections through the phase-adjusted expansion.
/// Equals the direct power flow equations at every state; used as an
/// identity check on [`phase_adjust`].
pub fn reconstruct_injections(
    pa: &PhaseAdjusted,
    idx: &IndexMaps,
    base: &PolarState,
    state: &PolarState,
) -> (DVector<f64>, DVector<f64>) {
    let n = idx.n_bus;
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        let phi0 = base.va[f] - base.va[t];
        let phit = state.va[f] - state.va[t] - phi0;
        let (sin, cos) = phit.sin_cos();
        let vv = state.vm[f] * state.vm[t];
        let (c, s) = (vv * cos, vv * sin);
        p[f] += pa.g_c[(f, l)] * c + pa.b_s[(f, l)] * s;
        q[f] += pa.b_c[(f, l)] * c + pa.g_s[(f, l)] * s;
        p[t] += pa.g_c[(t, l)] * c + pa.b_s[(t, l)] * s;
        q[t] += pa.b_c[(t, l)] * c + pa.g_s[(t, l)] * s;
    }
    for i in 0..n {
        let vsq = state.vm[i] * state.vm[i];
        p[i] += pa.g_diag[i] * vsq;
        q[i] -= pa.b_diag[i] * vsq;
    }
    (p, q)
}

/// Evaluate the basis vector at a state. The injection blocks carry the
/// control parameters, not network evaluations.
pub fn eval_psi(
    state: &PolarState,
    u: &ControlVector,
    idx: &IndexMaps,
    base: &PolarState,
) -> DVector<f64> {
    let layout = PsiLayout::new(idx);
    let mut psi = DVector::zeros(layout.len());
    for k in 0..layout.n_ns {
        psi[layout.p_col(k)] = u.p_ns[k];
    }
    for k in 0..layout.n_pq {
        psi[layout.q_col(k)] = u.q_pq[k];
    }
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        let phi0 = base.va[f] - base.va[t];
        let phit = state.va[f] - state.va[t] - phi0;
        let vv = state.vm[f] * state.vm[t];
        psi[layout.cos_col(l)] = vv * phit.cos();
        psi[layout.sin_col(l)] = vv * phit.sin();
    }
    for i in 0..layout.n_bus {
        psi[layout.vsq_col(i)] = state.vm[i] * state.vm[i];
    }
    psi
}

/// Analytic Jacobian of the basis vector with respect to the free state
/// `[theta_ns; v_pq]`, evaluated at the base point. Injection rows are zero;
/// columns exist only for non-slack angles and PQ magnitudes.
pub fn basis_jacobian(base: &PolarState, idx: &IndexMaps) -> DMatrix<f64> {
    let layout = PsiLayout::new(idx);
    let n_ns = idx.ns.len();
    let mut jac = DMatrix::zeros(layout.len(), idx.n_state());
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        // cos row: d/dv only, sin(phi - phi0) vanishes at the base
        if let Some(c) = idx.pq_pos(f) {
            jac[(layout.cos_col(l), n_ns + c)] = base.vm[t];
        }
        if let Some(c) = idx.pq_pos(t) {
            jac[(layout.cos_col(l), n_ns + c)] = base.vm[f];
        }
        // sin row: d/dtheta through the incidence signs
        let vv0 = base.vm[f] * base.vm[t];
        if let Some(c) = idx.ns_pos(f) {
            jac[(layout.sin_col(l), c)] = vv0;
        }
        if let Some(c) = idx.ns_pos(t) {
            jac[(layout.sin_col(l), c)] = -vv0;
        }
    }
    for i in 0..idx.n_bus {
        if let Some(c) = idx.pq_pos(i) {
            jac[(layout.vsq_col(i), n_ns + c)] = 2.0 * base.vm[i];
        }
    }
    jac
}

/// Per-line data frozen at the base point.
#[derive(Debug, Clone)]
pub struct LineBase {
    /// Angle difference at the base, with any slack contribution removed;
    /// this is the quantity the polytope rows bound.
    pub phi0_x: f64,
    /// Constant slack-angle offset: physical phi = phi0_x + slack_offset.
    pub slack_offset: f64,
    pub v0f: f64,
    pub v0t: f64,
    /// Under-estimator curvature parameter, in (0, pi].
    pub delta_plus: f64,
    /// Over-estimator curvature parameter, in [-pi, 0).
    pub delta_minus: f64,
    /// Whether each end has a free (PQ) magnitude.
    pub f_free: bool,
    pub t_free: bool,
    pub f_pq: Option<usize>,
    pub t_pq: Option<usize>,
}

/// Options for [`build_model`].
#[derive(Debug, Clone)]
pub struct ModelOptions {
    /// Maximum base-point mismatch accepted as "solved".
    pub base_residual_tol: f64,
    /// Reciprocal-condition floor below which the base Jacobian is treated
    /// as singular.
    pub rcond_min: f64,
    /// Clamp margin keeping the curvature parameters inside (0, pi).
    pub curvature_margin: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            base_residual_tol: 1e-8,
            rcond_min: 1e-12,
            curvature_margin: 1e-6,
        }
    }
}

/// Everything the certification engine needs, frozen at the base point.
#[derive(Debug, Clone)]
pub struct RestrictionModel {
    pub idx: IndexMaps,
    pub layout: PsiLayout,
    pub pa: PhaseAdjusted,
    pub m_mat: DMatrix<f64>,
    pub l_mat: DMatrix<f64>,
    pub l_plus: DMatrix<f64>,
    pub l_minus: DMatrix<f64>,
    pub a_mat: DMatrix<f64>,
    pub k_mat: DMatrix<f64>,
    pub k_plus: DMatrix<f64>,
    pub k_minus: DMatrix<f64>,
    /// Operational bound on the polytope parameter, in the same packing as b.
    pub b_max: DVector<f64>,
    /// PV reactive limits: `[q_max_pv; -q_min_pv]` as net bus injections.
    pub d: DVector<f64>,
    pub base_state: PolarState,
    pub base_u: ControlVector,
    pub lines: Vec<LineBase>,
    /// Base magnitude per bus.
    pub v0: DVector<f64>,
    /// Reciprocal-condition proxy of the base Jacobian (diagonal ratio of U).
    pub rcond_estimate: f64,
}

impl RestrictionModel {
    /// Rows of the polytope parameter: 2 |E| + 2 |pq|.
    pub fn n_rows(&self) -> usize {
        2 * self.layout.n_lines + 2 * self.layout.n_pq
    }

    /// Degenerate packing of the base point, `b_hat = A x0`.
    pub fn b_hat(&self) -> DVector<f64> {
        let nl = self.layout.n_lines;
        let npq = self.layout.n_pq;
        let mut b = DVector::zeros(self.n_rows());
        for (l, line) in self.lines.iter().enumerate() {
            b[l] = line.phi0_x;
            b[nl + npq + l] = -line.phi0_x;
        }
        for (k, &i) in self.idx.pq.iter().enumerate() {
            b[nl + k] = self.base_state.vm[i];
            b[nl + npq + nl + k] = -self.base_state.vm[i];
        }
        b
    }
}

/// Closed-form evaluation of the basis residual `g = psi - J_psi0 x`.
pub fn eval_g(state: &PolarState, u: &ControlVector, model: &RestrictionModel) -> DVector<f64> {
    let layout = &model.layout;
    let idx = &model.idx;
    let mut g = eval_psi(state, u, idx, &model.base_state);
    for (l, line) in model.lines.iter().enumerate() {
        let (f, t) = idx.lines[l];
        if line.f_free {
            g[layout.cos_col(l)] -= line.v0t * state.vm[f];
        }
        if line.t_free {
            g[layout.cos_col(l)] -= line.v0f * state.vm[t];
        }
        let phi_x = state.va[f] - state.va[t] - line.slack_offset;
        g[layout.sin_col(l)] -= line.v0f * line.v0t * phi_x;
    }
    for i in 0..layout.n_bus {
        if idx.pq_pos(i).is_some() {
            g[layout.vsq_col(i)] -= 2.0 * model.v0[i] * state.vm[i];
        }
    }
    g
}

fn split_signs(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let plus = m.map(|v| if v > 0.0 { v } else { 0.0 });
    let minus = m.map(|v| if v < 0.0 { v } else { 0.0 });
    (plus, minus)
}

/// Build the full restriction model at a solved, feasible base point.
pub fn build_model(
    case: &NetworkCase,
    adm: &Admittance,
    idx: &IndexMaps,
    base_state: &PolarState,
    base_u: &ControlVector,
    options: &ModelOptions,
) -> Result<RestrictionModel> {
    let residual = mismatch(base_state, adm, idx, base_u).amax();
    if residual > options.base_residual_tol {
        return Err(Error::Precondition {
            detail: format!(
                "base state does not solve the power flow (mismatch {residual:.3e} > {:.1e})",
                options.base_residual_tol
            ),
        });
    }
    let report = check_operational(case, idx, base_state, adm);
    if !report.feasible {
        return Err(Error::InfeasibleBase {
            detail: format!("worst operational margin {:+.3e} pu", report.worst()),
        });
    }

    let layout = PsiLayout::new(idx);
    let pa = phase_adjust(adm, idx, base_state);
    let (n_ns, n_pq, nl) = (layout.n_ns, layout.n_pq, layout.n_lines);
    let q_len = layout.len();

    // M: p rows over ns, q rows over pq
    let mut m_mat = DMatrix::zeros(n_ns + n_pq, q_len);
    for (r, &i) in idx.ns.iter().enumerate() {
        m_mat[(r, layout.p_col(r))] = -1.0;
        for l in 0..nl {
            m_mat[(r, layout.cos_col(l))] = pa.g_c[(i, l)];
            m_mat[(r, layout.sin_col(l))] = pa.b_s[(i, l)];
        }
        m_mat[(r, layout.vsq_col(i))] = pa.g_diag[i];
    }
    for (r, &i) in idx.pq.iter().enumerate() {
        let row = n_ns + r;
        m_mat[(row, layout.q_col(r))] = -1.0;
        for l in 0..nl {
            m_mat[(row, layout.cos_col(l))] = pa.b_c[(i, l)];
            m_mat[(row, layout.sin_col(l))] = pa.g_s[(i, l)];
        }
        m_mat[(row, layout.vsq_col(i))] = -pa.b_diag[i];
    }

    // L: PV reactive injections, upper block then lower block
    let n_pv = idx.pv.len();
    let mut l_mat = DMatrix::zeros(2 * n_pv, q_len);
    let mut d = DVector::zeros(2 * n_pv);
    for (r, &i) in idx.pv.iter().enumerate() {
        for l in 0..nl {
            l_mat[(r, layout.cos_col(l))] = pa.b_c[(i, l)];
            l_mat[(r, layout.sin_col(l))] = pa.g_s[(i, l)];
        }
        l_mat[(r, layout.vsq_col(i))] = -pa.b_diag[i];
        for c in 0..q_len {
            l_mat[(n_pv + r, c)] = -l_mat[(r, c)];
        }
        let (q_min, q_max) = q_injection_limits(case, i).expect("pv bus has a generator");
        d[r] = q_max;
        d[n_pv + r] = -q_min;
    }

    // A over x = [theta_ns; v_pq]: angle-difference rows then PQ magnitude
    // rows, repeated with flipped sign for the lower bounds
    let n_state = idx.n_state();
    let p_rows = 2 * nl + 2 * n_pq;
    let mut a_mat = DMatrix::zeros(p_rows, n_state);
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        if let Some(c) = idx.ns_pos(f) {
            a_mat[(l, c)] = 1.0;
            a_mat[(nl + n_pq + l, c)] = -1.0;
        }
        if let Some(c) = idx.ns_pos(t) {
            a_mat[(l, c)] = -1.0;
            a_mat[(nl + n_pq + l, c)] = 1.0;
        }
    }
    for k in 0..n_pq {
        a_mat[(nl + k, n_ns + k)] = 1.0;
        a_mat[(nl + n_pq + nl + k, n_ns + k)] = -1.0;
    }

    // per-line base data, curvature, and the operational box
    let slack_va = base_state.va[idx.slack];
    let cm = options.curvature_margin;
    let mut lines = Vec::with_capacity(nl);
    let mut b_max = DVector::zeros(p_rows);
    for (l, &(f, t)) in idx.lines.iter().enumerate() {
        let br = &case.branches[l];
        let phi0 = base_state.va[f] - base_state.va[t];
        let slack_offset = if f == idx.slack {
            slack_va
        } else if t == idx.slack {
            -slack_va
        } else {
            0.0
        };
        let delta_plus = (br.ang_max - phi0).clamp(cm, std::f64::consts::PI - cm);
        let delta_minus = (br.ang_min - phi0).clamp(-(std::f64::consts::PI - cm), -cm);
        lines.push(LineBase {
            phi0_x: phi0 - slack_offset,
            slack_offset,
            v0f: base_state.vm[f],
            v0t: base_state.vm[t],
            delta_plus,
            delta_minus,
            f_free: idx.pq_pos(f).is_some(),
            t_free: idx.pq_pos(t).is_some(),
            f_pq: idx.pq_pos(f),
            t_pq: idx.pq_pos(t),
        });
        b_max[l] = br.ang_max - slack_offset;
        b_max[nl + n_pq + l] = -(br.ang_min - slack_offset);
    }
    for (k, &i) in idx.pq.iter().enumerate() {
        b_max[nl + k] = case.buses[i].v_max;
        b_max[nl + n_pq + nl + k] = -case.buses[i].v_min;
    }

    // Assumption 1: the base Jacobian J_f0 = M J_psi0 must be nonsingular
    let j_psi0 = basis_jacobian(base_state, idx);
    let j_f0 = &m_mat * &j_psi0;
    let lu = j_f0.clone().lu();
    let u_diag: Vec<f64> = (0..n_state).map(|i| lu.u()[(i, i)].abs()).collect();
    let (dmin, dmax) = u_diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let rcond = if dmax > 0.0 { dmin / dmax } else { 0.0 };
    if !rcond.is_finite() || rcond < options.rcond_min {
        return Err(Error::SingularJacobian { rcond });
    }

    // K = -A J_f0^{-1} M via one factorization and q column solves
    let x = lu.solve(&m_mat).ok_or(Error::SingularJacobian { rcond })?;
    let k_mat = -(&a_mat * &x);
    let (k_plus, k_minus) = split_signs(&k_mat);
    let (l_plus, l_minus) = split_signs(&l_mat);

    Ok(RestrictionModel {
        idx: idx.clone(),
        layout,
        pa,
        m_mat,
        l_mat,
        l_plus,
        l_minus,
        a_mat,
        k_mat,
        k_plus,
        k_minus,
        b_max,
        d,
        base_state: base_state.clone(),
        base_u: base_u.clone(),
        lines,
        v0: base_state.vm.clone(),
        rcond_estimate: rcond,
    })
}

/// Convenience: solve the case as shipped and build the model at that base.
pub fn build_model_at_base(
    case: &NetworkCase,
    options: &ModelOptions,
) -> Result<(RestrictionModel, Admittance)> {
    let adm = crate::network::build_admittance(case)?;
    let idx = IndexMaps::new(case);
    let u0 = ControlVector::base_point(case, &idx);
    let x0 = crate::powerflow::flat_start(&idx, &u0);
    let base = crate::powerflow::nr_solve(&adm, &idx, &u0, &x0, 1e-10, 50).map_err(|d| {
        Error::BaseDiverged {
            detail: format!(
                "{:?} after {} iterations, mismatch {:.3e}",
                d.reason, d.iterations, d.mismatch_norm
            ),
        }
    })?;
    let model = build_model(case, &adm, &idx, &base, &u0, options)?;
    Ok((model, adm))
}
