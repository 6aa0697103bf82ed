//! Outer augmented Lagrangian loop, KKT residuals, dual objective and
//! optimality certificates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};
use crate::linmap::{Factor, SymMatrix, SymSum, SymTerm};
use crate::model::{AlmContext, SdpProblem};
use crate::newton::{self, NewtonIter, NewtonOptions, NewtonStatus};
use crate::spectral::{dense_spectrum, lanczos_spectrum, Spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target for `eta_max`.
    pub tol: f64,
    pub max_outer: usize,
    /// Initial penalty; `None` selects `(1 + |grad f(X0) R0|) / (1 + |b|_inf)`.
    pub sigma0: Option<f64>,
    pub sigma_growth: f64,
    /// `sigma` grows unless `max(eta_p, eta_Z)` drops below this fraction of
    /// its previous value.
    pub infeasibility_drop: f64,
    /// Multiplier step, in `[1, (1 + sqrt 5) / 2)`.
    pub alpha: f64,
    /// Subproblem tolerance `max(tol * eps_tol_ratio, eps_decay * eta_prev, eps_floor)`.
    pub eps_tol_ratio: f64,
    pub eps_decay: f64,
    pub eps_floor: f64,
    pub seed: u64,
    pub newton: NewtonOptions,
    pub max_escapes: usize,
    pub escape_step: f64,
    /// Full eigendecomposition of `S` up to this dimension, Lanczos beyond.
    pub dense_eig_limit: usize,
    pub lanczos_steps: usize,
    pub record_trace: bool,
    /// Warm start; must lie on the manifold.
    #[serde(skip)]
    pub initial_point: Option<Factor>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 5e-6,
            max_outer: 300,
            sigma0: None,
            sigma_growth: 2.0,
            infeasibility_drop: 0.5,
            alpha: 1.0,
            eps_tol_ratio: 0.1,
            eps_decay: 0.3,
            eps_floor: 1e-9,
            seed: 0,
            newton: NewtonOptions::default(),
            max_escapes: 3,
            escape_step: 0.1,
            dense_eig_limit: 400,
            lanczos_steps: 60,
            record_trace: true,
            initial_point: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SdpError::InvalidParameter(format!("solve options: {m}")));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if let Some(s) = self.sigma0 {
            if !(s > 0.0) || !s.is_finite() {
                return bad("sigma0 must be positive");
            }
        }
        if !(self.sigma_growth >= 1.0) || !(self.infeasibility_drop > 0.0 && self.infeasibility_drop <= 1.0) {
            return bad("need sigma_growth >= 1 and 0 < infeasibility_drop <= 1");
        }
        let golden = 0.5 * (1.0 + 5f64.sqrt());
        if !(self.alpha >= 1.0 && self.alpha < golden) {
            return bad("alpha must lie in [1, (1 + sqrt 5) / 2)");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        self.newton.validate()
    }

    fn report_options(&self) -> ReportOptions {
        ReportOptions {
            dense_eig_limit: self.dense_eig_limit,
            lanczos_steps: self.lanczos_steps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReportOptions {
    pub dense_eig_limit: usize,
    pub lanczos_steps: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        let o = SolveOptions::default();
        o.report_options()
    }
}

/// KKT residuals of a primal-dual iterate. Quantities that do not apply are
/// `None` rather than zero.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KktReport {
    pub eta_p: f64,
    pub eta_z: f64,
    pub eta_g: Option<f64>,
    pub eta_k_star: f64,
    pub eta_c1: f64,
    pub eta_c2: Option<f64>,
    pub eta_c3: Option<f64>,
    pub eta_d: f64,
    pub eta_k: f64,
    pub obj_p: f64,
    pub obj_d: Option<f64>,
    pub lambda_min_s: f64,
    pub spectrum_estimated: bool,
    pub rank: usize,
    pub eta_max: f64,
}

/// Multipliers and splitting variable at which a report is evaluated.
#[derive(Debug, Clone)]
pub struct DualState {
    pub y: DVector<f64>,
    pub y_ineq: DVector<f64>,
    pub z: Option<DMatrix<f64>>,
    pub w: Option<DMatrix<f64>>,
}

/// Dual quantities built from `R` and the multipliers.
#[derive(Debug, Clone)]
pub struct DualInfo {
    pub u: DVector<f64>,
    /// Dense `S` when formed.
    pub s: Option<DMatrix<f64>>,
    pub s_norm: f64,
    pub spectrum: Spectrum,
    /// `R S`.
    pub rs: Factor,
}

/// `G = grad f(X) - A^*(y) + A_I^*(y_I) - Z` as an operator.
fn multiplier_op<'a>(
    prob: &'a SdpProblem,
    r: &Factor,
    x: Option<&DMatrix<f64>>,
    st: &DualState,
) -> Result<SymSum<'a>> {
    let mut g = prob.grad_f_op(r, x)?;
    if prob.m() > 0 {
        g.push(SymTerm::Adjoint(prob.eq_map(), -&st.y));
    }
    if let Some(i) = prob.ineq() {
        g.push(SymTerm::Adjoint(&i.map, st.y_ineq.clone()));
    }
    if let Some(z) = &st.z {
        g.push(SymTerm::Owned(-1.0, SymMatrix::Dense(z.clone())));
    }
    Ok(g)
}

/// Builds `u` and `S = G - B^*(u)` with the spectral data of `S`.
pub fn dual_info(prob: &SdpProblem, r: &Factor, st: &DualState, opts: &ReportOptions) -> Result<DualInfo> {
    let n = prob.n();
    let x = prob.needs_explicit_x().then(|| prob.explicit_x(r));
    let g = multiplier_op(prob, r, x.as_ref(), st)?;
    let rg = g.right_mul(r)?;
    let u = prob.manifold().solve_u(r, &rg)?;
    let mut s_op = g;
    s_op.push(prob.manifold().adjoint_term(&(-&u)));
    let rs = s_op.right_mul(r)?;
    let form_dense = n <= 8000;
    let s = if form_dense { Some(s_op.to_dense()?) } else { None };
    let s_norm = match &s {
        Some(s) => s.norm(),
        None => hutchinson_norm(&s_op, opts.seed)?,
    };
    let spectrum = match &s {
        Some(s) if n <= opts.dense_eig_limit => dense_spectrum(s)?,
        Some(s) => lanczos_spectrum(|v| Ok(s * v), n, opts.lanczos_steps, opts.seed)?,
        None => lanczos_spectrum(|v| s_op.matvec(v), n, opts.lanczos_steps, opts.seed)?,
    };
    Ok(DualInfo { u, s, s_norm, spectrum, rs })
}

/// Smallest eigenpair and norm of the subproblem slack `grad Phi(X) - B^*(u)`.
fn subproblem_spectrum(
    prob: &SdpProblem,
    ctx: &AlmContext,
    r: &Factor,
    ev: &crate::model::Evaluation,
    opts: &ReportOptions,
) -> Result<(Spectrum, f64)> {
    let n = prob.n();
    let op = prob.s_op(ctx, r, ev)?;
    if n <= opts.dense_eig_limit {
        let s = op.to_dense()?;
        Ok((dense_spectrum(&s)?, s.norm()))
    } else {
        let eig = lanczos_spectrum(|v| op.matvec(v), n, opts.lanczos_steps, opts.seed)?;
        Ok((eig, hutchinson_norm(&op, opts.seed)?))
    }
}

fn hutchinson_norm(op: &SymSum<'_>, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let probes = 30;
    let mut acc = 0.0;
    for _ in 0..probes {
        let g = DVector::from_fn(op.n(), |_, _| StandardNormal.sample(&mut rng));
        acc += op.matvec(&g)?.norm_squared();
    }
    Ok((acc / probes as f64).sqrt())
}

/// KKT residuals at `R` with multipliers `st`; returns the dual data too.
pub fn kkt_report(
    prob: &SdpProblem,
    r: &Factor,
    st: &DualState,
    opts: &ReportOptions,
) -> Result<(KktReport, DualInfo)> {
    let man = prob.manifold();
    let x = prob.needs_explicit_x().then(|| prob.explicit_x(r));
    let xr = x.as_ref();
    let info = dual_info(prob, r, st, opts)?;
    let gram = r * r.transpose();
    let x_norm = gram.norm();

    let eq_res = prob.eq_value(r, xr)? - prob.eq_rhs();
    let (ineq_res, b_ineq_sq) = match prob.ineq() {
        Some(i) => (prob.ineq_value(r, xr)? - &i.rhs, i.rhs.norm_squared()),
        None => (DVector::zeros(0), 0.0),
    };
    let ineq_pos = ineq_res.map(|v| v.max(0.0));
    let eta_p = (eq_res.norm_squared() + ineq_pos.norm_squared()).sqrt()
        / (1.0 + (prob.eq_rhs().norm_squared() + b_ineq_sq).sqrt());

    let h = prob.h();
    let eta_z = match (&st.w, xr) {
        (Some(w), Some(x)) if !h.is_zero() => (x - w).norm() / (1.0 + x_norm),
        _ => 0.0,
    };

    let f_value = prob.f().value(r, xr)?;
    let obj_p = f_value + xr.map_or(0.0, |x| h.objective_value(x));

    let conj = match &st.z {
        Some(z) => h.conjugate_value(&(-z)),
        None => crate::prox::ConjugateValue { value: 0.0, violation: 0.0 },
    };
    let grad_f = prob.grad_f_op(r, xr)?;
    let grad_f_norm = match xr {
        Some(_) => grad_f.to_dense()?.norm(),
        None => match prob.f() {
            crate::model::SmoothOracle::Linear(c) => c.frobenius_norm(),
            _ => 0.0,
        },
    };
    let eta_d = conj.violation / (1.0 + grad_f_norm);

    let convex = prob.f().is_convex();
    let obj_d = convex.then(|| -> Result<f64> {
        let fstar = grad_f.inner_factored(r)? - f_value;
        Ok(st.y.dot(prob.eq_rhs()) + info.u.dot(&man.rhs())
            - prob.ineq().map_or(0.0, |i| i.rhs.dot(&st.y_ineq))
            - conj.value
            - fstar)
    });
    let obj_d = obj_d.transpose()?;
    let eta_g = obj_d.map(|d| (obj_p - d).abs() / (1.0 + obj_p.abs() + d.abs()));

    let xs = info.rs.dot(r);
    let eta_k_star = info.spectrum.neg_norm / (1.0 + info.s_norm);
    let eta_c1 = xs.abs() / (1.0 + x_norm + info.s_norm);
    let eta_c2 = st.z.as_ref().map(|z| {
        let xz = match xr {
            Some(x) => x.dot(z),
            None => 0.0,
        };
        xz.abs() / (1.0 + x_norm + z.norm())
    });
    let eta_c3 = prob.ineq().map(|_| {
        st.y_ineq.dot(&ineq_res).abs() / (1.0 + ineq_res.norm() + st.y_ineq.norm())
    });

    let mut eta_max = eta_p.max(eta_z).max(eta_d).max(eta_k_star).max(eta_c1);
    if let Some(g) = eta_g {
        eta_max = eta_max.max(g);
    }
    if let Some(c3) = eta_c3 {
        eta_max = eta_max.max(c3);
    }
    let report = KktReport {
        eta_p,
        eta_z,
        eta_g,
        eta_k_star,
        eta_c1,
        eta_c2,
        eta_c3,
        eta_d,
        eta_k: 0.0,
        obj_p,
        obj_d,
        lambda_min_s: info.spectrum.lambda_min,
        spectrum_estimated: info.spectrum.estimated,
        rank: newton::numerical_rank(r),
        eta_max,
    };
    Ok((report, info))
}

/// Optimality-gap bound for the subproblem at `R`: with `eps_g = |grad Psi|`
/// and `eps_H = max(0, -lambda_min(S))`, the gap is at most
/// `sqrt(diam) eps_g / 2 + diam eps_H`, or `diam eps_H` when the identity is
/// in the span of the manifold constraints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GapCertificate {
    pub eps_g: f64,
    pub eps_h: f64,
    pub diameter: f64,
    pub refined: bool,
    pub bound: f64,
}

pub fn gap_bound(diameter: f64, eps_g: f64, eps_h: f64, refined: bool) -> f64 {
    if refined {
        diameter * eps_h
    } else {
        diameter.sqrt() * eps_g / 2.0 + diameter * eps_h
    }
}

pub fn gap_certificate(prob: &SdpProblem, ctx: &AlmContext, r: &Factor, opts: &ReportOptions) -> Result<GapCertificate> {
    let ev = prob.evaluate(ctx, r)?;
    let s = prob.s_op(ctx, r, &ev)?;
    let n = prob.n();
    let eig = if n <= opts.dense_eig_limit {
        dense_spectrum(&s.to_dense()?)?
    } else {
        lanczos_spectrum(|v| s.matvec(v), n, opts.lanczos_steps, opts.seed)?
    };
    let man = prob.manifold();
    let eps_g = ev.grad_norm();
    let eps_h = (-eig.lambda_min).max(0.0);
    let refined = man.identity_in_span();
    Ok(GapCertificate {
        eps_g,
        eps_h,
        diameter: man.diameter(),
        refined,
        bound: gap_bound(man.diameter(), eps_g, eps_h, refined),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationCap,
}

/// Per outer iteration diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub sigma: f64,
    pub eps_k: f64,
    pub inner_status: NewtonStatus,
    pub inner_iterations: usize,
    pub cg_iterations: usize,
    pub grad_norm: f64,
    pub eta_max: f64,
    pub eta_p: f64,
    pub eta_z: f64,
    pub obj_p: f64,
    pub rank: usize,
    pub p: usize,
    /// `|grad Psi - 2 R S|_F / (1 + |grad Psi|_F)` with `S` from the updated multipliers.
    pub grad_identity: f64,
    /// `|B(X S)|_inf / (1 + |R S|_F^2)`.
    pub bxs_residual: f64,
    pub escaped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub rank_deficient: bool,
    /// Rank deficient and `lambda_min(S) >= -1e-8 (1 + |S|)`.
    pub global_optimality: bool,
    pub gap: GapCertificate,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub r: Factor,
    pub x: Option<DMatrix<f64>>,
    pub w: Option<DMatrix<f64>>,
    pub y: DVector<f64>,
    pub y_ineq: DVector<f64>,
    pub z: Option<DMatrix<f64>>,
    pub u: DVector<f64>,
    pub s: Option<DMatrix<f64>>,
    pub sigma: f64,
    pub report: KktReport,
    pub certificates: Certificates,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub cg_iterations: usize,
    pub escapes: usize,
    pub time_secs: f64,
    pub history: Vec<OuterRecord>,
    pub newton_trace: Vec<NewtonIter>,
}

impl Solution {
    pub fn dual_state(&self) -> DualState {
        DualState { y: self.y.clone(), y_ineq: self.y_ineq.clone(), z: self.z.clone(), w: self.w.clone() }
    }
}

/// Balances the objective against the constraints at the starting point:
/// `(1 + |2 grad f(X0) R0^T|) / (1 + |b|_inf)`.
pub fn initial_sigma(prob: &SdpProblem, r0: &Factor) -> Result<f64> {
    let binf = prob.eq_rhs().amax().max(prob.ineq().map_or(0.0, |i| i.rhs.amax()));
    let x0 = prob.needs_explicit_x().then(|| prob.explicit_x(r0));
    let g = prob.grad_f_op(r0, x0.as_ref())?.right_mul(r0)?.norm() * 2.0;
    Ok((1.0 + g) / (1.0 + binf))
}

/// Next penalty: grows by `sigma_growth` unless infeasibility dropped enough.
pub fn sigma_update(prev_infeasibility: Option<f64>, infeasibility: f64, sigma: f64, opts: &SolveOptions) -> f64 {
    match prev_infeasibility {
        Some(prev) if infeasibility > opts.infeasibility_drop * prev => sigma * opts.sigma_growth,
        _ => sigma,
    }
}

pub fn solve(prob: &SdpProblem, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let start = Instant::now();
    let man = prob.manifold();
    let ropts = opts.report_options();
    let mut r = match &opts.initial_point {
        Some(r0) => {
            if r0.ncols() != prob.n() {
                return Err(SdpError::DimensionMismatch { context: "initial point", expected: prob.n(), got: r0.ncols() });
            }
            man.normalize(r0)?
        }
        None => man.random_point(prob.p(), opts.seed)?,
    };
    let sigma0 = match opts.sigma0 {
        Some(s) => s,
        None => initial_sigma(prob, &r)?,
    };
    let mut ctx = AlmContext::new(prob, sigma0)?;
    let mut nu = opts.newton.nu0;
    let mut eta_prev = 1.0f64;
    let mut prev_infeas: Option<f64> = None;
    let p_max = prob.p_max();
    let can_escape = prob.f().is_convex();

    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut inner_total = 0;
    let mut cg_total = 0;
    let mut escapes = 0;
    let mut status = SolveStatus::IterationCap;
    let mut last: Option<(KktReport, DualInfo, DualState)> = None;
    let mut outer = 0;
    let mut last_grad = f64::INFINITY;

    for k in 0..opts.max_outer {
        outer = k + 1;
        let eps_k = (opts.tol * opts.eps_tol_ratio).max(opts.eps_decay * eta_prev).max(opts.eps_floor);
        let mut escaped = false;
        let mut local_escapes = 0;
        let (res, ev) = loop {
            let res = newton::solve_subproblem(prob, &ctx, &r, eps_k, nu, &opts.newton)?;
            nu = res.nu;
            inner_total += res.iterations;
            cg_total += res.cg_iterations;
            if opts.record_trace {
                trace.extend(res.trace.iter().cloned());
            }
            r = res.r.clone();
            let ev = res.eval.clone();
            // A rank-deficient stationary point whose subproblem slack has a
            // clearly negative eigenvalue is a saddle: step out and re-solve.
            if !can_escape || local_escapes >= opts.max_escapes || res.status != NewtonStatus::Converged {
                break (res, ev);
            }
            let eig = subproblem_spectrum(prob, &ctx, &r, &ev, &ropts)?;
            let lam_tol = (opts.tol * (1.0 + eig.1)).max(ev.grad_norm());
            match newton::rank_escape(man, &r, eig.0.lambda_min, &eig.0.min_vector, p_max, lam_tol, opts.escape_step)? {
                Some(rn) => {
                    r = rn;
                    local_escapes += 1;
                    escapes += 1;
                    escaped = true;
                }
                None => break (res, ev),
            }
        };
        last_grad = ev.grad_norm();
        let sigma = ctx.sigma;
        let a_s = opts.alpha * sigma;

        // splitting variable and multiplier updates
        let w = match (&ev.x, &ctx.z) {
            (Some(x), Some(z)) => Some(prob.h().prox(1.0 / sigma, &(x - z / sigma))?),
            _ => None,
        };
        ctx.y -= (&ev.eq_value - prob.eq_rhs()) * a_s;
        if let Some(i) = prob.ineq() {
            let upd = &ctx.y_ineq + (&ev.ineq_value - &i.rhs) * a_s;
            ctx.y_ineq = upd.map(|v| v.max(0.0));
        }
        if let (Some(z), Some(x), Some(w)) = (ctx.z.as_mut(), &ev.x, &w) {
            *z -= (x - w) * a_s;
        }

        let st = DualState { y: ctx.y.clone(), y_ineq: ctx.y_ineq.clone(), z: ctx.z.clone(), w: w.clone() };
        let (report, info) = kkt_report(prob, &r, &st, &ropts)?;
        let grad_identity = (&ev.rgrad - &info.rs * 2.0).norm() / (1.0 + ev.rgrad.norm());
        let bxs = man.tangent_residual(&r, &info.rs)?.amax() / 2.0 / (1.0 + info.rs.norm_squared());

        let converged = report.eta_max < opts.tol;
        history.push(OuterRecord {
            sigma,
            eps_k,
            inner_status: res.status,
            inner_iterations: res.iterations,
            cg_iterations: res.cg_iterations,
            grad_norm: last_grad,
            eta_max: report.eta_max,
            eta_p: report.eta_p,
            eta_z: report.eta_z,
            obj_p: report.obj_p,
            rank: report.rank,
            p: r.nrows(),
            grad_identity,
            bxs_residual: bxs,
            escaped,
        });
        if converged {
            status = SolveStatus::Converged;
            last = Some((report, info, st));
            break;
        }
        let infeas = report.eta_p.max(report.eta_z);
        ctx.sigma = sigma_update(prev_infeas, infeas, sigma, opts);
        prev_infeas = Some(infeas);
        eta_prev = report.eta_max;
        last = Some((report, info, st));
    }

    let (report, info, st) = match last {
        Some(l) => l,
        None => return Err(SdpError::InvalidParameter("max_outer must be positive".into())),
    };
    let p = r.nrows();
    let rank_deficient = report.rank < p;
    let global_optimality =
        rank_deficient && info.spectrum.lambda_min >= -1e-8 * (1.0 + info.s_norm) && prob.f().is_convex();
    let eps_h = (-info.spectrum.lambda_min).max(0.0);
    let refined = man.identity_in_span();
    let gap = GapCertificate {
        eps_g: last_grad,
        eps_h,
        diameter: man.diameter(),
        refined,
        bound: gap_bound(man.diameter(), last_grad, eps_h, refined),
    };
    let x = prob.needs_explicit_x().then(|| prob.explicit_x(&r));
    Ok(Solution {
        x,
        w: st.w,
        y: st.y,
        y_ineq: st.y_ineq,
        z: st.z,
        u: info.u,
        s: info.s,
        r,
        sigma: ctx.sigma,
        report,
        certificates: Certificates { rank_deficient, global_optimality, gap },
        status,
        outer_iterations: outer,
        inner_iterations: inner_total,
        cg_iterations: cg_total,
        escapes,
        time_secs: start.elapsed().as_secs_f64(),
        history,
        newton_trace: trace,
    })
}
