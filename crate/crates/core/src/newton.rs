//! Adaptive regularized Riemannian semismooth Newton method for one
//! augmented Lagrangian subproblem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdpError};
use crate::linmap::Factor;
use crate::manifold::ManifoldDescriptor;
use crate::model::{AlmContext, Evaluation, SdpProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub eta1: f64,
    pub eta2: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub nu_min: f64,
    pub nu0: f64,
    pub theta: f64,
    pub mu: f64,
    pub delta: f64,
    pub max_backtracks: usize,
    pub max_iter: usize,
    pub cg_max_iter: usize,
    /// Relative curvature threshold of mCG.
    pub curvature_eps: f64,
    /// Exponent `tau` of the forcing term `min(0.5, |g|^tau) |g|`.
    pub forcing_exponent: f64,
    pub stall_rejects: usize,
    pub stall_window: usize,
    pub renormalize_every: usize,
    /// Roundoff allowance added to both sides of the ratio, as a multiple of
    /// `eps_mach * max(1, |Psi|)`.
    pub ratio_regularization: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            eta1: 0.01,
            eta2: 0.9,
            gamma0: 0.2,
            gamma1: 1.0,
            gamma2: 10.0,
            nu_min: 1e-3,
            nu0: 1.0,
            theta: 0.1,
            mu: 1e-4,
            delta: 0.5,
            max_backtracks: 50,
            max_iter: 500,
            cg_max_iter: 300,
            curvature_eps: 1e-10,
            forcing_exponent: 0.5,
            stall_rejects: 20,
            stall_window: 10,
            renormalize_every: 50,
            ratio_regularization: 1e3,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SdpError::InvalidParameter(format!("newton options: {what}")));
        if !(0.0 < self.eta1 && self.eta1 <= self.eta2 && self.eta2 < 1.0) {
            return bad("need 0 < eta1 <= eta2 < 1");
        }
        if !(0.0 < self.gamma0 && self.gamma0 < 1.0 && 1.0 <= self.gamma1 && self.gamma1 <= self.gamma2) {
            return bad("need 0 < gamma0 < 1 <= gamma1 <= gamma2");
        }
        if !(self.nu_min > 0.0 && self.nu0 >= self.nu_min) {
            return bad("need 0 < nu_min <= nu0");
        }
        if !(self.theta >= 0.0 && 0.0 < self.delta && self.delta < 1.0 && 0.0 < self.mu && self.mu < 1.0) {
            return bad("need theta >= 0, 0 < delta < 1, 0 < mu < 1");
        }
        if self.max_iter == 0 || self.cg_max_iter == 0 || self.max_backtracks == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McgStatus {
    Converged,
    NegativeCurvature,
    CapReached,
}

#[derive(Debug, Clone)]
pub struct McgResult {
    pub direction: Factor,
    /// `H[direction]` without the regularization term.
    pub hess_direction: Factor,
    pub status: McgStatus,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Modified CG on `(H + nu I) U = -g`. Stops when the residual is below
/// `min(theta |U|, forcing)` or when the curvature of a search direction drops
/// below `curvature_eps |d|^2`; in the latter case the first iteration falls
/// back to `-g` and later ones return the current iterate.
pub fn mcg<F>(
    grad: &Factor,
    mut hess: F,
    nu: f64,
    theta: f64,
    forcing: f64,
    curvature_eps: f64,
    cap: usize,
) -> Result<McgResult>
where
    F: FnMut(&Factor) -> Result<Factor>,
{
    let gnorm = grad.norm();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return Err(SdpError::InvalidParameter("mCG needs a nonzero finite gradient".into()));
    }
    let mut x = DMatrix::zeros(grad.nrows(), grad.ncols());
    let mut hx = x.clone();
    let mut res = -grad;
    let mut d = res.clone();
    let mut rr = res.norm_squared();
    let mut status = McgStatus::CapReached;
    let mut iterations = 0;
    for k in 0..cap {
        let hd = hess(&d)?;
        let ad = &hd + &d * nu;
        let curv = d.dot(&ad);
        iterations = k + 1;
        if !curv.is_finite() {
            return Err(SdpError::NonFinite("Hessian-vector product".into()));
        }
        if curv <= curvature_eps * d.norm_squared() {
            status = McgStatus::NegativeCurvature;
            if k == 0 {
                x = -grad;
                hx = -hd;
                // residual of the fallback
                res = -(grad + &hx + &x * nu);
            }
            break;
        }
        let a = rr / curv;
        x += &d * a;
        hx += &hd * a;
        res -= &ad * a;
        let rr_new = res.norm_squared();
        if rr_new.sqrt() <= (theta * x.norm()).min(forcing) {
            status = McgStatus::Converged;
            break;
        }
        d = &res + &d * (rr_new / rr);
        rr = rr_new;
    }
    let residual_norm = res.norm();
    Ok(McgResult { direction: x, hess_direction: hx, status, iterations, residual_norm })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoResult {
    pub step: f64,
    pub backtracks: usize,
    pub satisfied: bool,
}

/// Backtracking on the model `m(t) = t slope + t^2/2 curvature`: smallest
/// `h` with `m(delta^h) <= mu delta^h slope`.
pub fn armijo_step(slope: f64, curvature: f64, mu: f64, delta: f64, cap: usize) -> Result<ArmijoResult> {
    if !(slope < 0.0) || !slope.is_finite() || !curvature.is_finite() {
        return Err(SdpError::InvalidParameter(format!("Armijo needs a descent slope, got {slope}")));
    }
    let mut t = 1.0;
    for h in 0..=cap {
        if t * slope + 0.5 * t * t * curvature <= mu * t * slope {
            return Ok(ArmijoResult { step: t, backtracks: h, satisfied: true });
        }
        if h < cap {
            t *= delta;
        }
    }
    Ok(ArmijoResult { step: t, backtracks: cap, satisfied: false })
}

/// Three-branch regularization update.
pub fn nu_update(rho: f64, nu: f64, opts: &NewtonOptions) -> f64 {
    if rho >= opts.eta2 {
        (opts.gamma0 * nu).max(opts.nu_min)
    } else if rho >= opts.eta1 {
        opts.gamma1 * nu
    } else {
        opts.gamma2 * nu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioOutcome {
    pub rho: f64,
    pub accept: bool,
    pub nu_next: f64,
}

/// Ratio of actual to predicted reduction, where `pred < 0` is the model
/// value of the step without its regularization term. `reg >= 0` is added to
/// both reductions to absorb roundoff in `psi_new - psi_old`.
pub fn ratio_and_update(
    psi_old: f64,
    psi_new: f64,
    pred: f64,
    reg: f64,
    nu: f64,
    opts: &NewtonOptions,
) -> Result<RatioOutcome> {
    if !(pred < 0.0) {
        return Err(SdpError::InvalidParameter(format!("predicted reduction must be negative, got {pred}")));
    }
    let rho = if psi_new.is_finite() {
        (psi_old - psi_new + reg) / (-pred + reg)
    } else {
        f64::NEG_INFINITY
    };
    let accept = rho >= opts.eta1;
    Ok(RatioOutcome { rho, accept, nu_next: nu_update(rho, nu, opts) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonIter {
    pub grad_norm: f64,
    pub psi: f64,
    pub psi_trial: f64,
    pub nu: f64,
    pub nu_next: f64,
    pub rho: f64,
    pub ratio_reg: f64,
    pub cg_iters: usize,
    pub cg_status: McgStatus,
    pub slope: f64,
    pub step_size: f64,
    /// `|s U|_F` of the step actually taken.
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonStatus {
    Converged,
    IterationCap,
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub r: Factor,
    pub eval: Evaluation,
    pub status: NewtonStatus,
    pub iterations: usize,
    pub cg_iterations: usize,
    pub nu: f64,
    pub trace: Vec<NewtonIter>,
}

/// Minimizes `Psi` over the manifold from `r0` until `|grad Psi| <= eps`.
pub fn solve_subproblem(
    prob: &SdpProblem,
    ctx: &AlmContext,
    r0: &Factor,
    eps: f64,
    nu0: f64,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    opts.validate()?;
    if !(eps > 0.0) {
        return Err(SdpError::InvalidParameter(format!("tolerance must be positive, got {eps}")));
    }
    let man = prob.manifold();
    let mut r = r0.clone();
    let mut ev = prob.evaluate(ctx, &r)?;
    let mut nu = nu0.max(opts.nu_min);
    let mut trace = Vec::new();
    let mut cg_total = 0;
    let mut rejects = 0;
    let mut accepted_psi: Vec<f64> = vec![ev.psi];
    let mut status = NewtonStatus::IterationCap;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        let gnorm = ev.grad_norm();
        if gnorm <= eps {
            status = NewtonStatus::Converged;
            break;
        }
        iterations = it + 1;
        let forcing = gnorm.powf(opts.forcing_exponent).min(0.5) * gnorm;
        let cg = mcg(
            &ev.rgrad,
            |d| prob.hess_vec(ctx, &r, &ev, d),
            nu,
            opts.theta,
            forcing,
            opts.curvature_eps,
            opts.cg_max_iter,
        )?;
        cg_total += cg.iterations;
        let (dir, hdir) = if ev.rgrad.dot(&cg.direction) < 0.0 {
            (cg.direction, cg.hess_direction)
        } else {
            // roundoff safeguard, CG from zero always yields descent in exact arithmetic
            let d = -&ev.rgrad;
            let hd = prob.hess_vec(ctx, &r, &ev, &d)?;
            (d, hd)
        };
        let slope = ev.rgrad.dot(&dir);
        let uhu = dir.dot(&hdir);
        let curvature = uhu + nu * dir.norm_squared();
        let ls = armijo_step(slope, curvature, opts.mu, opts.delta, opts.max_backtracks)?;
        let s = ls.step;
        let step = &dir * s;
        let pred = s * slope + 0.5 * s * s * uhu;
        let reg = opts.ratio_regularization * f64::EPSILON * ev.psi.abs().max(1.0);

        let trial = man.retract(&r, &step).and_then(|rt| prob.evaluate(ctx, &rt).map(|e| (rt, e)));
        let (trial_r, trial_ev) = match trial {
            Ok(t) => (Some(t.0), Some(t.1)),
            Err(SdpError::NonFinite(_)) | Err(SdpError::DegenerateBlock { .. }) => (None, None),
            Err(e) => return Err(e),
        };
        let psi_trial = trial_ev.as_ref().map_or(f64::INFINITY, |e| e.psi);
        let out = if pred < 0.0 {
            ratio_and_update(ev.psi, psi_trial, pred, reg, nu, opts)?
        } else {
            // step underflowed
            RatioOutcome { rho: f64::NEG_INFINITY, accept: false, nu_next: opts.gamma2 * nu }
        };
        trace.push(NewtonIter {
            grad_norm: gnorm,
            psi: ev.psi,
            psi_trial,
            nu,
            nu_next: out.nu_next,
            rho: out.rho,
            ratio_reg: reg,
            cg_iters: cg.iterations,
            cg_status: cg.status,
            slope,
            step_size: s,
            step_norm: step.norm(),
            accepted: out.accept,
        });
        nu = out.nu_next;
        if out.accept {
            r = trial_r.expect("accepted trial exists");
            ev = trial_ev.expect("accepted trial exists");
            rejects = 0;
            accepted_psi.push(ev.psi);
            let w = opts.stall_window;
            if accepted_psi.len() > w {
                let old = accepted_psi[accepted_psi.len() - 1 - w];
                if (old - ev.psi).abs() <= 1e-14 * (1.0 + ev.psi.abs()) {
                    status = NewtonStatus::Stagnated;
                    break;
                }
            }
        } else {
            rejects += 1;
            if rejects >= opts.stall_rejects {
                status = NewtonStatus::Stagnated;
                break;
            }
        }
        if opts.renormalize_every > 0 && (it + 1) % opts.renormalize_every == 0 {
            r = man.normalize(&r)?;
            ev = prob.evaluate(ctx, &r)?;
        }
    }
    if status == NewtonStatus::IterationCap && ev.grad_norm() <= eps {
        status = NewtonStatus::Converged;
    }
    Ok(NewtonResult { r, eval: ev, status, iterations, cg_iterations: cg_total, nu, trace })
}

/// Numerical rank of `R`: singular values above `1e-8 sigma_max`.
pub fn numerical_rank(r: &Factor) -> usize {
    if r.is_empty() {
        return 0;
    }
    let sv = r.clone().svd(false, false).singular_values;
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

/// Relative singular value below which a direction of `R` counts as nearly
/// unused when the rank cannot grow.
const NEAR_DEFICIENT: f64 = 0.05;

/// Moves `R` along a direction of negative curvature of `S` given its
/// smallest eigenpair `(lambda, v)`.
///
/// When `R` is rank deficient the direction `q v^T` with `q` the weakest left
/// singular vector is used at the same rank; the same happens at `p_max` if
/// that direction is nearly unused. Otherwise a row `t v^T` is appended if
/// `p < p_max`. Returns `None` when `lambda >= -tol` or no admissible move
/// exists.
pub fn rank_escape(
    man: &ManifoldDescriptor,
    r: &Factor,
    lambda: f64,
    v: &DVector<f64>,
    p_max: usize,
    tol: f64,
    step: f64,
) -> Result<Option<Factor>> {
    if !(lambda < -tol) || v.len() != r.ncols() {
        return Ok(None);
    }
    let vn = v.norm();
    if !(vn > 0.0) {
        return Ok(None);
    }
    let v = v / vn;
    let p = r.nrows();
    let scale = step * (r.norm_squared() / r.ncols() as f64).sqrt().max(1e-12);
    let svd = r.clone().svd(true, false);
    let sv = &svd.singular_values;
    let k = (0..sv.len()).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("p >= 1");
    let nearly_deficient = sv[k] <= NEAR_DEFICIENT * sv.max();
    // rank-deficient, or no room to grow and one direction is nearly unused:
    // rotate the weakest direction of R
    if numerical_rank(r) < p || (p >= p_max && nearly_deficient) {
        let u = svd.u.expect("requested");
        let q = u.column(k).clone_owned();
        let dir = &q * v.transpose() * scale;
        return man.retract(r, &dir).map(Some);
    }
    if p >= p_max {
        return Ok(None);
    }
    let mut grown = DMatrix::zeros(p + 1, r.ncols());
    grown.rows_mut(0, p).copy_from(r);
    grown.row_mut(p).copy_from(&(v.transpose() * scale));
    man.normalize(&grown).map(Some)
}
