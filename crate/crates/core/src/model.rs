//! Problem definition and evaluation of the augmented Lagrangian subproblem
//! in factored form.
//!
//! For multipliers `(y, y_I, Z)` and penalty `sigma` the subproblem objective is
//!
//! ```text
//! Phi(X) = f(X) + env_h(X) + sigma/2 ||A(X) - b - y/sigma||^2
//!        + sigma/2 ||max(A_I(X) - b_I + y_I/sigma, 0)||^2
//! ```
//!
//! with `X = R^T R` and `Psi(R) = Phi(R^T R)`. Terms constant in `X` are
//! dropped. The inequality part is what remains after minimizing over a
//! nonnegative slack.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SdpError};
use crate::linmap::{Factor, SymLinearMap, SymMatrix, SymSum, SymTerm};
use crate::manifold::ManifoldDescriptor;
use crate::prox::ProxOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyKind {
    /// `1 - tr(Xh^2)` with `Xh = X / tr X`.
    Tsallis,
    /// `-1/2 log tr(Xh^3)`.
    Renyi,
}

#[derive(Debug, Clone)]
pub enum SmoothOracle {
    Linear(SymMatrix),
    /// `1/2 ||H o (X - G)||_F^2`.
    WeightedQuad { weights: DMatrix<f64>, target: DMatrix<f64> },
    LinearPlusEntropy { c: SymMatrix, kind: EntropyKind, lambda: f64 },
}

/// Scalars of the Gram matrix `G = R R^T` shared by the entropy formulas.
struct GramStats {
    gram: DMatrix<f64>,
    t: f64,
    q: f64,
    c: f64,
}

fn gram_stats(r: &Factor) -> Result<GramStats> {
    let gram = r * r.transpose();
    let t = gram.trace();
    if !(t > 0.0) {
        return Err(SdpError::InvalidParameter("entropy needs a nonzero factor".into()));
    }
    let g2 = &gram * &gram;
    let q = g2.trace();
    let c = g2.dot(&gram);
    Ok(GramStats { gram, t, q, c })
}

fn entropy_parts(kind: EntropyKind, lambda: f64, r: &Factor) -> Result<(f64, Vec<SymTerm<'static>>)> {
    let st = gram_stats(r)?;
    Ok(match kind {
        EntropyKind::Tsallis => {
            let value = lambda * (1.0 - st.q / (st.t * st.t));
            let terms = vec![
                SymTerm::Gram { coef: -2.0 * lambda / (st.t * st.t), factor: r.clone(), power: 1 },
                SymTerm::Identity(2.0 * lambda * st.q / st.t.powi(3)),
            ];
            (value, terms)
        }
        EntropyKind::Renyi => {
            let value = -0.5 * lambda * (st.c / st.t.powi(3)).ln();
            let k = -1.5 * lambda;
            let terms = vec![
                SymTerm::Gram { coef: k / st.c, factor: r.clone(), power: 2 },
                SymTerm::Identity(-k / st.t),
            ];
            (value, terms)
        }
    })
}

fn entropy_hess_terms(kind: EntropyKind, lambda: f64, r: &Factor, u: &Factor) -> Result<Vec<SymTerm<'static>>> {
    let st = gram_stats(r)?;
    let gr = &st.gram * r;
    let dt = 2.0 * u.dot(r);
    Ok(match kind {
        EntropyKind::Tsallis => {
            let t2 = st.t * st.t;
            let dq = 4.0 * gr.dot(u);
            vec![
                SymTerm::Pair { coef: -2.0 * lambda / t2, a: u.clone(), b: r.clone() },
                SymTerm::Gram { coef: 4.0 * lambda * dt / st.t.powi(3), factor: r.clone(), power: 1 },
                SymTerm::Identity(lambda * (2.0 * dq / st.t.powi(3) - 6.0 * st.q * dt / st.t.powi(4))),
            ]
        }
        EntropyKind::Renyi => {
            let k = -1.5 * lambda;
            let g2r = &st.gram * &gr;
            let dc = 6.0 * g2r.dot(u);
            let urr = (u * r.transpose()) * r;
            vec![
                SymTerm::Pair { coef: k / st.c, a: u.clone(), b: gr },
                SymTerm::Pair { coef: k / st.c, a: r.clone(), b: urr },
                SymTerm::Gram { coef: -k * dc / (st.c * st.c), factor: r.clone(), power: 2 },
                SymTerm::Identity(k * dt / (st.t * st.t)),
            ]
        }
    })
}

/// Entropy value and its gradient with respect to the factor, `2 R grad_X E`.
pub fn entropy_value_grad(kind: EntropyKind, lambda: f64, r: &Factor) -> Result<(f64, Factor)> {
    let (value, terms) = entropy_parts(kind, lambda, r)?;
    let mut sum = SymSum::new(r.ncols());
    for t in terms {
        sum.push(t);
    }
    Ok((value, sum.right_mul(r)? * 2.0))
}

impl SmoothOracle {
    pub fn weighted_quad(weights: DMatrix<f64>, target: DMatrix<f64>) -> Result<Self> {
        check_dim("weighted_quad", weights.nrows(), weights.ncols())?;
        check_dim("weighted_quad", weights.nrows(), target.nrows())?;
        check_dim("weighted_quad", target.nrows(), target.ncols())?;
        if weights.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SdpError::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("quadratic target".into()));
        }
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        Ok(SmoothOracle::WeightedQuad { weights: sym(weights), target: sym(target) })
    }

    pub fn with_entropy(c: SymMatrix, kind: EntropyKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(SdpError::InvalidParameter(format!("entropy weight must be >= 0, got {lambda}")));
        }
        Ok(SmoothOracle::LinearPlusEntropy { c, kind, lambda })
    }

    pub fn n(&self) -> usize {
        match self {
            SmoothOracle::Linear(c) | SmoothOracle::LinearPlusEntropy { c, .. } => c.n(),
            SmoothOracle::WeightedQuad { weights, .. } => weights.nrows(),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            SmoothOracle::LinearPlusEntropy { lambda, .. } => *lambda == 0.0,
            _ => true,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, SmoothOracle::Linear(_))
    }

    /// `f(X)`; `x` must be supplied for the quadratic variant.
    pub fn value(&self, r: &Factor, x: Option<&DMatrix<f64>>) -> Result<f64> {
        Ok(match self {
            SmoothOracle::Linear(c) => match x {
                Some(x) => c.inner_dense(x),
                None => c.inner_factored(r),
            },
            SmoothOracle::WeightedQuad { weights, target } => {
                let x = x.ok_or_else(|| SdpError::InvalidParameter("quadratic f needs explicit X".into()))?;
                0.5 * weights.component_mul(&(x - target)).norm_squared()
            }
            SmoothOracle::LinearPlusEntropy { c, kind, lambda } => {
                let lin = match x {
                    Some(x) => c.inner_dense(x),
                    None => c.inner_factored(r),
                };
                lin + entropy_parts(*kind, *lambda, r)?.0
            }
        })
    }

    /// `grad f(X)` as structured terms.
    pub fn grad_terms<'a>(&'a self, r: &Factor, x: Option<&DMatrix<f64>>) -> Result<Vec<SymTerm<'a>>> {
        Ok(match self {
            SmoothOracle::Linear(c) => vec![SymTerm::Matrix(1.0, c)],
            SmoothOracle::WeightedQuad { weights, target } => {
                let x = x.ok_or_else(|| SdpError::InvalidParameter("quadratic f needs explicit X".into()))?;
                let hh = weights.component_mul(weights);
                vec![SymTerm::Owned(1.0, SymMatrix::Dense(hh.component_mul(&(x - target))))]
            }
            SmoothOracle::LinearPlusEntropy { c, kind, lambda } => {
                let mut terms = vec![SymTerm::Matrix(1.0, c)];
                terms.extend(entropy_parts(*kind, *lambda, r)?.1);
                terms
            }
        })
    }

    /// `grad^2 f(X)[D]` for `D = U^T R + R^T U`; `d` is that matrix when
    /// already formed densely.
    fn hess_terms(&self, r: &Factor, u: &Factor, d: Option<&DMatrix<f64>>) -> Result<Vec<SymTerm<'static>>> {
        Ok(match self {
            SmoothOracle::Linear(_) => Vec::new(),
            SmoothOracle::WeightedQuad { weights, .. } => {
                let d = d.ok_or_else(|| SdpError::InvalidParameter("quadratic f needs explicit D".into()))?;
                let hh = weights.component_mul(weights);
                vec![SymTerm::Owned(1.0, SymMatrix::Dense(hh.component_mul(d)))]
            }
            SmoothOracle::LinearPlusEntropy { kind, lambda, .. } => entropy_hess_terms(*kind, *lambda, r, u)?,
        })
    }
}

/// Inequality block `A_I(X) <= b_I`.
#[derive(Debug, Clone)]
pub struct Inequalities {
    pub map: SymLinearMap,
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    f: SmoothOracle,
    h: ProxOracle,
    eq: SymLinearMap,
    b: DVector<f64>,
    ineq: Option<Inequalities>,
    manifold: ManifoldDescriptor,
    p: usize,
    force_explicit: bool,
}

impl SdpProblem {
    pub fn new(f: SmoothOracle, h: ProxOracle, manifold: ManifoldDescriptor, p: usize) -> Result<Self> {
        let n = manifold.n();
        check_dim("smooth term", n, f.n())?;
        let prob = Self {
            f,
            h,
            eq: SymLinearMap::General { n, mats: Vec::new() },
            b: DVector::zeros(0),
            ineq: None,
            manifold,
            p: 1,
            force_explicit: false,
        };
        prob.with_rank(p)
    }

    pub fn with_equalities(mut self, map: SymLinearMap, b: DVector<f64>) -> Result<Self> {
        check_dim("equality map", self.n(), map.n())?;
        check_dim("equality rhs", map.m(), b.len())?;
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("equality rhs".into()));
        }
        self.eq = map;
        self.b = b;
        Ok(self)
    }

    pub fn with_inequalities(mut self, map: SymLinearMap, rhs: DVector<f64>) -> Result<Self> {
        check_dim("inequality map", self.n(), map.n())?;
        check_dim("inequality rhs", map.m(), rhs.len())?;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("inequality rhs".into()));
        }
        self.ineq = if map.m() == 0 { None } else { Some(Inequalities { map, rhs }) };
        Ok(self)
    }

    pub fn with_rank(mut self, p: usize) -> Result<Self> {
        if p == 0 || p < self.manifold.min_rank() {
            return Err(SdpError::InvalidParameter(format!(
                "rank {p} below the manifold minimum {}",
                self.manifold.min_rank().max(1)
            )));
        }
        self.p = p;
        Ok(self)
    }

    /// Materialize `X` even when the factored path would suffice.
    pub fn with_explicit_x(mut self, on: bool) -> Self {
        self.force_explicit = on;
        self
    }

    pub fn f(&self) -> &SmoothOracle {
        &self.f
    }
    pub fn h(&self) -> &ProxOracle {
        &self.h
    }
    pub fn eq_map(&self) -> &SymLinearMap {
        &self.eq
    }
    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn ineq(&self) -> Option<&Inequalities> {
        self.ineq.as_ref()
    }
    pub fn manifold(&self) -> &ManifoldDescriptor {
        &self.manifold
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn n(&self) -> usize {
        self.manifold.n()
    }
    pub fn m(&self) -> usize {
        self.eq.m()
    }
    pub fn m_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |i| i.map.m())
    }
    pub fn m0(&self) -> usize {
        self.manifold.m0()
    }

    pub fn needs_explicit_x(&self) -> bool {
        self.force_explicit
            || !self.h.is_zero()
            || matches!(self.f, SmoothOracle::WeightedQuad { .. })
            || self.eq.has_dense()
            || self.ineq.as_ref().is_some_and(|i| i.map.has_dense())
    }

    /// Largest rank worth growing to. For linear problems every extreme
    /// optimal face contains a solution of rank `r` with
    /// `r(r+1)/2 <= m + m_I + m0`.
    pub fn p_max(&self) -> usize {
        let n = self.n();
        if self.f.is_linear() && self.h.is_zero() {
            let total = (self.m() + self.m_ineq() + self.m0()) as f64;
            n.min((2.0 * total).sqrt().ceil() as usize + 2).max(self.p.min(n))
        } else {
            n
        }
    }

    pub fn explicit_x(&self, r: &Factor) -> DMatrix<f64> {
        r.transpose() * r
    }

    pub fn eq_value(&self, r: &Factor, x: Option<&DMatrix<f64>>) -> Result<DVector<f64>> {
        match x {
            Some(x) => self.eq.apply(x),
            None => self.eq.apply_factored(r),
        }
    }

    pub fn ineq_value(&self, r: &Factor, x: Option<&DMatrix<f64>>) -> Result<DVector<f64>> {
        match (&self.ineq, x) {
            (None, _) => Ok(DVector::zeros(0)),
            (Some(i), Some(x)) => i.map.apply(x),
            (Some(i), None) => i.map.apply_factored(r),
        }
    }

    /// `grad f(X)` as an operator.
    pub fn grad_f_op<'a>(&'a self, r: &Factor, x: Option<&DMatrix<f64>>) -> Result<SymSum<'a>> {
        let mut s = SymSum::new(self.n());
        for t in self.f.grad_terms(r, x)? {
            s.push(t);
        }
        Ok(s)
    }

    /// Value, gradient and the cached quantities reused by Hessian products.
    pub fn evaluate(&self, ctx: &AlmContext, r: &Factor) -> Result<Evaluation> {
        self.check_factor(r)?;
        ctx.check(self)?;
        let sigma = ctx.sigma;
        let x = self.needs_explicit_x().then(|| self.explicit_x(r));
        let xr = x.as_ref();

        let f_value = self.f.value(r, xr)?;
        let eq_value = self.eq_value(r, xr)?;
        let eq_coef = (&eq_value - &self.b) * sigma - &ctx.y;
        let ineq_value = self.ineq_value(r, xr)?;
        let (ineq_coef, ineq_active) = match &self.ineq {
            Some(i) => {
                let raw = (&ineq_value - &i.rhs) * sigma + &ctx.y_ineq;
                let active: Vec<bool> = raw.iter().map(|&v| v > 0.0).collect();
                (raw.map(|v| v.max(0.0)), active)
            }
            None => (DVector::zeros(0), Vec::new()),
        };

        let (env, t, mask) = match (&self.h, &x) {
            (ProxOracle::Zero, _) => (0.0, None, None),
            (h, Some(x)) => {
                let z = ctx.z.as_ref().expect("checked by ctx.check");
                (
                    h.envelope_value(sigma, z, x)?,
                    Some(h.t_map(sigma, z, x)?),
                    Some(h.jacobian_mask(sigma, z, x)?),
                )
            }
            _ => unreachable!("nonzero h forces explicit X"),
        };

        let psi = f_value
            + env
            + eq_coef.norm_squared() / (2.0 * sigma)
            + ineq_coef.norm_squared() / (2.0 * sigma);
        if !psi.is_finite() {
            return Err(SdpError::NonFinite(format!("subproblem value at sigma = {sigma:.3e}")));
        }

        let mut ev = Evaluation {
            psi,
            f_value,
            egrad: DMatrix::zeros(0, 0),
            rgrad: DMatrix::zeros(0, 0),
            rg: DMatrix::zeros(0, 0),
            u: DVector::zeros(0),
            x,
            eq_value,
            ineq_value,
            eq_coef,
            ineq_coef,
            ineq_active,
            t,
            jac_mask: mask,
            grad_dense: None,
        };
        let rg = {
            let op = self.grad_phi_op(ctx, r, &ev)?;
            if ev.x.is_some() {
                let g = op.to_dense()?;
                let rg = r * &g;
                ev.grad_dense = Some(SymMatrix::Dense(g));
                rg
            } else {
                op.right_mul(r)?
            }
        };
        if rg.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("subproblem gradient".into()));
        }
        ev.u = self.manifold.solve_u(r, &rg)?;
        ev.egrad = &rg * 2.0;
        ev.rgrad = self.manifold.riem_grad(r, &ev.egrad, &ev.u)?;
        ev.rg = rg;
        Ok(ev)
    }

    /// `grad Phi(X)` as an operator, valid at the point `ev` was computed at.
    pub fn grad_phi_op<'a>(&'a self, ctx: &AlmContext, r: &Factor, ev: &'a Evaluation) -> Result<SymSum<'a>> {
        let mut s = SymSum::new(self.n());
        if let Some(g) = &ev.grad_dense {
            s.push(SymTerm::Matrix(1.0, g));
            return Ok(s);
        }
        for t in self.f.grad_terms(r, ev.x.as_ref())? {
            s.push(t);
        }
        if self.m() > 0 {
            s.push(SymTerm::Adjoint(&self.eq, ev.eq_coef.clone()));
        }
        if let Some(i) = &self.ineq {
            s.push(SymTerm::Adjoint(&i.map, ev.ineq_coef.clone()));
        }
        if let Some(t) = &ev.t {
            s.push(SymTerm::Owned(ctx.sigma, SymMatrix::Dense(t.clone())));
        }
        Ok(s)
    }

    /// `S = grad Phi(X) - B^*(u)`.
    pub fn s_op<'a>(&'a self, ctx: &AlmContext, r: &Factor, ev: &'a Evaluation) -> Result<SymSum<'a>> {
        let mut s = self.grad_phi_op(ctx, r, ev)?;
        s.push(self.manifold.adjoint_term(&(-&ev.u)));
        Ok(s)
    }

    /// `R M` where `M` is the chosen generalized Hessian of `Phi` applied to
    /// `U^T R + R^T U`.
    pub fn hess_phi_times_r(&self, ctx: &AlmContext, r: &Factor, ev: &Evaluation, u: &Factor) -> Result<Factor> {
        let sigma = ctx.sigma;
        let need_d = ev.x.is_some();
        let d = need_d.then(|| {
            let ur = u.transpose() * r;
            &ur + ur.transpose()
        });
        let mut m = SymSum::new(self.n());
        if self.m() > 0 {
            let a = self.eq.apply_sym_product(u, r)? * sigma;
            m.push(SymTerm::Adjoint(&self.eq, a));
        }
        if let Some(i) = &self.ineq {
            let mut a = match &d {
                Some(d) => i.map.apply(d)?,
                None => i.map.apply_sym_product(u, r)?,
            };
            for (v, &on) in a.iter_mut().zip(&ev.ineq_active) {
                *v = if on { sigma * *v } else { 0.0 };
            }
            m.push(SymTerm::Adjoint(&i.map, a));
        }
        for t in self.f.hess_terms(r, u, d.as_ref())? {
            m.push(t);
        }
        if let (Some(mask), Some(d)) = (&ev.jac_mask, &d) {
            m.push(SymTerm::Owned(sigma, SymMatrix::Dense(mask.component_mul(d))));
        }
        m.right_mul(r)
    }

    /// One element of the generalized Riemannian Hessian applied to tangent `u`.
    pub fn hess_vec(&self, ctx: &AlmContext, r: &Factor, ev: &Evaluation, u: &Factor) -> Result<Factor> {
        check_dim("hess_vec", r.nrows(), u.nrows())?;
        check_dim("hess_vec", r.ncols(), u.ncols())?;
        let hr = self.hess_phi_times_r(ctx, r, ev, u)?;
        let s = self.s_op(ctx, r, ev)?;
        self.manifold.riem_hess_vec(r, u, &s, &hr)
    }

    fn check_factor(&self, r: &Factor) -> Result<()> {
        check_dim("factor columns", self.n(), r.ncols())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("factor entry".into()));
        }
        Ok(())
    }
}

/// Multipliers and penalty of one outer iteration. `z` is `None` when `h = 0`.
#[derive(Debug, Clone)]
pub struct AlmContext {
    pub y: DVector<f64>,
    pub y_ineq: DVector<f64>,
    pub z: Option<DMatrix<f64>>,
    pub sigma: f64,
}

impl AlmContext {
    pub fn new(prob: &SdpProblem, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SdpError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        let n = prob.n();
        Ok(Self {
            y: DVector::zeros(prob.m()),
            y_ineq: DVector::zeros(prob.m_ineq()),
            z: (!prob.h().is_zero()).then(|| DMatrix::zeros(n, n)),
            sigma,
        })
    }

    fn check(&self, prob: &SdpProblem) -> Result<()> {
        check_dim("equality multiplier", prob.m(), self.y.len())?;
        check_dim("inequality multiplier", prob.m_ineq(), self.y_ineq.len())?;
        if !prob.h().is_zero() {
            let z = self.z.as_ref().ok_or_else(|| SdpError::InvalidParameter("missing Z multiplier".into()))?;
            check_dim("Z multiplier", prob.n(), z.nrows())?;
            check_dim("Z multiplier", prob.n(), z.ncols())?;
        }
        if self.y_ineq.iter().any(|&v| v < 0.0) {
            return Err(SdpError::InvalidParameter("inequality multipliers must be >= 0".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(SdpError::InvalidParameter("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Everything computed at one factor `R` for one `AlmContext`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub psi: f64,
    pub f_value: f64,
    /// Euclidean gradient `2 R grad Phi(X)`.
    pub egrad: Factor,
    /// Riemannian gradient `2 R S`.
    pub rgrad: Factor,
    /// `R grad Phi(X)`.
    pub rg: Factor,
    pub u: DVector<f64>,
    pub x: Option<DMatrix<f64>>,
    pub eq_value: DVector<f64>,
    pub ineq_value: DVector<f64>,
    eq_coef: DVector<f64>,
    ineq_coef: DVector<f64>,
    ineq_active: Vec<bool>,
    t: Option<DMatrix<f64>>,
    jac_mask: Option<DMatrix<f64>>,
    grad_dense: Option<SymMatrix>,
}

impl Evaluation {
    pub fn grad_norm(&self) -> f64 {
        self.rgrad.norm()
    }

    /// `T(X)` when `h` is nonzero.
    pub fn t_matrix(&self) -> Option<&DMatrix<f64>> {
        self.t.as_ref()
    }
}
