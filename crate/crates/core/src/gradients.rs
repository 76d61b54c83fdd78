//! Gradients of the log Hausdorff full conditionals of the latent positions.
//!
//! Two parametrizations are provided. The *constrained* form treats
//! `x_1..x_K` as free and `x_{K+1} = ±sqrt(1 - sum_{t<=K} x_t^2)` as
//! dependent, so its last entry is 0. The *unconstrained* form is the plain
//! Euclidean gradient of the same expression in `R^{K+1}`. They differ by a
//! multiple of `x`: `g_c = g_u - (g_u[K+1] / x_{K+1}) x`, hence they agree
//! after projection onto the tangent space, which is all GHMC uses.

use nalgebra::{DMatrix, DVector};

use crate::distributions::spherical_von_mises::{svm_hausdorff_kernel, SINGULAR_PARTIAL_SUM};
use crate::distributions::{LinkConcentration, SvMParams};
use crate::error::{Error, Result};
use crate::geometry::{dot, project_in_place, UnitVector};
use crate::model::{cell_log_lik, compute_e, Hyperparams, LatentConfiguration, VoteMatrix, THETA_FLOOR};

/// Below this `|x_{K+1}|` the constrained form is replaced by the projected
/// unconstrained gradient.
pub const CONSTRAINED_PIVOT_MIN: f64 = 1e-10;

/// `1 - d^2` below this uses the limit of `acos(d) / sqrt(1 - d^2)`.
const ACOS_GUARD: f64 = 1e-12;

/// Cartesian gradient, length K+1.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for GradientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// 0/1 masks that vectorize the prior+Jacobian gradient for a given K.
///
/// Rows index the free coordinates `x_1..x_K`.
/// `sigma_minus_1` is K x (K-1); column `c` stands for `1/S_{c+2}` and row
/// `t` picks it up when `c + 2 >= max(t, 2)` (1-based `t`).
/// `sigma_minus_2` is K x (K-2); column `c` stands for
/// `w_{c+2} x_{c+3}^2 / S_{c+3}^2` and row `t` picks it up when `t <= c + 3`.
/// Both are upper triangular apart from their shared leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMasks {
    k: usize,
    minus_1: DMatrix<f64>,
    minus_2: DMatrix<f64>,
}

impl TriangularMasks {
    pub fn new(k: usize) -> Self {
        let c1 = k.saturating_sub(1);
        let c2 = k.saturating_sub(2);
        let minus_1 = DMatrix::from_fn(k, c1, |r, c| if c + 1 >= r { 1.0 } else { 0.0 });
        let minus_2 = DMatrix::from_fn(k, c2, |r, c| if c + 2 >= r { 1.0 } else { 0.0 });
        Self { k, minus_1, minus_2 }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma_minus_1(&self) -> &DMatrix<f64> {
        &self.minus_1
    }

    pub fn sigma_minus_2(&self) -> &DMatrix<f64> {
        &self.minus_2
    }
}

fn check_dims(x: &[f64], omega: &[f64]) -> Result<()> {
    if x.len() != omega.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: omega.len() + 1,
            got: x.len(),
        });
    }
    Ok(())
}

/// Prefix sums `S_m = sum_{t<=m} x_t^2`, returned 0-based so `s[m-1] = S_m`.
fn prefix_sums(x: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
        s.push(acc);
    }
    s
}

/// Constrained gradient of the SvM log prior plus log Jacobian.
pub fn grad_prior_jacobian(x: &UnitVector, precisions: &SvMParams) -> Result<GradientVector> {
    let masks = TriangularMasks::new(precisions.len());
    grad_prior_jacobian_with(x.as_slice(), precisions.as_slice(), &masks)
}

/// As [`grad_prior_jacobian`] with prebuilt masks and raw slices.
pub fn grad_prior_jacobian_with(x: &[f64], omega: &[f64], masks: &TriangularMasks) -> Result<GradientVector> {
    check_dims(x, omega)?;
    let k = omega.len();
    if masks.k != k {
        return Err(Error::DimensionMismatch { expected: k, got: masks.k });
    }
    let s = prefix_sums(x);
    if s[1] < SINGULAR_PARTIAL_SUM {
        return Err(Error::SingularCoordinate(s[1]));
    }
    let mut g = vec![0.0; k + 1];
    if k == 1 {
        // x_1 / sqrt(S_2) = x_1 on the circle
        g[0] = omega[0];
        return Ok(GradientVector(g));
    }
    let xk = DVector::from_column_slice(&x[..k]);

    // 4 w_K x
    let mut out = xk.scale(4.0 * omega[k - 1]);

    // w_1 x_2 S_2^{-3/2} (x_2, -x_1, 0, ...)
    let c = omega[0] * x[1] / (s[1] * s[1].sqrt());
    out[0] += c * x[1];
    out[1] -= c * x[0];

    // 4 x o Sigma_{-2} (w_k x_{k+1}^2 / S_{k+1}^2), k = 2..K-1
    if k > 2 {
        let v = DVector::from_fn(k - 2, |c, _| {
            let kk = c + 2;
            omega[kk - 1] * x[kk] * x[kk] / (s[kk] * s[kk])
        });
        let m = &masks.minus_2 * v;
        out += xk.component_mul(&m).scale(4.0);
        // -4 w_k x_{k+1} / S_{k+1} in row k+1
        for kk in 2..k {
            out[kk] -= 4.0 * omega[kk - 1] * x[kk] / s[kk];
        }
    }

    // - x o Sigma_{-1} (1/S_2, ..., 1/S_K)
    let w = DVector::from_fn(k - 1, |c, _| 1.0 / s[c + 1]);
    let m = &masks.minus_1 * w;
    out -= xk.component_mul(&m);

    g[..k].copy_from_slice(out.as_slice());
    Ok(GradientVector(g))
}

/// Unconstrained gradient in `R^{K+1}` of the prior kernel plus log
/// Jacobian, with every partial sum (including `S_{K+1}`) computed from `x`.
pub fn grad_prior_jacobian_unconstrained(x: &[f64], omega: &[f64]) -> Result<GradientVector> {
    check_dims(x, omega)?;
    let k = omega.len();
    let s = prefix_sums(x);
    if s[1] < SINGULAR_PARTIAL_SUM {
        return Err(Error::SingularCoordinate(s[1]));
    }
    let mut g = vec![0.0; k + 1];
    let s2 = s[1];
    let c = omega[0] / (s2 * s2.sqrt());
    g[0] += c * x[1] * x[1];
    g[1] -= c * x[0] * x[1];
    // -w_k (2 x_{k+1}^2 / S_{k+1} - 1), k = 2..K
    for kk in 2..=k {
        let sk = s[kk];
        let xk1 = x[kk];
        let a = 4.0 * omega[kk - 1] * xk1 * xk1 / (sk * sk);
        for t in 0..=kk {
            g[t] += a * x[t];
        }
        g[kk] -= 4.0 * omega[kk - 1] * xk1 / sk;
    }
    // -1/2 sum_{k=1..K} ln S_{k+1}
    for kk in 1..=k {
        let inv = 1.0 / s[kk];
        for t in 0..=kk {
            g[t] -= x[t] * inv;
        }
    }
    Ok(GradientVector(g))
}

/// `g_u - (g_u[K+1] / x_{K+1}) x` with the last entry set to 0, or the
/// tangent projection of `g_u` when `|x_{K+1}|` is too small to divide by.
pub fn constrain_gradient(x: &[f64], mut g: Vec<f64>) -> Vec<f64> {
    let last = x.len() - 1;
    if x[last].abs() < CONSTRAINED_PIVOT_MIN {
        project_in_place(x, &mut g);
        return g;
    }
    let r = g[last] / x[last];
    for t in 0..last {
        g[t] -= r * x[t];
    }
    g[last] = 0.0;
    g
}

/// `2 acos(d) / sqrt(1 - d^2)`, i.e. `-d/dd acos(d)^2`, with the limit 2 at
/// `d -> 1` and `d` pulled back to `-1 + 1e-12` near the antipode.
#[inline]
pub fn acos_sq_slope(d: f64) -> f64 {
    let d = d.clamp(-1.0, 1.0);
    let one_m = 1.0 - d * d;
    if one_m < ACOS_GUARD {
        if d > 0.0 {
            return 2.0;
        }
        let d = -1.0 + ACOS_GUARD;
        return 2.0 * d.acos() / (1.0 - d * d).sqrt();
    }
    2.0 * d.acos() / one_m.sqrt()
}

/// `d/de` of the log-probability of one vote. Zero where the cell
/// probability is floored (the floored log-likelihood is flat there).
#[inline]
pub fn dloglik_de(vote: bool, e: f64, link: &LinkConcentration) -> f64 {
    let lg = link.ln_pdf(e);
    if lg == f64::NEG_INFINITY {
        return 0.0;
    }
    let (lo, hi) = link.ln_cdf_pair(e);
    let floor = THETA_FLOOR.ln();
    if vote {
        if lo < floor {
            return 0.0;
        }
        (lg - lo).exp()
    } else {
        if hi < floor {
            return 0.0;
        }
        -(lg - hi).exp()
    }
}

/// Which latent position a full conditional refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Beta(usize),
    Psi(usize),
    Zeta(usize),
}

/// Log Hausdorff full conditional of one latent position, up to a constant,
/// with every other quantity held fixed.
#[derive(Debug, Clone, Copy)]
pub struct FullConditional<'a> {
    pub y: &'a VoteMatrix,
    pub config: &'a LatentConfiguration,
    pub links: &'a [LinkConcentration],
    /// Prior precisions of the target's block.
    pub precisions: &'a SvMParams,
    pub masks: &'a TriangularMasks,
    pub target: Target,
}

impl<'a> FullConditional<'a> {
    fn accumulate(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let cfg = self.config;
        let mut ll = 0.0;
        let mut grad = grad;
        match self.target {
            Target::Beta(i) => {
                for &(j, v) in self.y.subject_votes(i) {
                    let (p, z) = (cfg.psi[j].as_slice(), cfg.zeta[j].as_slice());
                    let e = compute_e(p, z, x);
                    ll += cell_log_lik(v, e, &self.links[j]);
                    if let Some(g) = grad.as_deref_mut() {
                        let de = dloglik_de(v, e, &self.links[j]);
                        let ap = acos_sq_slope(dot(p, x));
                        let az = acos_sq_slope(dot(z, x));
                        for t in 0..g.len() {
                            g[t] += de * (ap * p[t] - az * z[t]);
                        }
                    }
                }
            }
            Target::Psi(j) | Target::Zeta(j) => {
                let is_psi = matches!(self.target, Target::Psi(_));
                for &(i, v) in self.y.item_votes(j) {
                    let b = cfg.beta[i].as_slice();
                    let e = if is_psi {
                        compute_e(x, cfg.zeta[j].as_slice(), b)
                    } else {
                        compute_e(cfg.psi[j].as_slice(), x, b)
                    };
                    ll += cell_log_lik(v, e, &self.links[j]);
                    if let Some(g) = grad.as_deref_mut() {
                        let de = dloglik_de(v, e, &self.links[j]);
                        let a = acos_sq_slope(dot(x, b));
                        let s = if is_psi { de * a } else { -de * a };
                        for t in 0..g.len() {
                            g[t] += s * b[t];
                        }
                    }
                }
            }
        }
        ll
    }

    /// Log-likelihood terms that involve the target, at position `x`.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.accumulate(x, None)
    }

    /// Unnormalized log full conditional at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let prior = svm_hausdorff_kernel(x, self.precisions.as_slice())?;
        Ok(self.accumulate(x, None) + prior)
    }

    /// Unconstrained gradient of the likelihood terms.
    pub fn grad_loglik_unconstrained(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.accumulate(x, Some(&mut g));
        g
    }

    /// Value and constrained gradient together, sharing the link evaluations.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let prior = svm_hausdorff_kernel(x, self.precisions.as_slice())?;
        let mut g = vec![0.0; x.len()];
        let ll = self.accumulate(x, Some(&mut g));
        let last = x.len() - 1;
        let g = if x[last].abs() < CONSTRAINED_PIVOT_MIN {
            let gp = grad_prior_jacobian_unconstrained(x, self.precisions.as_slice())?;
            g.iter_mut().zip(gp.as_slice()).for_each(|(a, b)| *a += b);
            project_in_place(x, &mut g);
            g
        } else {
            let gp = grad_prior_jacobian_with(x, self.precisions.as_slice(), self.masks)?;
            let mut g = constrain_gradient(x, g);
            g.iter_mut().zip(gp.as_slice()).for_each(|(a, b)| *a += b);
            g
        };
        Ok((ll + prior, g))
    }

    /// Constrained gradient of the full conditional.
    pub fn gradient(&self, x: &[f64]) -> Result<GradientVector> {
        Ok(GradientVector(self.value_and_gradient(x)?.1))
    }

    /// Unconstrained gradient of the full conditional.
    pub fn gradient_unconstrained(&self, x: &[f64]) -> Result<GradientVector> {
        let mut g = self.grad_loglik_unconstrained(x);
        let gp = grad_prior_jacobian_unconstrained(x, self.precisions.as_slice())?;
        g.iter_mut().zip(gp.as_slice()).for_each(|(a, b)| *a += b);
        Ok(GradientVector(g))
    }
}

/// Owns the link constants and prior settings needed to build
/// [`FullConditional`]s for one state of the chain.
#[derive(Debug, Clone)]
pub struct ConditionalContext {
    pub links: Vec<LinkConcentration>,
    pub subject_prior: SvMParams,
    pub item_prior: SvMParams,
    pub masks: TriangularMasks,
}

impl ConditionalContext {
    pub fn new(k: usize, hp: &Hyperparams) -> Result<Self> {
        Ok(Self {
            links: hp.link_concentrations()?,
            subject_prior: hp.subject_precisions(k)?,
            item_prior: hp.item_precisions(k)?,
            masks: TriangularMasks::new(k),
        })
    }

    pub fn conditional<'a>(
        &'a self,
        y: &'a VoteMatrix,
        config: &'a LatentConfiguration,
        target: Target,
    ) -> FullConditional<'a> {
        let precisions = match target {
            Target::Beta(_) => &self.subject_prior,
            _ => &self.item_prior,
        };
        FullConditional {
            y,
            config,
            links: &self.links,
            precisions,
            masks: &self.masks,
            target,
        }
    }
}

fn target_position(config: &LatentConfiguration, target: Target) -> &UnitVector {
    match target {
        Target::Beta(i) => &config.beta[i],
        Target::Psi(j) => &config.psi[j],
        Target::Zeta(j) => &config.zeta[j],
    }
}

fn grad_loglik(target: Target, y: &VoteMatrix, config: &LatentConfiguration, hp: &Hyperparams) -> Result<GradientVector> {
    config.check_against(y)?;
    let ctx = ConditionalContext::new(config.k(), hp)?;
    let fc = ctx.conditional(y, config, target);
    let x = target_position(config, target).as_slice();
    Ok(GradientVector(constrain_gradient(x, fc.grad_loglik_unconstrained(x))))
}

/// Constrained gradient of the log-likelihood with respect to `beta_i`.
pub fn grad_loglik_beta(i: usize, y: &VoteMatrix, config: &LatentConfiguration, hp: &Hyperparams) -> Result<GradientVector> {
    grad_loglik(Target::Beta(i), y, config, hp)
}

/// Constrained gradient of the log-likelihood with respect to `zeta_j`.
pub fn grad_loglik_zeta(j: usize, y: &VoteMatrix, config: &LatentConfiguration, hp: &Hyperparams) -> Result<GradientVector> {
    grad_loglik(Target::Zeta(j), y, config, hp)
}

/// Constrained gradient of the log-likelihood with respect to `psi_j`.
pub fn grad_loglik_psi(j: usize, y: &VoteMatrix, config: &LatentConfiguration, hp: &Hyperparams) -> Result<GradientVector> {
    grad_loglik(Target::Psi(j), y, config, hp)
}

/// Likelihood plus prior plus Jacobian gradient for `target`, the vector
/// handed to GHMC.
pub fn grad_full_conditional(
    target: Target,
    y: &VoteMatrix,
    config: &LatentConfiguration,
    hp: &Hyperparams,
) -> Result<GradientVector> {
    config.check_against(y)?;
    let ctx = ConditionalContext::new(config.k(), hp)?;
    let fc = ctx.conditional(y, config, target);
    fc.gradient(target_position(config, target).as_slice())
}

/// Central differences over the K free coordinates of the constrained
/// parametrization; `x_{K+1}` is recomputed from the unit norm with its sign
/// kept. Entry K+1 of the result is 0.
pub fn finite_difference_gradient<F>(logdensity: F, x: &UnitVector, h: f64) -> Result<GradientVector>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let xs = x.as_slice();
    let last = xs.len() - 1;
    let sign = if xs[last] < 0.0 { -1.0 } else { 1.0 };
    let mut g = vec![0.0; xs.len()];
    let eval = |pt: &mut Vec<f64>| -> Result<f64> {
        let s: f64 = pt[..last].iter().map(|v| v * v).sum();
        if s > 1.0 {
            return Err(Error::Domain("finite-difference step leaves the sphere".into()));
        }
        pt[last] = sign * (1.0 - s).sqrt();
        logdensity(pt)
    };
    for t in 0..last {
        if !(h > 0.0) || xs[t] + h == xs[t] {
            return Err(Error::InvalidParameter(format!("finite-difference step {h} underflows")));
        }
        let mut plus = xs.to_vec();
        plus[t] += h;
        let mut minus = xs.to_vec();
        minus[t] -= h;
        g[t] = (eval(&mut plus)? - eval(&mut minus)?) / (2.0 * h);
    }
    Ok(GradientVector(g))
}
