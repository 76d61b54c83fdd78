//! von Mises-Fisher distribution on S^{d-1}.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::special::log_bessel_i;
use crate::error::{Error, Result};
use crate::geometry::{dot, UnitVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub eta: UnitVector,
    pub omega: f64,
}

impl VmfParams {
    pub fn new(eta: UnitVector, omega: f64) -> Result<Self> {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "vMF precision must be >= 0, got {omega}"
            )));
        }
        Ok(Self { eta, omega })
    }
}

/// `log` of the surface area of S^{d-1}, `2 pi^{d/2} / Gamma(d/2)`.
pub fn ln_sphere_area(d: usize) -> f64 {
    let h = 0.5 * d as f64;
    std::f64::consts::LN_2 + h * PI.ln() - ln_gamma(h)
}

/// Log density with respect to surface measure.
pub fn vmf_log_density(x: &UnitVector, params: &VmfParams) -> Result<f64> {
    if x.len() != params.eta.len() {
        return Err(Error::DimensionMismatch {
            expected: params.eta.len(),
            got: x.len(),
        });
    }
    let d = x.len() as f64;
    let w = params.omega;
    if w == 0.0 {
        return Ok(-ln_sphere_area(x.len()));
    }
    let nu = 0.5 * d - 1.0;
    let ln_c = nu * w.ln() - 0.5 * d * (2.0 * PI).ln() - log_bessel_i(nu, w)?;
    Ok(ln_c + w * dot(params.eta.as_slice(), x.as_slice()))
}

/// Wood's rejection sampler for the component along the mean direction,
/// followed by a uniform tangent direction and a Householder reflection
/// taking `e_1` to `eta`.
pub fn vmf_sample<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> UnitVector {
    let d = params.eta.len();
    if params.omega == 0.0 {
        return UnitVector::random(d - 1, rng);
    }
    let w = params.omega;
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * w + (4.0 * w * w + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = w * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * dm1, 0.5 * dm1).expect("valid beta shape");
    let t = loop {
        let z: f64 = beta.sample(rng);
        let t = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if w * t + dm1 * (1.0 - x0 * t).ln() - c >= u.ln() {
            break t;
        }
    };
    // uniform direction orthogonal to e_1
    let mut v: Vec<f64> = (0..d - 1).map(|_| rng.sample(StandardNormal)).collect();
    let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= vn);
    let r = (1.0 - t * t).max(0.0).sqrt();
    let mut x = Vec::with_capacity(d);
    x.push(t);
    x.extend(v.iter().map(|a| r * a));

    // reflect e_1 onto eta: H = I - 2 u u^T with u = (e_1 - eta)/|e_1 - eta|
    let eta = params.eta.as_slice();
    let mut u: Vec<f64> = eta.iter().map(|e| -e).collect();
    u[0] += 1.0;
    let un = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    if un > 1e-12 {
        u.iter_mut().for_each(|a| *a /= un);
        let proj = dot(&u, &x);
        x.iter_mut().zip(&u).for_each(|(xi, ui)| *xi -= 2.0 * proj * ui);
    }
    UnitVector::from_unnormalized(x)
}
