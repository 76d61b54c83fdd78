//! Spherical von Mises distribution: independent von Mises angles
//! `phi_1 ~ vM(0, w_1)` on `[-pi, pi]` and `phi_k` with density
//! proportional to `exp(w_k cos 2 phi_k)` on `[-pi/2, pi/2]`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use super::special::log_bessel_i0_unchecked;
use crate::error::{Error, Result};
use crate::geometry::{AngularCoords, UnitVector};

/// Partial sums of squares below this make the Cartesian form singular.
pub const SINGULAR_PARTIAL_SUM: f64 = 1e-14;

/// Dimension-specific precisions `(w_1, ..., w_K)`, all positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SvMParams(Vec<f64>);

impl SvMParams {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidParameter("SvM needs at least one precision".into()));
        }
        if let Some(bad) = omega.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "SvM precisions must be positive and finite, got {bad}"
            )));
        }
        Ok(SvMParams(omega))
    }

    /// `base * (1, 2^2, 3^2, ..., K^2)`.
    pub fn polynomial(base: f64, k: usize) -> Result<Self> {
        Self::new((1..=k).map(|d| base * (d * d) as f64).collect())
    }

    /// `(w, w, ..., w)`.
    pub fn constant(w: f64, k: usize) -> Result<Self> {
        Self::new(vec![w; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `-log(2 pi I0(w_1)) - sum_{k>=2} log(pi I0(w_k))`.
    pub fn log_normalizer(&self) -> f64 {
        let w = &self.0;
        let mut c = -(2.0 * PI).ln() - log_bessel_i0_unchecked(w[0]);
        for &wk in &w[1..] {
            c -= PI.ln() + log_bessel_i0_unchecked(wk);
        }
        c
    }
}

/// Log density of the angles with respect to Lebesgue measure on
/// `[-pi, pi] x [-pi/2, pi/2]^{K-1}`.
pub fn svm_log_density_angles(phi: &AngularCoords, params: &SvMParams) -> Result<f64> {
    if phi.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: phi.len(),
        });
    }
    let p = phi.as_slice();
    let w = params.as_slice();
    let mut v = params.log_normalizer() + w[0] * p[0].cos();
    for k in 1..p.len() {
        v += w[k] * (2.0 * p[k]).cos();
    }
    Ok(v)
}

/// Log density with respect to the surface measure of S^K, written in
/// Cartesian coordinates. Includes the change-of-variables factor
/// `1 / prod_k sqrt(S_{k+1})` with `S_m = sum_{t<=m} x_t^2`.
pub fn svm_log_density_hausdorff(x: &UnitVector, params: &SvMParams) -> Result<f64> {
    if x.sphere_dim() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len() + 1,
            got: x.len(),
        });
    }
    Ok(params.log_normalizer() + svm_hausdorff_kernel(x.as_slice(), params.as_slice())?)
}

/// Unnormalized part of [`svm_log_density_hausdorff`]: kernel plus log
/// Jacobian, evaluated from raw coordinates.
pub fn svm_hausdorff_kernel(x: &[f64], omega: &[f64]) -> Result<f64> {
    let k = omega.len();
    let mut prefix = x[0] * x[0] + x[1] * x[1];
    if prefix < SINGULAR_PARTIAL_SUM {
        return Err(Error::SingularCoordinate(prefix));
    }
    let mut v = omega[0] * x[0] / prefix.sqrt() - 0.5 * prefix.ln();
    for d in 2..=k {
        // prefix currently holds S_d, add x_{d+1}^2 to get S_{d+1}
        let xd = x[d];
        prefix += xd * xd;
        v += -omega[d - 1] * (2.0 * xd * xd / prefix - 1.0) - 0.5 * prefix.ln();
    }
    Ok(v)
}

/// Sufficient statistics of one point for the precision update:
/// `(cos phi_1, cos 2 phi_2, ..., cos 2 phi_K)` from Cartesian coordinates.
pub fn svm_cosines(x: &[f64], out: &mut [f64]) -> Result<()> {
    let k = out.len();
    let mut prefix = x[0] * x[0] + x[1] * x[1];
    if prefix < SINGULAR_PARTIAL_SUM {
        return Err(Error::SingularCoordinate(prefix));
    }
    out[0] = x[0] / prefix.sqrt();
    for d in 2..=k {
        let xd = x[d];
        prefix += xd * xd;
        out[d - 1] = 1.0 - 2.0 * xd * xd / prefix;
    }
    Ok(())
}

/// Draws from von Mises(0, kappa) on `[-pi, pi]` (Best-Fisher rejection;
/// normal approximation above `kappa = 1e6`).
pub fn von_mises_sample<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-8 {
        return PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    if kappa > 1e6 {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) / kappa.sqrt();
        return wrap_angle(v);
    }
    let s = if kappa < 1e-5 {
        1.0 / kappa + kappa
    } else {
        let r = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
        let rho = (r - (2.0 * r).sqrt()) / (2.0 * kappa);
        (1.0 + rho * rho) / (2.0 * rho)
    };
    let w = loop {
        let u: f64 = rng.random();
        let z = (PI * u).cos();
        let w = (1.0 + s * z) / (s + z);
        let y = kappa * (s - w);
        let v: f64 = rng.random();
        if y * (2.0 - y) - v >= 0.0 || (y / v).ln() + 1.0 - y >= 0.0 {
            break w;
        }
    };
    let angle = w.clamp(-1.0, 1.0).acos();
    if rng.random::<f64>() < 0.5 {
        -angle
    } else {
        angle
    }
}

fn wrap_angle(v: f64) -> f64 {
    let mut a = (v + PI).rem_euclid(2.0 * PI) - PI;
    if a < -PI {
        a = -PI;
    }
    a
}

/// Exact draw: `phi_1 ~ vM(0, w_1)`, and for `k >= 2`, `2 phi_k ~ vM(0, w_k)`.
pub fn svm_sample<R: Rng + ?Sized>(params: &SvMParams, rng: &mut R) -> AngularCoords {
    let w = params.as_slice();
    let mut phi = Vec::with_capacity(w.len());
    phi.push(von_mises_sample(w[0], rng));
    for &wk in &w[1..] {
        phi.push((0.5 * von_mises_sample(wk, rng)).clamp(-FRAC_PI_2, FRAC_PI_2));
    }
    AngularCoords::new(phi).expect("sampled angles are in range")
}
