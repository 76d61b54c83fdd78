//! Densities, samplers and special functions used by the models.

pub mod link;
pub mod special;
pub mod spherical_von_mises;
pub mod von_mises_fisher;

pub use link::{
    link_cdf, link_clamp_events, link_gaussian_approx, link_pdf, LinkConcentration, LinkMode,
    PI_SQ,
};
pub use special::{log_bessel_i, log_bessel_i0};
pub use spherical_von_mises::{
    svm_log_density_angles, svm_log_density_hausdorff, svm_sample, von_mises_sample, SvMParams,
};
pub use von_mises_fisher::{vmf_log_density, vmf_sample, VmfParams};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Gamma hyperprior settings. Every `Gam(a, b)` is shape `a`, **rate** `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperpriorConfig {
    pub a_omega: f64,
    pub b_omega: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_lambda: f64,
    pub b_lambda: f64,
    /// Shape of the `kappa_j ~ Gam(c, lambda)` prior.
    pub c: f64,
}

impl Default for HyperpriorConfig {
    fn default() -> Self {
        Self {
            a_omega: 1.0,
            b_omega: 0.1,
            a_tau: 1.0,
            b_tau: 5.0,
            a_lambda: 2.0,
            b_lambda: 150.0,
            c: 1.0,
        }
    }
}

impl HyperpriorConfig {
    /// The sensitivity-analysis setting: `b_tau = 1/10`, `b_lambda = 25`.
    pub fn alternative() -> Self {
        Self {
            b_tau: 0.1,
            b_lambda: 25.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("a_omega", self.a_omega),
            ("b_omega", self.b_omega),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("c", self.c),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "hyperprior {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Gamma(shape, rate) log density; `-inf` for `x <= 0`.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Gamma(shape, rate) draw.
pub fn gamma_sample<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    use rand_distr::{Distribution, Gamma};
    Gamma::new(shape, 1.0 / rate)
        .expect("positive gamma parameters")
        .sample(rng)
}
