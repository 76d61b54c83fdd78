//! Link function of the spherical model: the CDF of a Beta(kappa, kappa)
//! variable shifted and scaled onto `[-pi^2, pi^2]`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use super::special::{ln_beta_symmetric, ln_inc_beta_pair};
use crate::error::{Error, Result};

pub const PI_SQ: f64 = PI * PI;

/// Out-of-domain arguments clamped since process start.
static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

pub fn link_clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// How arguments outside `[-pi^2, pi^2]` are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMode {
    /// Clamp to the boundary and count the event.
    #[default]
    Clamp,
    /// Reject with a domain error.
    Strict,
}

/// Link concentration `kappa > 0` with its cached `log B(kappa, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConcentration {
    kappa: f64,
    ln_beta: f64,
}

impl LinkConcentration {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "link concentration must be positive and finite, got {kappa}"
            )));
        }
        Ok(Self {
            kappa,
            ln_beta: ln_beta_symmetric(kappa),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `(G(z), 1 - G(z))`, each accurate in its own tail.
    #[inline]
    pub fn cdf_pair(&self, z: f64) -> (f64, f64) {
        let (lo, hi) = self.ln_cdf_pair(z);
        (lo.exp(), hi.exp())
    }

    /// `(log G(z), log(1 - G(z)))` for `z` already inside the domain.
    #[inline]
    pub fn ln_cdf_pair(&self, z: f64) -> (f64, f64) {
        let u = to_unit(z);
        ln_inc_beta_pair(self.kappa, self.kappa, u, self.ln_beta)
    }

    /// `log g(z)`; `-inf` at the endpoints when `kappa > 1`.
    #[inline]
    pub fn ln_pdf(&self, z: f64) -> f64 {
        let u = to_unit(z);
        let inner = (self.kappa - 1.0) * (u.ln() + (-u).ln_1p());
        if self.kappa == 1.0 {
            return -(2.0 * PI_SQ).ln();
        }
        inner - self.ln_beta - (2.0 * PI_SQ).ln()
    }
}

#[inline]
fn to_unit(z: f64) -> f64 {
    ((z + PI_SQ) / (2.0 * PI_SQ)).clamp(0.0, 1.0)
}

/// Brings `z` into `[-pi^2, pi^2]` according to `mode`.
pub fn check_link_arg(z: f64, mode: LinkMode) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::Domain("link argument is NaN".into()));
    }
    if z.abs() <= PI_SQ {
        return Ok(z);
    }
    match mode {
        LinkMode::Strict => Err(Error::Domain(format!(
            "link argument {z} outside [-pi^2, pi^2]"
        ))),
        LinkMode::Clamp => {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            if z.abs() > PI_SQ + 1e-9 {
                log::warn!("link argument {z} clamped to [-pi^2, pi^2]");
            }
            Ok(z.clamp(-PI_SQ, PI_SQ))
        }
    }
}

/// `G_kappa(z) = I_u(kappa, kappa)` with `u = (z + pi^2) / (2 pi^2)`.
pub fn link_cdf(z: f64, kappa: &LinkConcentration, mode: LinkMode) -> Result<f64> {
    let z = check_link_arg(z, mode)?;
    Ok(kappa.cdf_pair(z).0)
}

/// Density `g_kappa(z) = dG/dz`.
pub fn link_pdf(z: f64, kappa: &LinkConcentration, mode: LinkMode) -> Result<f64> {
    let z = check_link_arg(z, mode)?;
    Ok(kappa.ln_pdf(z).exp())
}

/// Zero-mean normal density with the variance `pi^4 / (2 kappa + 1)` of the
/// link density, the large-`kappa` limit of `g_kappa`.
pub fn link_gaussian_approx(z: f64, kappa: f64) -> f64 {
    let prec = 2.0 * kappa + 1.0;
    (prec / (2.0 * PI.powi(5))).sqrt() * (-prec * z * z / (2.0 * PI.powi(4))).exp()
}
