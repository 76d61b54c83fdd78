//! Spherical factor model: likelihood, priors on the latent positions and
//! hyperparameters, prior-predictive simulation; plus the Euclidean probit
//! baseline.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::special::normal_cdf;
use crate::distributions::{
    gamma_log_density, gamma_sample, svm_sample, HyperpriorConfig, LinkConcentration, SvMParams,
    PI_SQ,
};
use crate::distributions::spherical_von_mises::svm_hausdorff_kernel;
use crate::error::{Error, Result};
use crate::geometry::{arc_distance, spherical_to_cartesian, UnitVector};

/// Smallest probability allowed into a log.
pub const THETA_FLOOR: f64 = 1e-300;

static THETA_FLOOR_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a cell probability hit [`THETA_FLOOR`] since start-up.
pub fn theta_floor_events() -> u64 {
    THETA_FLOOR_EVENTS.load(Ordering::Relaxed)
}

/// I x J binary responses with an explicit missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    n_subjects: usize,
    n_items: usize,
    cells: Vec<Option<bool>>,
    subject_ids: Vec<String>,
    item_ids: Vec<String>,
    by_subject: Vec<Vec<(usize, bool)>>,
    by_item: Vec<Vec<(usize, bool)>>,
}

impl VoteMatrix {
    /// Row-major cells; ids default to `s1..sI` and `v1..vJ`.
    pub fn new(n_subjects: usize, n_items: usize, cells: Vec<Option<bool>>) -> Result<Self> {
        let subject_ids = (1..=n_subjects).map(|i| format!("s{i}")).collect();
        let item_ids = (1..=n_items).map(|j| format!("v{j}")).collect();
        Self::with_ids(subject_ids, item_ids, cells)
    }

    pub fn with_ids(
        subject_ids: Vec<String>,
        item_ids: Vec<String>,
        cells: Vec<Option<bool>>,
    ) -> Result<Self> {
        let (n_subjects, n_items) = (subject_ids.len(), item_ids.len());
        if n_subjects == 0 || n_items == 0 {
            return Err(Error::InvalidParameter(
                "vote matrix needs at least one subject and one item".into(),
            ));
        }
        if cells.len() != n_subjects * n_items {
            return Err(Error::DimensionMismatch {
                expected: n_subjects * n_items,
                got: cells.len(),
            });
        }
        let mut by_subject = vec![Vec::new(); n_subjects];
        let mut by_item = vec![Vec::new(); n_items];
        for i in 0..n_subjects {
            for j in 0..n_items {
                if let Some(v) = cells[i * n_items + j] {
                    by_subject[i].push((j, v));
                    by_item[j].push((i, v));
                }
            }
        }
        Ok(Self {
            n_subjects,
            n_items,
            cells,
            subject_ids,
            item_ids,
            by_subject,
            by_item,
        })
    }

    pub fn from_rows(rows: &[Vec<Option<bool>>]) -> Result<Self> {
        let j = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != j) {
            return Err(Error::InvalidParameter("ragged vote rows".into()));
        }
        Self::new(rows.len(), j, rows.concat())
    }

    /// A matrix with every cell missing.
    pub fn empty(n_subjects: usize, n_items: usize) -> Result<Self> {
        Self::new(n_subjects, n_items, vec![None; n_subjects * n_items])
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.cells[i * self.n_items + j]
    }

    pub fn cells(&self) -> &[Option<bool>] {
        &self.cells
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Observed `(item, vote)` pairs of subject `i`.
    pub fn subject_votes(&self, i: usize) -> &[(usize, bool)] {
        &self.by_subject[i]
    }

    /// Observed `(subject, vote)` pairs of item `j`.
    pub fn item_votes(&self, j: usize) -> &[(usize, bool)] {
        &self.by_item[j]
    }

    pub fn n_observed(&self) -> usize {
        self.by_subject.iter().map(Vec::len).sum()
    }

    pub fn missing_fraction(&self) -> f64 {
        1.0 - self.n_observed() as f64 / self.cells.len() as f64
    }

    /// Keeps the listed subjects, in the given order.
    pub fn select_subjects(&self, keep: &[usize]) -> Result<Self> {
        let mut cells = Vec::with_capacity(keep.len() * self.n_items);
        for &i in keep {
            cells.extend_from_slice(&self.cells[i * self.n_items..(i + 1) * self.n_items]);
        }
        Self::with_ids(
            keep.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            self.item_ids.clone(),
            cells,
        )
    }

    /// SHA-256 over the shape and cell values (ids excluded).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_subjects as u64).to_le_bytes());
        h.update((self.n_items as u64).to_le_bytes());
        let bytes: Vec<u8> = self
            .cells
            .iter()
            .map(|c| match c {
                None => 2,
                Some(false) => 0,
                Some(true) => 1,
            })
            .collect();
        h.update(&bytes);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Positions of all subjects and items on S^K for one state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfiguration {
    pub beta: Vec<UnitVector>,
    pub psi: Vec<UnitVector>,
    pub zeta: Vec<UnitVector>,
}

impl LatentConfiguration {
    pub fn new(beta: Vec<UnitVector>, psi: Vec<UnitVector>, zeta: Vec<UnitVector>) -> Result<Self> {
        let cfg = Self { beta, psi, zeta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sphere dimension K.
    pub fn k(&self) -> usize {
        self.beta[0].sphere_dim()
    }

    pub fn n_subjects(&self) -> usize {
        self.beta.len()
    }

    pub fn n_items(&self) -> usize {
        self.psi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() || self.psi.is_empty() {
            return Err(Error::InvalidParameter("empty configuration".into()));
        }
        if self.psi.len() != self.zeta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.psi.len(),
                got: self.zeta.len(),
            });
        }
        let d = self.beta[0].len();
        for x in self.beta.iter().chain(&self.psi).chain(&self.zeta) {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
        }
        Ok(())
    }

    pub fn check_against(&self, y: &VoteMatrix) -> Result<()> {
        if self.n_subjects() != y.n_subjects() {
            return Err(Error::DimensionMismatch {
                expected: y.n_subjects(),
                got: self.n_subjects(),
            });
        }
        if self.n_items() != y.n_items() {
            return Err(Error::DimensionMismatch {
                expected: y.n_items(),
                got: self.n_items(),
            });
        }
        Ok(())
    }

    /// Independent draws from the SvM priors with precision scales `omega`
    /// (subjects) and `tau` (items).
    pub fn sample_prior<R: Rng + ?Sized>(
        k: usize,
        n_subjects: usize,
        n_items: usize,
        omega: f64,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let pb = SvMParams::polynomial(omega, k)?;
        let pi = SvMParams::polynomial(tau, k)?;
        let beta = (0..n_subjects)
            .map(|_| spherical_to_cartesian(&svm_sample(&pb, rng)))
            .collect();
        let mut psi = Vec::with_capacity(n_items);
        let mut zeta = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            psi.push(spherical_to_cartesian(&svm_sample(&pi, rng)));
            zeta.push(spherical_to_cartesian(&svm_sample(&pi, rng)));
        }
        Self::new(beta, psi, zeta)
    }
}

/// Scalar parameters of the spherical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub omega: f64,
    pub tau: f64,
    pub kappa: Vec<f64>,
    pub lambda: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v > 0.0) || !v.is_finite();
        if bad(self.omega) || bad(self.tau) || bad(self.lambda) || self.kappa.iter().any(|&k| bad(k))
        {
            return Err(Error::InvalidParameter(
                "hyperparameters must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn link_concentrations(&self) -> Result<Vec<LinkConcentration>> {
        self.kappa.iter().map(|&k| LinkConcentration::new(k)).collect()
    }

    pub fn subject_precisions(&self, k: usize) -> Result<SvMParams> {
        SvMParams::polynomial(self.omega, k)
    }

    pub fn item_precisions(&self, k: usize) -> Result<SvMParams> {
        SvMParams::polynomial(self.tau, k)
    }
}

/// `e = rho(zeta, beta)^2 - rho(psi, beta)^2`, in `[-pi^2, pi^2]`.
#[inline]
pub fn compute_e(psi: &[f64], zeta: &[f64], beta: &[f64]) -> f64 {
    let a = arc_distance(zeta, beta);
    let b = arc_distance(psi, beta);
    (a * a - b * b).clamp(-PI_SQ, PI_SQ)
}

/// Log-probability of one observed vote given `e`.
#[inline]
pub fn cell_log_lik(vote: bool, e: f64, link: &LinkConcentration) -> f64 {
    let (lg, lg1) = link.ln_cdf_pair(e);
    let v = if vote { lg } else { lg1 };
    floor_log(v)
}

#[inline]
fn floor_log(v: f64) -> f64 {
    let lo = THETA_FLOOR.ln();
    if v < lo || v.is_nan() {
        THETA_FLOOR_EVENTS.fetch_add(1, Ordering::Relaxed);
        lo
    } else {
        v
    }
}

/// `theta_{ij} = G_{kappa_j}(e_{ij})`.
pub fn theta(i: usize, j: usize, config: &LatentConfiguration, hp: &Hyperparams) -> Result<f64> {
    let link = LinkConcentration::new(hp.kappa[j])?;
    let e = compute_e(
        config.psi[j].as_slice(),
        config.zeta[j].as_slice(),
        config.beta[i].as_slice(),
    );
    Ok(link.cdf_pair(e).0)
}

/// Full I x J matrix of cell probabilities, row-major.
pub fn theta_matrix(config: &LatentConfiguration, hp: &Hyperparams) -> Result<Vec<f64>> {
    let links = hp.link_concentrations()?;
    let (ni, nj) = (config.n_subjects(), config.n_items());
    let mut out = Vec::with_capacity(ni * nj);
    for b in &config.beta {
        for j in 0..nj {
            let e = compute_e(config.psi[j].as_slice(), config.zeta[j].as_slice(), b.as_slice());
            out.push(links[j].cdf_pair(e).0);
        }
    }
    Ok(out)
}

/// Bernoulli log-likelihood over observed cells; missing cells contribute 0.
pub fn spherical_log_likelihood(
    y: &VoteMatrix,
    config: &LatentConfiguration,
    hp: &Hyperparams,
) -> Result<f64> {
    config.check_against(y)?;
    let links = hp.link_concentrations()?;
    Ok(log_likelihood_with(y, config, &links))
}

/// As [`spherical_log_likelihood`] with precomputed link constants.
/// Sums by subject in index order.
pub fn log_likelihood_with(
    y: &VoteMatrix,
    config: &LatentConfiguration,
    links: &[LinkConcentration],
) -> f64 {
    let mut total = 0.0;
    for (i, b) in config.beta.iter().enumerate() {
        for &(j, v) in y.subject_votes(i) {
            let e = compute_e(config.psi[j].as_slice(), config.zeta[j].as_slice(), b.as_slice());
            total += cell_log_lik(v, e, &links[j]);
        }
    }
    total
}

/// Log-likelihood from a given matrix of cell probabilities.
pub fn log_likelihood_from_theta(y: &VoteMatrix, theta: &[f64]) -> f64 {
    let nj = y.n_items();
    let mut total = 0.0;
    for i in 0..y.n_subjects() {
        for &(j, v) in y.subject_votes(i) {
            let t = theta[i * nj + j];
            let p = if v { t } else { 1.0 - t };
            total += floor_log(p.ln());
        }
    }
    total
}

/// Sum of SvM Hausdorff log densities of all positions, with precisions
/// `(w, 4w, ..., K^2 w)` for `w = omega` (subjects) and `w = tau` (items).
pub fn log_prior_latent(config: &LatentConfiguration, hp: &Hyperparams) -> Result<f64> {
    let k = config.k();
    let pb = hp.subject_precisions(k)?;
    let pi = hp.item_precisions(k)?;
    let (cb, ci) = (pb.log_normalizer(), pi.log_normalizer());
    let mut total = 0.0;
    for x in &config.beta {
        total += cb + svm_hausdorff_kernel(x.as_slice(), pb.as_slice())?;
    }
    for x in config.psi.iter().chain(&config.zeta) {
        total += ci + svm_hausdorff_kernel(x.as_slice(), pi.as_slice())?;
    }
    Ok(total)
}

/// Gamma log densities of `omega`, `tau`, each `kappa_j` given `lambda`,
/// and `lambda`. Shape/rate throughout; `-inf` for nonpositive values.
pub fn log_hyperprior(hp: &Hyperparams, cfg: &HyperpriorConfig) -> f64 {
    let mut v = gamma_log_density(hp.omega, cfg.a_omega, cfg.b_omega)
        + gamma_log_density(hp.tau, cfg.a_tau, cfg.b_tau)
        + gamma_log_density(hp.lambda, cfg.a_lambda, cfg.b_lambda);
    for &k in &hp.kappa {
        v += gamma_log_density(k, cfg.c, hp.lambda);
    }
    v
}

/// Draws of a single `theta_{ij}` from the prior, with the scalar
/// parameters themselves drawn from the hyperpriors for every replicate.
pub fn prior_predictive_theta<R: Rng + ?Sized>(
    k: usize,
    cfg: &HyperpriorConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let omega = gamma_sample(cfg.a_omega, cfg.b_omega, rng);
        let tau = gamma_sample(cfg.a_tau, cfg.b_tau, rng);
        let lambda = gamma_sample(cfg.a_lambda, cfg.b_lambda, rng);
        let kappa = gamma_sample(cfg.c, lambda, rng);
        out.push(draw_theta(k, omega, tau, kappa, rng)?);
    }
    Ok(out)
}

/// As [`prior_predictive_theta`] with `omega`, `tau`, `kappa` held fixed.
pub fn prior_predictive_theta_fixed<R: Rng + ?Sized>(
    k: usize,
    omega: f64,
    tau: f64,
    kappa: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    (0..n).map(|_| draw_theta(k, omega, tau, kappa, rng)).collect()
}

fn draw_theta<R: Rng + ?Sized>(k: usize, omega: f64, tau: f64, kappa: f64, rng: &mut R) -> Result<f64> {
    // Gamma draws can underflow to 0 for tiny shapes
    let tiny = f64::MIN_POSITIVE;
    let pb = SvMParams::polynomial(omega.max(tiny), k)?;
    let pi = SvMParams::polynomial(tau.max(tiny), k)?;
    let link = LinkConcentration::new(kappa.max(tiny))?;
    let b = spherical_to_cartesian(&svm_sample(&pb, rng));
    let p = spherical_to_cartesian(&svm_sample(&pi, rng));
    let z = spherical_to_cartesian(&svm_sample(&pi, rng));
    Ok(link.cdf_pair(compute_e(p.as_slice(), z.as_slice(), b.as_slice())).0)
}

/// Parameters of the Euclidean probit factor model (`sigma_j = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanParams {
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl EuclideanParams {
    pub fn k(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    /// `mu_j + alpha_j^T beta_i`.
    #[inline]
    pub fn linear_predictor(&self, i: usize, j: usize) -> f64 {
        self.mu[j]
            + self.alpha[j]
                .iter()
                .zip(&self.beta[i])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Draw from the baseline prior: `mu_j, alpha_jk ~ N(0, 1/2)`,
    /// `beta_ik ~ N(0, 6/(pi k)^2)`.
    pub fn sample_prior<R: Rng + ?Sized>(k: usize, n_subjects: usize, n_items: usize, rng: &mut R) -> Self {
        let half = Normal::new(0.0, 0.5f64.sqrt()).expect("valid sd");
        let sds = euclidean_trait_sds(k);
        let mu = (0..n_items).map(|_| half.sample(rng)).collect();
        let alpha = (0..n_items)
            .map(|_| (0..k).map(|_| half.sample(rng)).collect())
            .collect();
        let beta = (0..n_subjects)
            .map(|_| sds.iter().map(|&s| s * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
        Self { mu, alpha, beta }
    }

    pub fn theta_matrix(&self) -> Vec<f64> {
        let (ni, nj) = (self.beta.len(), self.mu.len());
        let mut out = Vec::with_capacity(ni * nj);
        for i in 0..ni {
            for j in 0..nj {
                out.push(normal_cdf(self.linear_predictor(i, j)));
            }
        }
        out
    }
}

/// Prior standard deviations `sqrt(6) / (pi k)` of the subject traits.
pub fn euclidean_trait_sds(k: usize) -> Vec<f64> {
    (1..=k)
        .map(|d| 6f64.sqrt() / (std::f64::consts::PI * d as f64))
        .collect()
}

/// `log Phi(x)` without underflow in the far left tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        // Mills ratio expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Probit Bernoulli log-likelihood over observed cells.
pub fn euclidean_probit_log_likelihood(y: &VoteMatrix, params: &EuclideanParams) -> Result<f64> {
    if params.beta.len() != y.n_subjects() || params.mu.len() != y.n_items() {
        return Err(Error::Incompatible(
            "Euclidean parameters do not match the vote matrix".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..y.n_subjects() {
        for &(j, v) in y.subject_votes(i) {
            let eta = params.linear_predictor(i, j);
            total += floor_log(ln_normal_cdf(if v { eta } else { -eta }));
        }
    }
    Ok(total)
}

/// Prior draws of `theta = Phi(mu + alpha^T beta)` under the baseline prior.
pub fn euclidean_prior_theta<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let p = EuclideanParams::sample_prior(k, 1, 1, rng);
            normal_cdf(p.linear_predictor(0, 0))
        })
        .collect()
}

/// `Var(mu + alpha^T beta) = 1/2 + (1/2) sum_{k<=K} 6/(pi k)^2` under the
/// baseline prior; tends to 1 as `K` grows.
pub fn euclidean_prior_predictor_variance(k: usize) -> f64 {
    0.5 + 0.5 * euclidean_trait_sds(k).iter().map(|s| s * s).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_orthogonal, rotate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_config(k: usize, ni: usize, nj: usize, rng: &mut ChaCha8Rng) -> LatentConfiguration {
        let r = |rng: &mut ChaCha8Rng| UnitVector::random(k, rng);
        LatentConfiguration::new(
            (0..ni).map(|_| r(rng)).collect(),
            (0..nj).map(|_| r(rng)).collect(),
            (0..nj).map(|_| r(rng)).collect(),
        )
        .unwrap()
    }

    fn random_votes(ni: usize, nj: usize, rng: &mut ChaCha8Rng) -> VoteMatrix {
        let cells = (0..ni * nj)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.1 {
                    None
                } else {
                    Some(u < 0.55)
                }
            })
            .collect();
        VoteMatrix::new(ni, nj, cells).unwrap()
    }

    fn hp(nj: usize, kappa: f64) -> Hyperparams {
        Hyperparams {
            omega: 1.0,
            tau: 2.0,
            kappa: vec![kappa; nj],
            lambda: 0.1,
        }
    }

    #[test]
    fn vote_matrix_indexing() {
        let y = VoteMatrix::from_rows(&[
            vec![Some(true), None, Some(false)],
            vec![None, None, Some(true)],
        ])
        .unwrap();
        assert_eq!(y.n_observed(), 3);
        assert_eq!(y.subject_votes(0), &[(0, true), (2, false)]);
        assert_eq!(y.item_votes(2), &[(0, false), (1, true)]);
        assert!((y.missing_fraction() - 0.5).abs() < 1e-15);
        assert!(VoteMatrix::new(0, 3, vec![]).is_err());
        assert!(VoteMatrix::new(2, 2, vec![None; 3]).is_err());
        let y2 = VoteMatrix::from_rows(&[
            vec![Some(true), None, Some(true)],
            vec![None, None, Some(true)],
        ])
        .unwrap();
        assert_ne!(y.content_hash(), y2.content_hash());
        assert_eq!(y.content_hash(), y.clone().content_hash());
    }

    #[test]
    fn e_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = UnitVector::random(3, &mut rng);
        let b = UnitVector::random(3, &mut rng);
        let c = UnitVector::random(3, &mut rng);
        assert_eq!(compute_e(a.as_slice(), a.as_slice(), b.as_slice()), 0.0);
        let e1 = compute_e(a.as_slice(), c.as_slice(), b.as_slice());
        let e2 = compute_e(c.as_slice(), a.as_slice(), b.as_slice());
        assert_eq!(e1, -e2);
        let neg = b.negated();
        let e = compute_e(b.as_slice(), neg.as_slice(), b.as_slice());
        assert!((e - PI_SQ).abs() < 1e-12);
    }

    #[test]
    fn theta_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = random_config(2, 2, 2, &mut rng);
        cfg.zeta[1] = cfg.psi[1].clone();
        assert_eq!(theta(0, 1, &cfg, &hp(2, 37.0)).unwrap(), 0.5);
        let e = compute_e(cfg.psi[0].as_slice(), cfg.zeta[0].as_slice(), cfg.beta[1].as_slice());
        let t = theta(1, 0, &cfg, &hp(2, 1.0)).unwrap();
        assert!((t - (e + PI_SQ) / (2.0 * PI_SQ)).abs() < 1e-14);
    }

    #[test]
    fn likelihood_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = random_config(2, 3, 4, &mut rng);
        let y = VoteMatrix::empty(3, 4).unwrap();
        assert_eq!(spherical_log_likelihood(&y, &cfg, &hp(4, 5.0)).unwrap(), 0.0);

        let mut cfg1 = random_config(2, 1, 1, &mut rng);
        cfg1.zeta[0] = cfg1.psi[0].clone();
        let y1 = VoteMatrix::new(1, 1, vec![Some(true)]).unwrap();
        let v = spherical_log_likelihood(&y1, &cfg1, &hp(1, 5.0)).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);

        // brute force over cells
        let y = random_votes(3, 4, &mut rng);
        let h = hp(4, 12.0);
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                if let Some(v) = y.get(i, j) {
                    let t = theta(i, j, &cfg, &h).unwrap();
                    want += if v { t.ln() } else { (1.0 - t).ln() };
                }
            }
        }
        let got = spherical_log_likelihood(&y, &cfg, &h).unwrap();
        assert!((got - want).abs() < 1e-10 * want.abs());
        let via_theta = log_likelihood_from_theta(&y, &theta_matrix(&cfg, &h).unwrap());
        assert!((got - via_theta).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn nested_dimension_likelihood_is_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1usize, 2, 4] {
            for _ in 0..20 {
                let small = random_config(k, 4, 6, &mut rng);
                let big = LatentConfiguration::new(
                    small.beta.iter().map(UnitVector::embed).collect(),
                    small.psi.iter().map(UnitVector::embed).collect(),
                    small.zeta.iter().map(UnitVector::embed).collect(),
                )
                .unwrap();
                let y = random_votes(4, 6, &mut rng);
                let h = hp(6, 20.0);
                let a = spherical_log_likelihood(&y, &small, &h).unwrap();
                let b = spherical_log_likelihood(&y, &big, &h).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn likelihood_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [1usize, 3, 5] {
            let cfg = random_config(k, 5, 7, &mut rng);
            let y = random_votes(5, 7, &mut rng);
            let h = hp(7, 30.0);
            let q = random_orthogonal(k + 1, &mut rng);
            let rot = |v: &Vec<UnitVector>| v.iter().map(|x| rotate(&q, x)).collect::<Vec<_>>();
            let cfg2 = LatentConfiguration::new(rot(&cfg.beta), rot(&cfg.psi), rot(&cfg.zeta)).unwrap();
            let a = spherical_log_likelihood(&y, &cfg, &h).unwrap();
            let b = spherical_log_likelihood(&y, &cfg2, &h).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn prior_latent_at_pole_and_k1() {
        let k = 3;
        let h = hp(2, 5.0);
        let pole = UnitVector::north_pole(k);
        let cfg = LatentConfiguration::new(
            vec![pole.clone(); 4],
            vec![pole.clone(); 2],
            vec![pole.clone(); 2],
        )
        .unwrap();
        let pb = h.subject_precisions(k).unwrap();
        let pi = h.item_precisions(k).unwrap();
        let one_b = crate::distributions::svm_log_density_hausdorff(&pole, &pb).unwrap();
        let one_i = crate::distributions::svm_log_density_hausdorff(&pole, &pi).unwrap();
        let got = log_prior_latent(&cfg, &h).unwrap();
        assert!((got - (4.0 * one_b + 4.0 * one_i)).abs() < 1e-12);

        // K = 1: von Mises log density in the angle
        let x = UnitVector::new(vec![0.3f64.cos(), 0.3f64.sin()]).unwrap();
        let cfg1 = LatentConfiguration::new(vec![x.clone()], vec![x.clone()], vec![x]).unwrap();
        let vm = |w: f64| w * 0.3f64.cos() - (2.0 * PI).ln() - crate::distributions::log_bessel_i0(w).unwrap();
        let want = vm(h.omega) + 2.0 * vm(h.tau);
        assert!((log_prior_latent(&cfg1, &h).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn larger_omega_concentrates_prior_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mean_abs = |w: f64, rng: &mut ChaCha8Rng| {
            let p = SvMParams::polynomial(w, 3).unwrap();
            let n = 20_000;
            (0..n)
                .map(|_| svm_sample(&p, rng).as_slice().iter().map(|a| a.abs()).sum::<f64>())
                .sum::<f64>()
                / n as f64
        };
        assert!(mean_abs(2.0, &mut rng) < mean_abs(1.0, &mut rng));
    }

    #[test]
    fn hyperprior_density() {
        let cfg = HyperpriorConfig::default();
        let h = Hyperparams {
            omega: 2.0,
            tau: 0.5,
            kappa: vec![30.0, 80.0],
            lambda: 0.02,
        };
        let want = gamma_log_density(2.0, 1.0, 0.1)
            + gamma_log_density(0.5, 1.0, 5.0)
            + gamma_log_density(0.02, 2.0, 150.0)
            + gamma_log_density(30.0, 1.0, 0.02)
            + gamma_log_density(80.0, 1.0, 0.02);
        assert!((log_hyperprior(&h, &cfg) - want).abs() < 1e-12);
        let bad = Hyperparams { omega: -1.0, ..h };
        assert_eq!(log_hyperprior(&bad, &cfg), f64::NEG_INFINITY);
    }

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn prior_predictive_mean_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = prior_predictive_theta(4, &HyperpriorConfig::default(), 10_000, &mut rng).unwrap();
        let (m, se) = mean_se(&t);
        assert!((m - 0.5).abs() < 3.0 * se, "{m} {se}");
        for &(w, tau, kap) in &[(0.5, 2.0, 10.0), (10.0, 10.0, 200.0)] {
            let t = prior_predictive_theta_fixed(6, w, tau, kap, 10_000, &mut rng).unwrap();
            let (m, se) = mean_se(&t);
            assert!((m - 0.5).abs() < 3.0 * se);
        }
    }

    /// Number of strict local maxima of a Gaussian KDE on a grid over (0,1).
    fn kde_modes(v: &[f64], bw: f64) -> usize {
        let grid: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        let dens: Vec<f64> = grid
            .iter()
            .map(|&g| v.iter().map(|&x| (-(g - x).powi(2) / (2.0 * bw * bw)).exp()).sum())
            .collect();
        (1..dens.len() - 1)
            .filter(|&i| dens[i] > dens[i - 1] && dens[i] > dens[i + 1])
            .count()
    }

    #[test]
    fn prior_predictive_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let uni = prior_predictive_theta_fixed(10, 20.0, 20.0, 200.0, 10_000, &mut rng).unwrap();
        assert_eq!(kde_modes(&uni, 0.04), 1);
        let tri = prior_predictive_theta_fixed(10, 1.0, 1.0, 50.0, 10_000, &mut rng).unwrap();
        assert_eq!(kde_modes(&tri, 0.04), 3);
    }

    #[test]
    fn euclidean_examples() {
        let y = VoteMatrix::from_rows(&[
            vec![Some(true), Some(false), None],
            vec![Some(false), Some(true), Some(true)],
            vec![None, Some(true), Some(false)],
        ])
        .unwrap();
        let zero = EuclideanParams {
            mu: vec![0.0; 3],
            alpha: vec![vec![0.0; 2]; 3],
            beta: vec![vec![0.3, -1.0]; 3],
        };
        let v = euclidean_probit_log_likelihood(&y, &zero).unwrap();
        assert!((v - 7.0 * 0.5f64.ln()).abs() < 1e-14);
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_eq!(normal_cdf(40.0), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = EuclideanParams::sample_prior(2, 3, 3, &mut rng);
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if let Some(v) = y.get(i, j) {
                    let eta = p.mu[j] + p.alpha[j][0] * p.beta[i][0] + p.alpha[j][1] * p.beta[i][1];
                    let t = normal_cdf(eta);
                    want += if v { t.ln() } else { (1.0 - t).ln() };
                }
            }
        }
        let got = euclidean_probit_log_likelihood(&y, &p).unwrap();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn ln_normal_cdf_tail() {
        for &x in &[-5.0, -20.0, 1.0] {
            assert!((ln_normal_cdf(x) - normal_cdf(x).ln()).abs() < 1e-9 * normal_cdf(x).ln().abs().max(1.0));
        }
        let a = ln_normal_cdf(-30.0 + 1e-9);
        let b = ln_normal_cdf(-30.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(ln_normal_cdf(-50.0).is_finite());
    }

    #[test]
    fn euclidean_predictor_variance_limit() {
        assert!((euclidean_prior_predictor_variance(100_000) - 1.0).abs() < 1e-5);
        let v = euclidean_prior_predictor_variance(1);
        assert!((v - (0.5 + 3.0 / (PI * PI))).abs() < 1e-15);
    }
}
