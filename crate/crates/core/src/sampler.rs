//! Hybrid MCMC for the spherical factor model (GHMC for latent positions,
//! log-normal random-walk Metropolis for `omega`, `tau`, `kappa_j`, Gibbs
//! for `lambda`) and an Albert-Chib Gibbs sampler for the Euclidean probit
//! baseline.
//!
//! Every random draw comes from a stream derived from
//! `(seed, iteration, block, index)`, so results do not depend on how the
//! per-position updates are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::spherical_von_mises::svm_cosines;
use crate::distributions::{
    gamma_log_density, gamma_sample, link_clamp_events, HyperpriorConfig, LinkConcentration,
    SvMParams,
};
use crate::error::{Error, Result};
use crate::geometry::{dot, flow_in_place, norm, project_in_place, UnitVector};
use crate::gradients::{ConditionalContext, Target};
use crate::model::{
    cell_log_lik, compute_e, euclidean_probit_log_likelihood, euclidean_trait_sds,
    log_likelihood_with, theta_floor_events, theta_matrix, EuclideanParams, Hyperparams,
    LatentConfiguration, VoteMatrix,
};

/// Target acceptance rate of the scalar random-walk updates.
pub const MH_TARGET_ACCEPT: f64 = 0.4;

/// GHMC acceptance band used when choosing among step-size presets.
pub const GHMC_TARGET_BAND: (f64, f64) = (0.6, 0.9);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG for one `(iteration, block, index)` cell of a chain.
pub fn stream_rng(seed: u64, iteration: u64, block: u64, index: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ iteration);
    h = splitmix64(h ^ block.wrapping_mul(0x1000_0000_01b3));
    h = splitmix64(h ^ index);
    ChaCha8Rng::seed_from_u64(h)
}

mod block {
    pub const SCHEDULE: u64 = 0;
    pub const BETA: u64 = 1;
    pub const PSI: u64 = 2;
    pub const ZETA: u64 = 3;
    pub const OMEGA: u64 = 4;
    pub const TAU: u64 = 5;
    pub const KAPPA: u64 = 6;
    pub const LAMBDA: u64 = 7;
    pub const INIT: u64 = 8;
    pub const LATENT_Z: u64 = 9;
    pub const ITEMS: u64 = 10;
    pub const SUBJECTS: u64 = 11;
}

/// Step-size range, leapfrog-count range and jitter period of one GHMC block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhmcConfig {
    pub eps_range: (f64, f64),
    pub leap_range: (usize, usize),
    pub jitter_period: usize,
}

impl GhmcConfig {
    pub fn new(eps_range: (f64, f64), leap_range: (usize, usize), jitter_period: usize) -> Result<Self> {
        let c = Self {
            eps_range,
            leap_range,
            jitter_period,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.eps_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad step-size range ({lo}, {hi})")));
        }
        let (a, b) = self.leap_range;
        if !(a >= 1 && a <= b) {
            return Err(Error::InvalidParameter(format!("bad leapfrog range ({a}, {b})")));
        }
        if self.jitter_period == 0 {
            return Err(Error::InvalidParameter("jitter period must be positive".into()));
        }
        Ok(())
    }

    fn preset(lo: f64, hi: f64) -> Self {
        Self {
            eps_range: (lo, hi),
            leap_range: (1, 10),
            jitter_period: 50,
        }
    }

    /// Subjects: `eps ~ U(0.01, 0.03)`.
    pub fn subjects_narrow() -> Self {
        Self::preset(0.01, 0.03)
    }

    /// Subjects: `eps ~ U(0.01, 0.05)`.
    pub fn subjects_wide() -> Self {
        Self::preset(0.01, 0.05)
    }

    /// Items: `eps ~ U(0.01, 0.07)`.
    pub fn items_narrow() -> Self {
        Self::preset(0.01, 0.07)
    }

    /// Items: `eps ~ U(0.01, 0.105)`.
    pub fn items_wide() -> Self {
        Self::preset(0.01, 0.105)
    }

    /// Draws `(eps, L)` uniformly from the ranges.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, usize) {
        let eps = rng.random_range(self.eps_range.0..self.eps_range.1);
        let l = rng.random_range(self.leap_range.0..=self.leap_range.1);
        (eps, l)
    }
}

/// Result of one GHMC transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhmcOutcome {
    pub accepted: bool,
    /// `H(proposal) - H(current)` with `H = -log p + |gamma|^2 / 2`;
    /// NaN when the proposal was rejected as non-finite.
    pub delta_h: f64,
    pub nonfinite: bool,
    /// `| ||x|| - 1 |` before the final renormalization.
    pub norm_drift: f64,
}

/// One GHMC transition from `x`. `target` returns the log density (up to a
/// constant) and its gradient; errors and non-finite values reject the
/// proposal and leave `x` unchanged.
pub fn ghmc_update<F, R>(x: &mut UnitVector, target: F, eps: f64, leaps: usize, rng: &mut R) -> GhmcOutcome
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    let reject = GhmcOutcome {
        accepted: false,
        delta_h: f64::NAN,
        nonfinite: true,
        norm_drift: 0.0,
    };
    let finite = |v: &(f64, Vec<f64>)| v.0.is_finite() && v.1.iter().all(|g| g.is_finite());

    let (lp0, mut grad) = match target(x.as_slice()) {
        Ok(v) if finite(&v) => v,
        _ => {
            log::debug!("GHMC: non-finite density at the current state");
            return reject;
        }
    };
    let d = x.len();
    let mut pos = x.as_slice().to_vec();
    let mut gamma: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    project_in_place(&pos, &mut gamma);
    let h0 = -lp0 + 0.5 * dot(&gamma, &gamma);

    let mut lp = lp0;
    let half = 0.5 * eps;
    for _ in 0..leaps {
        gamma.iter_mut().zip(&grad).for_each(|(g, d)| *g += half * d);
        project_in_place(&pos, &mut gamma);
        flow_in_place(&mut pos, &mut gamma, eps);
        match target(&pos) {
            Ok(v) if finite(&v) => {
                lp = v.0;
                grad = v.1;
            }
            _ => {
                log::debug!("GHMC: non-finite density along the trajectory, proposal rejected");
                return reject;
            }
        }
        gamma.iter_mut().zip(&grad).for_each(|(g, d)| *g += half * d);
        project_in_place(&pos, &mut gamma);
    }
    let h1 = -lp + 0.5 * dot(&gamma, &gamma);
    let delta_h = h1 - h0;
    let u: f64 = rng.random();
    let accepted = u.ln() < -delta_h;
    let n = norm(&pos);
    let norm_drift = (n - 1.0).abs();
    if accepted {
        x.as_mut_slice().copy_from_slice(&pos);
        x.renormalize();
    }
    GhmcOutcome {
        accepted,
        delta_h,
        nonfinite: false,
        norm_drift,
    }
}

/// Proposal scale and counters of one random-walk Metropolis coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhState {
    pub log_sd: f64,
    pub proposals: u64,
    pub accepts: u64,
    adapt_steps: u64,
}

impl MhState {
    pub fn new(sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::InvalidParameter(format!("proposal sd must be positive, got {sd}")));
        }
        Ok(Self {
            log_sd: sd.ln(),
            proposals: 0,
            accepts: 0,
            adapt_steps: 0,
        })
    }

    pub fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.accepts as f64 / self.proposals as f64
    }

    /// Robbins-Monro step on `log sd` toward [`MH_TARGET_ACCEPT`].
    fn adapt(&mut self, accept_prob: f64) {
        self.adapt_steps += 1;
        let gain = 1.0 / (self.adapt_steps as f64).powf(0.6);
        self.log_sd = (self.log_sd + gain * (accept_prob - MH_TARGET_ACCEPT)).clamp(-12.0, 5.0);
    }

    pub fn reset_counts(&mut self) {
        self.proposals = 0;
        self.accepts = 0;
    }
}

/// Log-normal random-walk Metropolis update of a positive scalar:
/// `p' = p exp(sd * N(0,1))`, accepted with ratio
/// `pi(p') p' / (pi(p) p)`. With `adapt`, the proposal scale moves toward
/// a 40% acceptance rate.
pub fn rwmh_lognormal_update<F, R>(param: f64, logpost: F, state: &mut MhState, adapt: bool, rng: &mut R) -> f64
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    let z: f64 = rng.sample(StandardNormal);
    let prop = param * (state.sd() * z).exp();
    let cur = logpost(param);
    let new = logpost(prop);
    let log_ratio = new - cur + (prop / param).ln();
    let accept_prob = if log_ratio.is_nan() || !new.is_finite() {
        0.0
    } else {
        log_ratio.min(0.0).exp()
    };
    let u: f64 = rng.random();
    state.proposals += 1;
    let accepted = prop.is_finite() && prop > 0.0 && u < accept_prob;
    if accepted {
        state.accepts += 1;
    }
    if adapt {
        state.adapt(accept_prob);
    }
    if accepted {
        prop
    } else {
        param
    }
}

/// Exact draw from the full conditional `Gam(a_lambda + J c, b_lambda + sum kappa)`.
pub fn gibbs_lambda<R: Rng + ?Sized>(kappa: &[f64], cfg: &HyperpriorConfig, rng: &mut R) -> f64 {
    let (shape, rate) = lambda_conditional(kappa, cfg);
    gamma_sample(shape, rate, rng)
}

/// Shape and rate of the `lambda` full conditional.
pub fn lambda_conditional(kappa: &[f64], cfg: &HyperpriorConfig) -> (f64, f64) {
    (
        cfg.a_lambda + kappa.len() as f64 * cfg.c,
        cfg.b_lambda + kappa.iter().sum::<f64>(),
    )
}

/// Which model a chain was run for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Spherical,
    Euclidean,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Spherical => write!(f, "spherical"),
            ModelKind::Euclidean => write!(f, "euclidean"),
        }
    }
}

/// One kept state of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Spherical {
        config: LatentConfiguration,
        hp: Hyperparams,
    },
    Euclidean(EuclideanParams),
}

impl Sample {
    /// Row-major I x J cell probabilities.
    pub fn theta_matrix(&self) -> Result<Vec<f64>> {
        match self {
            Sample::Spherical { config, hp } => theta_matrix(config, hp),
            Sample::Euclidean(p) => Ok(p.theta_matrix()),
        }
    }
}

/// Proposal and acceptance counts of one update block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub proposals: u64,
    pub accepts: u64,
    pub nonfinite: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.accepts as f64 / self.proposals as f64
    }

    fn record(&mut self, accepted: bool, nonfinite: bool) {
        self.proposals += 1;
        self.accepts += accepted as u64;
        self.nonfinite += nonfinite as u64;
    }
}

/// Acceptance counts of every block, for one phase of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub beta: BlockStats,
    pub psi: BlockStats,
    pub zeta: BlockStats,
    pub omega: BlockStats,
    pub tau: BlockStats,
    pub kappa: BlockStats,
}

/// Run-level bookkeeping stored alongside the samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub burn_in: AcceptanceStats,
    pub sampling: AcceptanceStats,
    /// Index of the step-size preset in use after burn-in, per block.
    pub subject_preset: usize,
    pub item_preset: usize,
    pub max_norm_drift: f64,
    pub theta_floor_events: u64,
    pub link_clamp_events: u64,
}

/// Ordered kept samples with their log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub model: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub data_hash: String,
    pub samples: Vec<Sample>,
    pub loglik: Vec<f64>,
    pub stats: ChainStats,
    /// Free-form echo of the settings that produced the chain.
    pub settings: serde_json::Value,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_subjects(&self) -> Option<usize> {
        self.samples.first().map(|s| match s {
            Sample::Spherical { config, .. } => config.n_subjects(),
            Sample::Euclidean(p) => p.beta.len(),
        })
    }

    pub fn n_items(&self) -> Option<usize> {
        self.samples.first().map(|s| match s {
            Sample::Spherical { config, .. } => config.n_items(),
            Sample::Euclidean(p) => p.mu.len(),
        })
    }
}

/// Settings shared by both samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub k: usize,
    /// Number of kept samples.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainSettings {
    pub fn new(k: usize, iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            k,
            iterations,
            burn_in,
            thin: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Options specific to the spherical sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalOptions {
    pub hyper: HyperpriorConfig,
    /// Step-size presets for subjects, smallest steps first.
    pub subject_presets: Vec<GhmcConfig>,
    pub item_presets: Vec<GhmcConfig>,
    /// Switch presets during burn-in to keep GHMC acceptance in 60-90%.
    pub select_presets: bool,
    pub mh_initial_sd: f64,
    /// When false, `omega`, `tau`, `kappa`, `lambda` stay at their initial
    /// values and only the latent positions are sampled.
    pub update_hyperparams: bool,
}

impl Default for SphericalOptions {
    fn default() -> Self {
        Self {
            hyper: HyperpriorConfig::default(),
            subject_presets: vec![GhmcConfig::subjects_narrow(), GhmcConfig::subjects_wide()],
            item_presets: vec![GhmcConfig::items_narrow(), GhmcConfig::items_wide()],
            select_presets: true,
            mh_initial_sd: 0.5,
            update_hyperparams: true,
        }
    }
}

/// Starting point of the spherical chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalState {
    pub config: LatentConfiguration,
    pub hp: Hyperparams,
}

impl SphericalState {
    /// Latent positions drawn from the priors with `omega = tau = 1`,
    /// `lambda` at its prior mean and `kappa_j = c / lambda`.
    pub fn from_prior(y: &VoteMatrix, k: usize, hyper: &HyperpriorConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, block::INIT, 0);
        let config = LatentConfiguration::sample_prior(k, y.n_subjects(), y.n_items(), 1.0, 1.0, &mut rng)?;
        let lambda = hyper.a_lambda / hyper.b_lambda;
        let hp = Hyperparams {
            omega: 1.0,
            tau: 1.0,
            kappa: vec![hyper.c / lambda; y.n_items()],
            lambda,
        };
        Ok(Self { config, hp })
    }
}

struct BlockTuner {
    presets: Vec<GhmcConfig>,
    current: usize,
    eps: f64,
    leaps: usize,
    window: BlockStats,
}

impl BlockTuner {
    fn new(presets: Vec<GhmcConfig>) -> Result<Self> {
        if presets.is_empty() {
            return Err(Error::InvalidParameter("at least one GHMC preset is required".into()));
        }
        for p in &presets {
            p.validate()?;
        }
        Ok(Self {
            presets,
            current: 0,
            eps: f64::NAN,
            leaps: 0,
            window: BlockStats::default(),
        })
    }

    fn config(&self) -> &GhmcConfig {
        &self.presets[self.current]
    }

    /// At a jitter boundary: maybe change preset, then redraw `(eps, L)`.
    fn jitter(&mut self, select: bool, rng: &mut ChaCha8Rng) {
        if select && self.window.proposals > 0 {
            let r = self.window.rate();
            if r < GHMC_TARGET_BAND.0 && self.current > 0 {
                self.current -= 1;
            } else if r > GHMC_TARGET_BAND.1 && self.current + 1 < self.presets.len() {
                self.current += 1;
            }
        }
        self.window = BlockStats::default();
        let (e, l) = self.config().draw(rng);
        self.eps = e;
        self.leaps = l;
    }
}

/// Sufficient statistic `sum_x sum_k k^2 c_k(x)` of a block of positions for
/// its polynomial SvM precision scale, where `c_1 = cos phi_1` and
/// `c_k = cos 2 phi_k`.
fn precision_statistic(xs: &[UnitVector], k: usize) -> Result<f64> {
    let mut buf = vec![0.0; k];
    let mut t = 0.0;
    for x in xs {
        svm_cosines(x.as_slice(), &mut buf)?;
        for (d, c) in buf.iter().enumerate() {
            t += ((d + 1) * (d + 1)) as f64 * c;
        }
    }
    Ok(t)
}

/// Log posterior of a polynomial precision scale `w` given `n` positions
/// with statistic `t` (Jacobian terms dropped: they do not depend on `w`).
fn precision_log_post(w: f64, k: usize, n: usize, t: f64, shape: f64, rate: f64) -> f64 {
    if !(w > 0.0) || !w.is_finite() {
        return f64::NEG_INFINITY;
    }
    let Ok(p) = SvMParams::polynomial(w, k) else {
        return f64::NEG_INFINITY;
    };
    n as f64 * p.log_normalizer() + w * t + gamma_log_density(w, shape, rate)
}

/// Runs the hybrid sampler; `init` defaults to [`SphericalState::from_prior`].
pub fn run_chain(
    y: &VoteMatrix,
    settings: &ChainSettings,
    opts: &SphericalOptions,
    init: Option<SphericalState>,
) -> Result<ChainOutput> {
    settings.validate()?;
    opts.hyper.validate()?;
    let k = settings.k;
    let seed = settings.seed;
    let SphericalState { mut config, mut hp } = match init {
        Some(s) => s,
        None => SphericalState::from_prior(y, k, &opts.hyper, seed)?,
    };
    config.check_against(y)?;
    if config.k() != k {
        return Err(Error::DimensionMismatch { expected: k + 1, got: config.k() + 1 });
    }
    hp.validate()
        .map_err(|e| Error::Initialization(format!("initial hyperparameters: {e}")))?;
    if hp.kappa.len() != y.n_items() {
        return Err(Error::Initialization("one kappa per item is required".into()));
    }
    {
        let ctx = ConditionalContext::new(k, &hp)?;
        let ll = log_likelihood_with(y, &config, &ctx.links);
        let lp = crate::model::log_prior_latent(&config, &hp)
            .map_err(|e| Error::Initialization(format!("initial positions: {e}")))?;
        if !ll.is_finite() || !lp.is_finite() {
            return Err(Error::Initialization("initial state has non-finite density".into()));
        }
    }

    let floor0 = theta_floor_events();
    let clamp0 = link_clamp_events();
    let mut subj = BlockTuner::new(opts.subject_presets.clone())?;
    let mut items = BlockTuner::new(opts.item_presets.clone())?;
    let mut mh_omega = MhState::new(opts.mh_initial_sd)?;
    let mut mh_tau = MhState::new(opts.mh_initial_sd)?;
    let mut mh_kappa = vec![MhState::new(opts.mh_initial_sd)?; y.n_items()];

    let mut stats = ChainStats::default();
    let mut samples = Vec::with_capacity(settings.iterations);
    let mut loglik = Vec::with_capacity(settings.iterations);
    let total = settings.burn_in + settings.iterations * settings.thin;
    let (ni, nj) = (y.n_subjects(), y.n_items());

    for it in 0..total {
        let burning = it < settings.burn_in;
        let it64 = it as u64;
        if it % subj.config().jitter_period == 0 {
            let mut rng = stream_rng(seed, it64, block::SCHEDULE, 0);
            subj.jitter(opts.select_presets && burning, &mut rng);
        }
        if it % items.config().jitter_period == 0 {
            let mut rng = stream_rng(seed, it64, block::SCHEDULE, 1);
            items.jitter(opts.select_presets && burning, &mut rng);
        }
        let phase = if burning { &mut stats.burn_in } else { &mut stats.sampling };
        let ctx = ConditionalContext::new(k, &hp)?;

        // latent positions, one block at a time
        for blk in [block::BETA, block::PSI, block::ZETA] {
            let (n, tuner) = if blk == block::BETA { (ni, &mut subj) } else { (nj, &mut items) };
            let (eps, leaps) = (tuner.eps, tuner.leaps);
            let cfg_ref = &config;
            let ctx_ref = &ctx;
            let results: Vec<(UnitVector, GhmcOutcome)> = (0..n)
                .into_par_iter()
                .map(|idx| {
                    let target = match blk {
                        block::BETA => Target::Beta(idx),
                        block::PSI => Target::Psi(idx),
                        _ => Target::Zeta(idx),
                    };
                    let mut x = match target {
                        Target::Beta(i) => cfg_ref.beta[i].clone(),
                        Target::Psi(j) => cfg_ref.psi[j].clone(),
                        Target::Zeta(j) => cfg_ref.zeta[j].clone(),
                    };
                    let fc = ctx_ref.conditional(y, cfg_ref, target);
                    let mut rng = stream_rng(seed, it64, blk, idx as u64);
                    let out = ghmc_update(&mut x, |p| fc.value_and_gradient(p), eps, leaps, &mut rng);
                    (x, out)
                })
                .collect();
            let bs = match blk {
                block::BETA => &mut phase.beta,
                block::PSI => &mut phase.psi,
                _ => &mut phase.zeta,
            };
            for (idx, (x, out)) in results.into_iter().enumerate() {
                bs.record(out.accepted, out.nonfinite);
                tuner.window.record(out.accepted, out.nonfinite);
                stats.max_norm_drift = stats.max_norm_drift.max(out.norm_drift);
                match blk {
                    block::BETA => config.beta[idx] = x,
                    block::PSI => config.psi[idx] = x,
                    _ => config.zeta[idx] = x,
                }
            }
        }

        if opts.update_hyperparams {
            let h = &opts.hyper;
            // omega
            match precision_statistic(&config.beta, k) {
                Ok(t) => {
                    let mut rng = stream_rng(seed, it64, block::OMEGA, 0);
                    let before = mh_omega.accepts;
                    hp.omega = rwmh_lognormal_update(
                        hp.omega,
                        |w| precision_log_post(w, k, ni, t, h.a_omega, h.b_omega),
                        &mut mh_omega,
                        burning,
                        &mut rng,
                    );
                    phase.omega.record(mh_omega.accepts > before, false);
                }
                Err(e) => log::warn!("omega update skipped: {e}"),
            }
            // tau, from psi and zeta together
            let t_items = precision_statistic(&config.psi, k)
                .and_then(|a| precision_statistic(&config.zeta, k).map(|b| a + b));
            match t_items {
                Ok(t) => {
                    let mut rng = stream_rng(seed, it64, block::TAU, 0);
                    let before = mh_tau.accepts;
                    hp.tau = rwmh_lognormal_update(
                        hp.tau,
                        |w| precision_log_post(w, k, 2 * nj, t, h.a_tau, h.b_tau),
                        &mut mh_tau,
                        burning,
                        &mut rng,
                    );
                    phase.tau.record(mh_tau.accepts > before, false);
                }
                Err(e) => log::warn!("tau update skipped: {e}"),
            }
            // kappa_j, independent across items given everything else
            let lambda = hp.lambda;
            let cfg_ref = &config;
            let updates: Vec<(f64, MhState, bool)> = (0..nj)
                .into_par_iter()
                .map(|j| {
                    let es: Vec<(f64, bool)> = y
                        .item_votes(j)
                        .iter()
                        .map(|&(i, v)| {
                            let e = compute_e(
                                cfg_ref.psi[j].as_slice(),
                                cfg_ref.zeta[j].as_slice(),
                                cfg_ref.beta[i].as_slice(),
                            );
                            (e, v)
                        })
                        .collect();
                    let logpost = |kap: f64| {
                        let Ok(link) = LinkConcentration::new(kap) else {
                            return f64::NEG_INFINITY;
                        };
                        es.iter().map(|&(e, v)| cell_log_lik(v, e, &link)).sum::<f64>()
                            + gamma_log_density(kap, h.c, lambda)
                    };
                    let mut st = mh_kappa[j];
                    let before = st.accepts;
                    let mut rng = stream_rng(seed, it64, block::KAPPA, j as u64);
                    let new = rwmh_lognormal_update(hp.kappa[j], logpost, &mut st, burning, &mut rng);
                    (new, st, st.accepts > before)
                })
                .collect();
            for (j, (kap, st, acc)) in updates.into_iter().enumerate() {
                hp.kappa[j] = kap;
                mh_kappa[j] = st;
                phase.kappa.record(acc, false);
            }
            // lambda
            let mut rng = stream_rng(seed, it64, block::LAMBDA, 0);
            hp.lambda = gibbs_lambda(&hp.kappa, h, &mut rng);
        }

        if !burning && (it - settings.burn_in).is_multiple_of(settings.thin) {
            let links = hp.link_concentrations()?;
            loglik.push(log_likelihood_with(y, &config, &links));
            samples.push(Sample::Spherical {
                config: config.clone(),
                hp: hp.clone(),
            });
        }
        if (it + 1) % 1000 == 0 {
            log::info!(
                "iteration {}/{}: acceptance beta {:.2} psi {:.2} zeta {:.2}",
                it + 1,
                total,
                phase.beta.rate(),
                phase.psi.rate(),
                phase.zeta.rate()
            );
        }
    }

    stats.subject_preset = subj.current;
    stats.item_preset = items.current;
    stats.theta_floor_events = theta_floor_events() - floor0;
    stats.link_clamp_events = link_clamp_events() - clamp0;
    if stats.max_norm_drift > 1e-12 {
        log::info!("largest norm drift before renormalization: {:e}", stats.max_norm_drift);
    }
    Ok(ChainOutput {
        model: ModelKind::Spherical,
        k,
        seed,
        data_hash: y.content_hash(),
        samples,
        loglik,
        stats,
        settings: serde_json::json!({ "chain": settings, "options": opts }),
    })
}

/// Standard normal draw conditioned on `z >= a`: plain rejection for small
/// `a`, Robert's exponential proposal in the tail.
pub fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.45 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    }
    let lam = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let z = a - (1.0 - u).ln() / lam;
        let v: f64 = rng.random();
        if v.ln() <= -0.5 * (z - lam) * (z - lam) {
            return z;
        }
    }
}

/// Draw from `N(mean, 1)` truncated to `(0, inf)` if `positive`, else
/// `(-inf, 0)`.
pub fn truncated_unit_normal<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        mean + std_normal_above(-mean, rng)
    } else {
        mean - std_normal_above(mean, rng)
    }
}

/// Draw from `N(P^{-1} b, P^{-1})` given the precision `P`.
fn draw_gaussian<R: Rng + ?Sized>(precision: DMatrix<f64>, b: DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = b.len();
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Domain("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&b);
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // L^T u = z gives u ~ N(0, P^{-1})
    let u = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    Ok(mean + u)
}

/// Albert-Chib Gibbs sampler for the Euclidean probit factor model with
/// `mu_j, alpha_jk ~ N(0, 1/2)` and `beta_ik ~ N(0, 6/(pi k)^2)`.
pub fn run_euclidean_chain(y: &VoteMatrix, settings: &ChainSettings) -> Result<ChainOutput> {
    settings.validate()?;
    let k = settings.k;
    let seed = settings.seed;
    let (ni, nj) = (y.n_subjects(), y.n_items());
    let mut rng0 = stream_rng(seed, 0, block::INIT, 0);
    let mut p = EuclideanParams::sample_prior(k, ni, nj, &mut rng0);
    let prior_prec_beta: Vec<f64> = euclidean_trait_sds(k).iter().map(|s| 1.0 / (s * s)).collect();
    let mut z = vec![0.0; ni * nj];

    let floor0 = theta_floor_events();
    let mut samples = Vec::with_capacity(settings.iterations);
    let mut loglik = Vec::with_capacity(settings.iterations);
    let total = settings.burn_in + settings.iterations * settings.thin;

    for it in 0..total {
        let it64 = it as u64;
        // latent utilities
        for i in 0..ni {
            let mut rng = stream_rng(seed, it64, block::LATENT_Z, i as u64);
            for &(j, v) in y.subject_votes(i) {
                z[i * nj + j] = truncated_unit_normal(p.linear_predictor(i, j), v, &mut rng);
            }
        }
        // (mu_j, alpha_j)
        let items: Vec<Result<DVector<f64>>> = (0..nj)
            .into_par_iter()
            .map(|j| {
                let mut prec = DMatrix::<f64>::identity(k + 1, k + 1) * 2.0;
                let mut b = DVector::<f64>::zeros(k + 1);
                for &(i, _) in y.item_votes(j) {
                    let mut row = DVector::<f64>::zeros(k + 1);
                    row[0] = 1.0;
                    for d in 0..k {
                        row[d + 1] = p.beta[i][d];
                    }
                    prec += &row * row.transpose();
                    b += &row * z[i * nj + j];
                }
                let mut rng = stream_rng(seed, it64, block::ITEMS, j as u64);
                draw_gaussian(prec, b, &mut rng)
            })
            .collect();
        for (j, r) in items.into_iter().enumerate() {
            let v = r?;
            p.mu[j] = v[0];
            for d in 0..k {
                p.alpha[j][d] = v[d + 1];
            }
        }
        // beta_i
        let subs: Vec<Result<DVector<f64>>> = (0..ni)
            .into_par_iter()
            .map(|i| {
                let mut prec = DMatrix::<f64>::from_diagonal(&DVector::from_column_slice(&prior_prec_beta));
                let mut b = DVector::<f64>::zeros(k);
                for &(j, _) in y.subject_votes(i) {
                    let a = DVector::from_column_slice(&p.alpha[j]);
                    prec += &a * a.transpose();
                    b += &a * (z[i * nj + j] - p.mu[j]);
                }
                let mut rng = stream_rng(seed, it64, block::SUBJECTS, i as u64);
                draw_gaussian(prec, b, &mut rng)
            })
            .collect();
        for (i, r) in subs.into_iter().enumerate() {
            p.beta[i] = r?.as_slice().to_vec();
        }

        if it >= settings.burn_in && (it - settings.burn_in).is_multiple_of(settings.thin) {
            loglik.push(euclidean_probit_log_likelihood(y, &p)?);
            samples.push(Sample::Euclidean(p.clone()));
        }
    }
    let stats = ChainStats {
        theta_floor_events: theta_floor_events() - floor0,
        ..ChainStats::default()
    };
    Ok(ChainOutput {
        model: ModelKind::Euclidean,
        k,
        seed,
        data_hash: y.content_hash(),
        samples,
        loglik,
        stats,
        settings: serde_json::json!({ "chain": settings }),
    })
}

/// Fresh seed from OS entropy, for runs that record a generated seed.
pub fn random_seed() -> u64 {
    rand::rng().random()
}
