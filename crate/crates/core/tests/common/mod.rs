//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spherefactor::diagnostics::batch_means;
use spherefactor::distributions::spherical_von_mises::svm_hausdorff_kernel;
use spherefactor::distributions::LinkConcentration;
use spherefactor::geometry::{cartesian_to_spherical_or_pole, tangent_project, UnitVector};
use spherefactor::gradients::{
    finite_difference_gradient, grad_full_conditional, grad_loglik_beta, grad_loglik_psi, grad_loglik_zeta,
    grad_prior_jacobian_with, ConditionalContext, Target, TriangularMasks,
};
use spherefactor::model::{compute_e, theta, Hyperparams, LatentConfiguration, VoteMatrix};
use spherefactor::sampler::{
    ghmc_update, run_chain, ChainSettings, GhmcConfig, GhmcOutcome, Sample, SphericalOptions, SphericalState,
};

// ---- gradients -------------------------------------------------------------

pub fn good_point(k: usize, rng: &mut ChaCha8Rng) -> UnitVector {
    loop {
        let x = UnitVector::random(k, rng);
        if x[k].abs() > 0.2 && (k == 1 || x[0] * x[0] + x[1] * x[1] > 0.05) {
            return x;
        }
    }
}

pub struct Instance {
    pub y: VoteMatrix,
    pub config: LatentConfiguration,
    pub hp: Hyperparams,
}

pub fn instance(k: usize, ni: usize, nj: usize, rng: &mut ChaCha8Rng) -> Instance {
    let cells = (0..ni * nj)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.15 {
                None
            } else {
                Some(u < 0.6)
            }
        })
        .collect();
    let mut pts = |n: usize| (0..n).map(|_| good_point(k, rng)).collect::<Vec<_>>();
    let (beta, psi, zeta) = (pts(ni), pts(nj), pts(nj));
    let hp = Hyperparams {
        omega: rng.random_range(0.5..5.0),
        tau: rng.random_range(0.5..5.0),
        kappa: (0..nj).map(|_| rng.random_range(0.8..60.0)).collect(),
        lambda: 0.1,
    };
    Instance {
        y: VoteMatrix::new(ni, nj, cells).unwrap(),
        config: LatentConfiguration::new(beta, psi, zeta).unwrap(),
        hp,
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn position(c: &LatentConfiguration, t: Target) -> &UnitVector {
    match t {
        Target::Beta(i) => &c.beta[i],
        Target::Psi(j) => &c.psi[j],
        Target::Zeta(j) => &c.zeta[j],
    }
}

/// Analytic vs FD for the likelihood part and the full conditional, and
/// projected constrained vs unconstrained; returns the worst errors.
/// `target_kind`: 0 subject, 1 psi, 2 zeta.
pub fn gradient_check(k: usize, target_kind: u8, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = instance(k, 4, 5, &mut rng);
    let target = match target_kind {
        0 => Target::Beta(rng.random_range(0..4)),
        1 => Target::Psi(rng.random_range(0..5)),
        _ => Target::Zeta(rng.random_range(0..5)),
    };
    let ctx = ConditionalContext::new(k, &inst.hp).unwrap();
    let fc = ctx.conditional(&inst.y, &inst.config, target);
    let x = position(&inst.config, target);

    let gl = match target {
        Target::Beta(i) => grad_loglik_beta(i, &inst.y, &inst.config, &inst.hp),
        Target::Psi(j) => grad_loglik_psi(j, &inst.y, &inst.config, &inst.hp),
        Target::Zeta(j) => grad_loglik_zeta(j, &inst.y, &inst.config, &inst.hp),
    }
    .unwrap();
    assert_eq!(gl[k], 0.0);
    let fd_l = finite_difference_gradient(|p| Ok(fc.log_likelihood(p)), x, 1e-6).unwrap();
    let e_lik = rel_err(gl.as_slice(), fd_l.as_slice());

    let gf = grad_full_conditional(target, &inst.y, &inst.config, &inst.hp).unwrap();
    assert_eq!(gf[k], 0.0);
    let fd_f = finite_difference_gradient(|p| fc.log_density(p), x, 1e-6).unwrap();
    let e_full = rel_err(gf.as_slice(), fd_f.as_slice());

    let gu = fc.gradient_unconstrained(x.as_slice()).unwrap();
    let a = tangent_project(x, gf.as_slice()).unwrap();
    let b = tangent_project(x, gu.as_slice()).unwrap();
    let e_proj = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    (e_lik, e_full, e_proj)
}

// ---- sampling oracles ------------------------------------------------------

/// Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_stat(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Moments of `(cos phi_1, phi_1^2, cos 2 phi_2, phi_2^2)` under the SvM angle density.
pub fn svm_moments_quadrature(w1: f64, w2: f64) -> [f64; 4] {
    let n = 1200;
    let mut acc = [0.0; 4];
    let mut z = 0.0;
    for a in 0..n {
        let p1 = -PI + 2.0 * PI * (a as f64 + 0.5) / n as f64;
        for b in 0..n {
            let p2 = -PI / 2.0 + PI * (b as f64 + 0.5) / n as f64;
            let w = (w1 * p1.cos() + w2 * (2.0 * p2).cos()).exp();
            z += w;
            acc[0] += w * p1.cos();
            acc[1] += w * p1 * p1;
            acc[2] += w * (2.0 * p2).cos();
            acc[3] += w * p2 * p2;
        }
    }
    acc.map(|v| v / z)
}

/// The angle features compared against [`svm_moments_quadrature`].
pub fn svm_features(x: &UnitVector) -> [f64; 4] {
    let phi = cartesian_to_spherical_or_pole(x).into_inner();
    [phi[0].cos(), phi[0] * phi[0], (2.0 * phi[1]).cos(), phi[1] * phi[1]]
}

/// GHMC log target and gradient of the SvM prior on S^2.
pub fn svm_target(omega: [f64; 2]) -> impl Fn(&[f64]) -> spherefactor::Result<(f64, Vec<f64>)> {
    let masks = TriangularMasks::new(2);
    move |p: &[f64]| {
        let v = svm_hausdorff_kernel(p, &omega)?;
        Ok((v, grad_prior_jacobian_with(p, &omega, &masks)?.into_inner()))
    }
}

/// Samples SvM(w1, w2) on S^2 by GHMC with the wide item preset and
/// returns `(mc mean, quadrature value, batch-means s.e.)` per feature.
pub fn ghmc_svm_moments(w1: f64, w2: f64, n: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let target = svm_target([w1, w2]);
    let cfg = GhmcConfig::items_wide();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = UnitVector::north_pole(2);
    let (mut eps, mut l) = cfg.draw(&mut rng);
    let mut traces = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for it in 0..n + 2000 {
        if it % cfg.jitter_period == 0 {
            (eps, l) = cfg.draw(&mut rng);
        }
        ghmc_update(&mut x, &target, eps, l, &mut rng);
        if it >= 2000 {
            for (t, f) in traces.iter_mut().zip(svm_features(&x)) {
                t.push(f);
            }
        }
    }
    let want = svm_moments_quadrature(w1, w2);
    traces
        .iter()
        .zip(want)
        .map(|(t, w)| {
            let (m, se) = batch_means(t, 50);
            (m, w, se)
        })
        .collect()
}

/// Largest |dH| over `reps` GHMC trajectories of `leaps` steps of size `eps`
/// on SvM(7, 4).
pub fn max_energy_error(eps: f64, leaps: usize, reps: usize, seed: u64) -> f64 {
    let target = svm_target([7.0, 4.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..reps {
        let mut x = good_point(2, &mut rng);
        let out: GhmcOutcome = ghmc_update(&mut x, &target, eps, leaps, &mut rng);
        worst = worst.max(out.delta_h.abs());
    }
    worst
}

/// TV distance between two histograms given as weights over the same bins.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}

pub const BINS: usize = 20;

pub fn bin(t: f64) -> usize {
    ((t * BINS as f64) as usize).min(BINS - 1)
}

pub fn single_cell(vote: Option<bool>) -> VoteMatrix {
    VoteMatrix::new(1, 1, vec![vote]).unwrap()
}

/// One subject, one item, K = 1, one "yes": TV distance between the MCMC
/// histogram of theta and a dense grid posterior.
pub fn micro_posterior_tv(n_samples: usize, seed: u64) -> f64 {
    let (omega, tau, kappa) = (2.0, 2.0, 5.0);
    let y = single_cell(Some(true));
    let hp = Hyperparams {
        omega,
        tau,
        kappa: vec![kappa],
        lambda: 0.1,
    };
    let circ = |a: f64| UnitVector::new(vec![a.cos(), a.sin()]).unwrap();
    let init = SphericalState {
        config: LatentConfiguration::new(vec![circ(0.3)], vec![circ(-0.2)], vec![circ(0.5)]).unwrap(),
        hp: hp.clone(),
    };
    let opts = SphericalOptions {
        subject_presets: vec![GhmcConfig::new((0.1, 0.6), (1, 10), 50).unwrap()],
        item_presets: vec![GhmcConfig::new((0.1, 0.6), (1, 10), 50).unwrap()],
        update_hyperparams: false,
        ..SphericalOptions::default()
    };
    let mut settings = ChainSettings::new(1, n_samples, 2000, seed);
    settings.thin = 4;
    let chain = run_chain(&y, &settings, &opts, Some(init)).unwrap();
    assert_eq!(chain.samples.len(), n_samples);
    let mut mc = vec![0.0; BINS];
    for s in &chain.samples {
        let Sample::Spherical { config, hp } = s else { unreachable!() };
        mc[bin(theta(0, 0, config, hp).unwrap())] += 1.0;
    }

    // grid posterior over the three angles
    let link = LinkConcentration::new(kappa).unwrap();
    let n = 160;
    let angles: Vec<f64> = (0..n).map(|a| -PI + 2.0 * PI * (a as f64 + 0.5) / n as f64).collect();
    let pts: Vec<UnitVector> = angles.iter().map(|&a| circ(a)).collect();
    let mut grid = vec![0.0; BINS];
    for (ib, b) in pts.iter().enumerate() {
        for (ip, p) in pts.iter().enumerate() {
            for (iz, z) in pts.iter().enumerate() {
                let prior = (omega * angles[ib].cos() + tau * angles[ip].cos() + tau * angles[iz].cos()).exp();
                let t = link.cdf_pair(compute_e(p.as_slice(), z.as_slice(), b.as_slice())).0;
                grid[bin(t)] += prior * t;
            }
        }
    }
    tv(&mc, &grid)
}
