//! Identifiability resolution and posterior summaries.
//!
//! The likelihood only sees geodesic distances, so any orthogonal map
//! applied to every position at once leaves it unchanged. Samples are first
//! reflected into a canonical octant and then aligned by orthogonal
//! Procrustes to a reference configuration.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical_or_pole, dot, UnitVector};
use crate::model::{theta_matrix, EuclideanParams, Hyperparams, LatentConfiguration};
use crate::sampler::{ChainOutput, Sample};

/// Relative singular-value cutoff below which Procrustes is not attempted.
pub const PROCRUSTES_RANK_TOL: f64 = 1e-10;

/// Alignment-resolved spherical samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSamples {
    pub configs: Vec<LatentConfiguration>,
    pub hyper: Vec<Hyperparams>,
    pub loglik: Vec<f64>,
    pub reference_subject: usize,
    /// Index of the sample used as the Procrustes reference, if any.
    pub reference_sample: Option<usize>,
    /// Samples where Procrustes fell back to reflections only.
    pub fallbacks: usize,
}

fn map_positions(c: &LatentConfiguration, f: impl Fn(&UnitVector) -> UnitVector) -> LatentConfiguration {
    LatentConfiguration {
        beta: c.beta.iter().map(&f).collect(),
        psi: c.psi.iter().map(&f).collect(),
        zeta: c.zeta.iter().map(&f).collect(),
    }
}

/// Flips coordinate signs (jointly for all positions) so that the
/// reference subject has nonnegative coordinates. Ties at 0 stay positive.
pub fn fix_reflection(config: &LatentConfiguration, reference_subject: usize) -> Result<LatentConfiguration> {
    let r = config.beta.get(reference_subject).ok_or_else(|| {
        Error::InvalidParameter(format!("reference subject {reference_subject} out of range"))
    })?;
    if r.as_slice().contains(&0.0) {
        log::debug!("reference subject has a zero coordinate; tie resolved toward +");
    }
    let negate: Vec<bool> = r.as_slice().iter().map(|&v| v < 0.0).collect();
    if !negate.contains(&true) {
        return Ok(config.clone());
    }
    Ok(map_positions(config, |x| x.reflected(&negate)))
}

pub fn fix_reflections(configs: &[LatentConfiguration], reference_subject: usize) -> Result<Vec<LatentConfiguration>> {
    if configs.is_empty() {
        return Err(Error::InvalidParameter("no samples to align".into()));
    }
    configs.par_iter().map(|c| fix_reflection(c, reference_subject)).collect()
}

fn stacked(c: &LatentConfiguration) -> impl Iterator<Item = &UnitVector> {
    c.beta.iter().chain(&c.psi).chain(&c.zeta)
}

/// Sum of squared chordal distances between matching positions.
pub fn procrustes_objective(a: &LatentConfiguration, b: &LatentConfiguration) -> f64 {
    stacked(a)
        .zip(stacked(b))
        .map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum()
}

/// Orthogonal `Q` minimizing `sum |Q x_n - r_n|^2`, or `None` when the
/// cross-covariance is rank deficient.
pub fn procrustes_rotation(sample: &LatentConfiguration, reference: &LatentConfiguration) -> Option<DMatrix<f64>> {
    let d = sample.k() + 1;
    let mut m = DMatrix::<f64>::zeros(d, d);
    for (x, r) in stacked(sample).zip(stacked(reference)) {
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += r[a] * x[b];
            }
        }
    }
    // m = sum r x^T = U S V^T; Q = U V^T
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= PROCRUSTES_RANK_TOL * smax {
        return None;
    }
    Some(svd.u? * svd.v_t?)
}

fn apply(q: &DMatrix<f64>, c: &LatentConfiguration) -> LatentConfiguration {
    let d = q.nrows();
    map_positions(c, |x| {
        let v: Vec<f64> = (0..d).map(|a| (0..d).map(|b| q[(a, b)] * x[b]).sum()).collect();
        UnitVector::from_unnormalized(v)
    })
}

/// Aligns one sample to `reference`; returns the sample and whether it fell
/// back to reflection fixing.
pub fn procrustes_align_one(
    sample: &LatentConfiguration,
    reference: &LatentConfiguration,
    reference_subject: usize,
) -> Result<(LatentConfiguration, bool)> {
    if sample.k() != reference.k()
        || sample.n_subjects() != reference.n_subjects()
        || sample.n_items() != reference.n_items()
    {
        return Err(Error::Incompatible("sample and reference have different shapes".into()));
    }
    match procrustes_rotation(sample, reference) {
        Some(q) => Ok((apply(&q, sample), false)),
        None => {
            log::warn!("rank-deficient cross-covariance; falling back to reflection fixing");
            Ok((fix_reflection(sample, reference_subject)?, true))
        }
    }
}

pub fn procrustes_align(
    configs: &[LatentConfiguration],
    reference: &LatentConfiguration,
    reference_subject: usize,
) -> Result<(Vec<LatentConfiguration>, usize)> {
    let out: Vec<(LatentConfiguration, bool)> = configs
        .par_iter()
        .map(|c| procrustes_align_one(c, reference, reference_subject))
        .collect::<Result<_>>()?;
    let fallbacks = out.iter().filter(|(_, f)| *f).count();
    Ok((out.into_iter().map(|(c, _)| c).collect(), fallbacks))
}

/// Reflections to the canonical octant, then Procrustes to the
/// highest-likelihood sample.
pub fn align_chain(chain: &ChainOutput, reference_subject: usize) -> Result<AlignedSamples> {
    let mut configs = Vec::with_capacity(chain.samples.len());
    let mut hyper = Vec::with_capacity(chain.samples.len());
    for s in &chain.samples {
        match s {
            Sample::Spherical { config, hp } => {
                configs.push(config.clone());
                hyper.push(hp.clone());
            }
            Sample::Euclidean(_) => {
                return Err(Error::Incompatible("alignment applies to spherical chains".into()));
            }
        }
    }
    let reflected = fix_reflections(&configs, reference_subject)?;
    let best = chain
        .loglik
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let reference = reflected[best].clone();
    let (configs, fallbacks) = procrustes_align(&reflected, &reference, reference_subject)?;
    Ok(AlignedSamples {
        configs,
        hyper,
        loglik: chain.loglik.clone(),
        reference_subject,
        reference_sample: Some(best),
        fallbacks,
    })
}

/// Posterior summary of one latent position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    /// Mean of the samples renormalized to the sphere.
    pub mean: Vec<f64>,
    /// Circular mean of each angular coordinate.
    pub angle_center: Vec<f64>,
    /// Equal-tailed interval bounds of each angle, unwrapped around its center.
    pub angle_lower: Vec<f64>,
    pub angle_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub level: f64,
    pub subjects: Vec<PositionSummary>,
    pub psi: Vec<PositionSummary>,
    pub zeta: Vec<PositionSummary>,
    /// Row-major posterior mean of `theta`.
    pub theta_mean: Vec<f64>,
    pub omega_mean: f64,
    pub tau_mean: f64,
    /// Posterior mean of `1/lambda`.
    pub inv_lambda_mean: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn wrap(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    a - t * ((a + std::f64::consts::PI) / t).floor()
}

fn summarize_position(xs: &[&UnitVector], level: f64) -> PositionSummary {
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in xs {
        mean.iter_mut().zip(x.as_slice()).for_each(|(m, v)| *m += v);
    }
    let n = dot(&mean, &mean).sqrt();
    if n > 0.0 {
        mean.iter_mut().for_each(|m| *m /= n);
    }
    let angles: Vec<Vec<f64>> = xs.iter().map(|x| cartesian_to_spherical_or_pole(x).into_inner()).collect();
    let mut center = Vec::with_capacity(d - 1);
    let mut lower = Vec::with_capacity(d - 1);
    let mut upper = Vec::with_capacity(d - 1);
    let alpha = (1.0 - level) / 2.0;
    for k in 0..d - 1 {
        let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a[k].sin(), c + a[k].cos()));
        let m = s.atan2(c);
        let mut dev: Vec<f64> = angles.iter().map(|a| wrap(a[k] - m)).collect();
        dev.sort_by(f64::total_cmp);
        center.push(m);
        lower.push(m + quantile_sorted(&dev, alpha));
        upper.push(m + quantile_sorted(&dev, 1.0 - alpha));
    }
    PositionSummary {
        mean,
        angle_center: center,
        angle_lower: lower,
        angle_upper: upper,
    }
}

/// Posterior means, equal-tailed angular intervals at `level` and the mean
/// `theta` matrix.
pub fn summarize(aligned: &AlignedSamples, level: f64) -> Result<PosteriorSummary> {
    if aligned.configs.is_empty() {
        return Err(Error::InvalidParameter("no samples to summarize".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("credible level must be in (0,1), got {level}")));
    }
    let first = &aligned.configs[0];
    let per = |get: &(dyn Fn(&LatentConfiguration) -> &Vec<UnitVector> + Sync), count: usize| -> Vec<PositionSummary> {
        (0..count)
            .into_par_iter()
            .map(|idx| {
                let xs: Vec<&UnitVector> = aligned.configs.iter().map(|c| &get(c)[idx]).collect();
                summarize_position(&xs, level)
            })
            .collect()
    };
    let subjects = per(&|c| &c.beta, first.n_subjects());
    let psi = per(&|c| &c.psi, first.n_items());
    let zeta = per(&|c| &c.zeta, first.n_items());

    let thetas: Vec<Vec<f64>> = aligned
        .configs
        .par_iter()
        .zip(&aligned.hyper)
        .map(|(c, h)| theta_matrix(c, h))
        .collect::<Result<_>>()?;
    let n = thetas.len() as f64;
    let mut theta_mean = vec![0.0; thetas[0].len()];
    for t in &thetas {
        theta_mean.iter_mut().zip(t).for_each(|(m, v)| *m += v);
    }
    theta_mean.iter_mut().for_each(|m| *m /= n);
    let hn = aligned.hyper.len() as f64;
    Ok(PosteriorSummary {
        level,
        subjects,
        psi,
        zeta,
        theta_mean,
        omega_mean: aligned.hyper.iter().map(|h| h.omega).sum::<f64>() / hn,
        tau_mean: aligned.hyper.iter().map(|h| h.tau).sum::<f64>() / hn,
        inv_lambda_mean: aligned.hyper.iter().map(|h| 1.0 / h.lambda).sum::<f64>() / hn,
    })
}

/// Ranks (1-based) with ties averaged.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile_sorted(&xs, 0.5)
}

fn median_ranks(per_sample: &[Vec<f64>]) -> Vec<f64> {
    let n = per_sample[0].len();
    (0..n).map(|i| median(per_sample.iter().map(|v| average_ranks(v)[i]).collect())).collect()
}

/// Per-subject median rank of the angle on the circle (K = 1). The circle is
/// cut at the middle of the widest gap between the subjects' mean
/// directions, so the order starts where no subject sits.
pub fn circular_ranks(configs: &[LatentConfiguration]) -> Result<Vec<f64>> {
    if configs.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    if configs.iter().any(|c| c.k() != 1) {
        return Err(Error::Incompatible("circular ranks need a K = 1 model".into()));
    }
    let n = configs[0].n_subjects();
    let mut sums = vec![[0.0f64; 2]; n];
    for c in configs {
        for (s, x) in sums.iter_mut().zip(&c.beta) {
            s[0] += x[0];
            s[1] += x[1];
        }
    }
    let mut means: Vec<f64> = sums.iter().map(|s| s[1].atan2(s[0])).collect();
    means.sort_by(f64::total_cmp);
    let cut = if n < 2 {
        means[0] + PI
    } else {
        let mut best = (means[0] + 2.0 * PI - means[n - 1], means[n - 1]);
        for w in means.windows(2) {
            if w[1] - w[0] > best.0 {
                best = (w[1] - w[0], w[0]);
            }
        }
        best.1 + best.0 / 2.0
    };
    let angles: Vec<Vec<f64>> = configs
        .iter()
        .map(|c| c.beta.iter().map(|x| (x[1].atan2(x[0]) - cut).rem_euclid(2.0 * PI)).collect())
        .collect();
    Ok(median_ranks(&angles))
}

/// Per-subject median rank of the 1-D Euclidean trait.
pub fn euclidean_ranks(samples: &[EuclideanParams]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    if samples.iter().any(|p| p.k() != 1) {
        return Err(Error::Incompatible("Euclidean ranks need a K = 1 model".into()));
    }
    let vals: Vec<Vec<f64>> = samples.iter().map(|p| p.beta.iter().map(|b| b[0]).collect()).collect();
    Ok(median_ranks(&vals))
}

/// Ordinal ranks 1..n, ties broken by position; turns median ranks into a
/// permutation.
pub fn ordinal_ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    for (r, &i) in idx.iter().enumerate() {
        out[i] = r + 1;
    }
    out
}

/// Spearman correlation of two rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Reverses `ranks` when that makes them agree better with `target`; the
/// 1-D Euclidean model and the circle have no preferred orientation.
pub fn orient_ranks(ranks: &[f64], target: &[f64]) -> Vec<f64> {
    if spearman(ranks, target) < 0.0 {
        let n = ranks.len() as f64;
        ranks.iter().map(|r| n + 1.0 - r).collect()
    } else {
        ranks.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_orthogonal, rotate};
    use crate::model::{theta_matrix, Hyperparams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(k: usize, seed: u64) -> LatentConfiguration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentConfiguration::sample_prior(k, 5, 7, 1.0, 1.0, &mut rng).unwrap()
    }

    fn hp() -> Hyperparams {
        Hyperparams {
            omega: 1.0,
            tau: 1.0,
            kappa: vec![20.0; 7],
            lambda: 0.1,
        }
    }

    fn rotated(c: &LatentConfiguration, q: &DMatrix<f64>) -> LatentConfiguration {
        map_positions(c, |x| rotate(q, x))
    }

    fn distances(c: &LatentConfiguration) -> Vec<f64> {
        let all: Vec<&UnitVector> = stacked(c).collect();
        let mut d = Vec::new();
        for a in 0..all.len() {
            for b in 0..a {
                d.push(crate::geometry::arc_distance(all[a].as_slice(), all[b].as_slice()));
            }
        }
        d
    }

    #[test]
    fn reflections() {
        let c = fix_reflection(&config(3, 1), 0).unwrap();
        assert!(c.beta[0].as_slice().iter().all(|&v| v >= 0.0));
        assert_eq!(fix_reflection(&c, 0).unwrap(), c);
        // negate one dimension globally and restore
        let mut flipped = c.clone();
        for x in flipped.beta.iter_mut().chain(flipped.psi.iter_mut()).chain(flipped.zeta.iter_mut()) {
            *x = x.reflected(&[false, false, true, false]);
        }
        let back = fix_reflection(&flipped, 0).unwrap();
        assert_eq!(back, c);
        let (t1, t2) = (theta_matrix(&c, &hp()).unwrap(), theta_matrix(&flipped, &hp()).unwrap());
        assert!(t1.iter().zip(&t2).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(fix_reflections(&[], 0).is_err());
        assert!(fix_reflection(&c, 99).is_err());
    }

    #[test]
    fn alignment_is_isometric_and_recovers_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1usize, 2, 4] {
            let reference = config(k, 10 + k as u64);
            let q = random_orthogonal(k + 1, &mut rng);
            let sample = rotated(&reference, &q);
            let (aligned, fell_back) = procrustes_align_one(&sample, &reference, 0).unwrap();
            assert!(!fell_back);
            for (a, b) in stacked(&aligned).zip(stacked(&reference)) {
                for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                    assert!((u - v).abs() < 1e-8);
                }
            }
            let d0 = distances(&sample);
            let d1 = distances(&fix_reflection(&sample, 0).unwrap());
            let d2 = distances(&aligned);
            for ((a, b), c) in d0.iter().zip(&d1).zip(&d2) {
                assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
            }
            // objective never increases
            let other = config(k, 99);
            let (al, _) = procrustes_align_one(&other, &reference, 0).unwrap();
            assert!(procrustes_objective(&al, &reference) <= procrustes_objective(&other, &reference) + 1e-12);
        }
    }

    #[test]
    fn rank_deficient_falls_back() {
        // all positions equal: cross-covariance has rank 1
        let p = UnitVector::new(vec![0.6, -0.8, 0.0]).unwrap();
        let c = LatentConfiguration::new(vec![p.clone(); 2], vec![p.clone(); 2], vec![p; 2]).unwrap();
        let (out, fell_back) = procrustes_align_one(&c, &c, 0).unwrap();
        assert!(fell_back);
        assert!(out.beta[0].as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn summaries() {
        let c = config(2, 3);
        let aligned = AlignedSamples {
            configs: vec![c.clone(); 4],
            hyper: vec![hp(); 4],
            loglik: vec![0.0; 4],
            reference_subject: 0,
            reference_sample: None,
            fallbacks: 0,
        };
        let s = summarize(&aligned, 0.95).unwrap();
        for p in &s.subjects {
            assert!(p.angle_lower.iter().zip(&p.angle_upper).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!((dot(&p.mean, &p.mean) - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.theta_mean, theta_matrix(&c, &hp()).unwrap());
        assert!((s.inv_lambda_mean - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
        let at = |a: f64| UnitVector::new(vec![a.cos(), a.sin()]).unwrap();
        let mk = |angles: &[f64]| {
            LatentConfiguration::new(angles.iter().map(|&a| at(a)).collect(), vec![at(0.0)], vec![at(0.1)]).unwrap()
        };
        let r = circular_ranks(&[mk(&[1.0, -1.0]), mk(&[1.1, -0.9])]).unwrap();
        assert_eq!(r, vec![2.0, 1.0]);
        // common offset not crossing the cut
        let base = [0.3, -1.2, 2.0, 0.9];
        let shifted: Vec<f64> = base.iter().map(|a| a + 0.5).collect();
        assert_eq!(circular_ranks(&[mk(&base)]).unwrap(), circular_ranks(&[mk(&shifted)]).unwrap());
        let mut sorted = circular_ranks(&[mk(&base)]).unwrap();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(circular_ranks(&[config(2, 1)]).is_err());
        assert_eq!(orient_ranks(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), vec![3.0, 2.0, 1.0]);
    }
}
