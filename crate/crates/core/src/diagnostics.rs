//! Model comparison and convergence diagnostics: DIC, in-sample accuracy,
//! a great-subsphere variant of principal nested spheres, Gelman-Rubin,
//! and Monte Carlo studies of the prior variance of `theta`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{svm_sample, vmf_sample, LinkConcentration, SvMParams, VmfParams};
use crate::error::{Error, Result};
use crate::geometry::{dot, spherical_to_cartesian, UnitVector};
use crate::model::{compute_e, log_likelihood_from_theta, VoteMatrix};
use crate::sampler::ChainOutput;

/// Posterior-mean `theta` at or above this value predicts a 1.
pub const ACCURACY_THRESHOLD: f64 = 0.5;

/// The paper's DIC: `l(mean theta) - 2 Var(l)`; higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dic: f64,
    pub fit_term: f64,
    pub complexity_term: f64,
}

/// Sample mean and variance (`n - 1` denominator).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    };
    (m, v)
}

/// Mean and batch-means standard error of an autocorrelated trace.
pub fn batch_means(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let b = (xs.len() / n_batches).max(1);
    let means: Vec<f64> = xs.chunks_exact(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let (_, v) = mean_var(&means);
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (m, (v / means.len() as f64).sqrt())
}

/// Element-wise posterior mean of the `theta` matrices of a chain.
pub fn posterior_mean_theta(chain: &ChainOutput) -> Result<Vec<f64>> {
    let first = chain
        .samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("chain has no samples".into()))?;
    let mut acc = first.theta_matrix()?;
    for s in &chain.samples[1..] {
        for (a, t) in acc.iter_mut().zip(s.theta_matrix()?) {
            *a += t;
        }
    }
    let n = chain.samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// DIC from a posterior-mean `theta` and a log-likelihood trace.
pub fn dic_from_parts(y: &VoteMatrix, theta_mean: &[f64], loglik: &[f64]) -> Result<DicReport> {
    if loglik.len() < 2 {
        return Err(Error::InvalidParameter("DIC needs at least 2 samples".into()));
    }
    if theta_mean.len() != y.n_subjects() * y.n_items() {
        return Err(Error::DimensionMismatch {
            expected: y.n_subjects() * y.n_items(),
            got: theta_mean.len(),
        });
    }
    let fit_term = log_likelihood_from_theta(y, theta_mean);
    let (_, v) = mean_var(loglik);
    let complexity_term = 2.0 * v;
    Ok(DicReport {
        dic: fit_term - complexity_term,
        fit_term,
        complexity_term,
    })
}

pub fn dic(chain: &ChainOutput, y: &VoteMatrix) -> Result<DicReport> {
    check_chain_matches(chain, y)?;
    dic_from_parts(y, &posterior_mean_theta(chain)?, &chain.loglik)
}

fn check_chain_matches(chain: &ChainOutput, y: &VoteMatrix) -> Result<()> {
    if chain.n_subjects() != Some(y.n_subjects()) || chain.n_items() != Some(y.n_items()) {
        return Err(Error::Incompatible("chain dimensions do not match the vote matrix".into()));
    }
    Ok(())
}

/// Fraction of observed cells where `theta_mean >= 0.5` agrees with the vote.
pub fn accuracy_from_theta(y: &VoteMatrix, theta_mean: &[f64]) -> f64 {
    let mut hit = 0usize;
    let mut n = 0usize;
    for (idx, c) in y.cells().iter().enumerate() {
        if let Some(v) = c {
            n += 1;
            if (theta_mean[idx] >= ACCURACY_THRESHOLD) == *v {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return f64::NAN;
    }
    hit as f64 / n as f64
}

pub fn in_sample_accuracy(chain: &ChainOutput, y: &VoteMatrix) -> Result<f64> {
    check_chain_matches(chain, y)?;
    Ok(accuracy_from_theta(y, &posterior_mean_theta(chain)?))
}

/// Residual variance per nested dimension, normalized to fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnsReport {
    /// `fractions[0]` is the variance about the Frechet mean on the final
    /// circle; `fractions[d]` (d >= 1) is the mean squared residual removed
    /// when going from S^{d+1} down to S^d.
    pub fractions: Vec<f64>,
    /// Unnormalized variances in the same order.
    pub variances: Vec<f64>,
    pub converged: bool,
}

/// Minimizes mean `asin(v.x)^2` over unit normals `v`; returns `(v, value, converged)`.
fn fit_great_subsphere(points: &[Vec<f64>]) -> (Vec<f64>, f64, bool) {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            for b in 0..d {
                scatter[(a, b)] += p[a] * p[b];
            }
        }
    }
    let eig = SymmetricEigen::new(scatter);
    let imin = eig.eigenvalues.imin();
    let mut v: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();

    let objective = |v: &[f64]| points.iter().map(|p| dot(v, p).clamp(-1.0, 1.0).asin().powi(2)).sum::<f64>() / n;
    let gradient = |v: &[f64]| {
        let mut g = vec![0.0; d];
        for p in points {
            let s = dot(v, p).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            let w = 2.0 * s.asin() / (1.0 - s * s).sqrt() / n;
            g.iter_mut().zip(p).for_each(|(gi, pi)| *gi += w * pi);
        }
        let r = dot(&g, v);
        g.iter_mut().zip(v).for_each(|(gi, vi)| *gi -= r * vi);
        g
    };

    let mut f = objective(&v);
    let mut step = 0.5;
    let mut converged = false;
    for _ in 0..500 {
        let g = gradient(&v);
        let gn = dot(&g, &g).sqrt();
        if gn < 1e-10 {
            converged = true;
            break;
        }
        let mut improved = false;
        while step > 1e-14 {
            let mut cand: Vec<f64> = v.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let cn = dot(&cand, &cand).sqrt();
            cand.iter_mut().for_each(|c| *c /= cn);
            let fc = objective(&cand);
            if fc < f {
                let gain = f - fc;
                v = cand;
                f = fc;
                improved = true;
                step *= 2.0;
                if gain < 1e-15 * f.max(1e-300) {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    (v, f, converged)
}

/// Orthonormal basis (as rows) of the complement of unit `v` in R^d.
fn complement_basis(v: &[f64]) -> Vec<Vec<f64>> {
    let d = v.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    let mut cands: Vec<usize> = (0..d).collect();
    cands.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()));
    for &e in &cands {
        let mut u = vec![0.0; d];
        u[e] = 1.0;
        for _ in 0..2 {
            let r = dot(&u, v);
            u.iter_mut().zip(v).for_each(|(a, b)| *a -= r * b);
            for b in &basis {
                let r = dot(&u, b);
                u.iter_mut().zip(b).for_each(|(a, c)| *a -= r * c);
            }
        }
        let n = dot(&u, &u).sqrt();
        if n > 1e-6 {
            u.iter_mut().for_each(|a| *a /= n);
            basis.push(u);
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    basis
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    a - t * ((a + std::f64::consts::PI) / t).floor()
}

/// Frechet mean and variance of angles on the circle.
pub fn circle_frechet(angles: &[f64]) -> (f64, f64) {
    let n = angles.len() as f64;
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let var_at = |m: f64| angles.iter().map(|a| wrap_angle(a - m).powi(2)).sum::<f64>() / n;
    // the circular mean is a good start; fixed-point iterations refine it,
    // and a coarse scan guards against a poor local minimum
    let mut best = s.atan2(c);
    let mut best_v = var_at(best);
    for i in 0..64 {
        let m = -std::f64::consts::PI + std::f64::consts::TAU * i as f64 / 64.0;
        let v = var_at(m);
        if v < best_v {
            best = m;
            best_v = v;
        }
    }
    for _ in 0..200 {
        let shift = angles.iter().map(|a| wrap_angle(a - best)).sum::<f64>() / n;
        let cand = wrap_angle(best + shift);
        let v = var_at(cand);
        if v >= best_v - 1e-16 {
            break;
        }
        best = cand;
        best_v = v;
    }
    (best, best_v)
}

/// Principal nested great spheres: repeatedly fits the great subsphere
/// minimizing the mean squared geodesic residual, projects onto it and
/// recurses down to a circle.
pub fn pns_great_decomposition(points: &[UnitVector]) -> Result<PnsReport> {
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if d < 2 {
        return Err(Error::InvalidParameter("PNS needs points on S^K with K >= 1".into()));
    }
    if points.len() < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "PNS on S^{} needs at least {} points, got {}",
            d - 1,
            d + 1,
            points.len()
        )));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: 0 });
    }
    let mut cur: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
    let mut residuals = Vec::new();
    let mut converged = true;
    while cur[0].len() > 2 {
        let (v, f, ok) = fit_great_subsphere(&cur);
        converged &= ok;
        residuals.push(f);
        let basis = complement_basis(&v);
        cur = cur
            .iter()
            .map(|p| {
                let mut q: Vec<f64> = basis.iter().map(|b| dot(b, p)).collect();
                let n = dot(&q, &q).sqrt();
                if n > 0.0 {
                    q.iter_mut().for_each(|a| *a /= n);
                } else {
                    // a pole of the fitted subsphere: any point is nearest
                    q[0] = 1.0;
                }
                q
            })
            .collect();
    }
    let angles: Vec<f64> = cur.iter().map(|p| p[1].atan2(p[0])).collect();
    let (_, circle_var) = circle_frechet(&angles);
    let mut variances = vec![circle_var];
    variances.extend(residuals.iter().rev());
    let total: f64 = variances.iter().sum();
    let fractions = if total > 0.0 {
        variances.iter().map(|v| v / total).collect()
    } else {
        let mut f = vec![0.0; variances.len()];
        f[0] = 1.0;
        f
    };
    if !converged {
        log::warn!("PNS: subsphere fit did not converge at some level");
    }
    Ok(PnsReport {
        fractions,
        variances,
        converged,
    })
}

/// Potential scale reduction of a scalar from equal-length traces, with
/// `V = W + (m + 1) B / (m n)`, so identical chains give exactly 1.
pub fn gelman_rubin(traces: &[Vec<f64>]) -> Result<f64> {
    let m = traces.len();
    if m < 2 {
        return Err(Error::InvalidParameter("Gelman-Rubin needs at least 2 chains".into()));
    }
    let n = traces[0].len();
    if n < 2 || traces.iter().any(|t| t.len() != n) {
        return Err(Error::InvalidParameter("traces must have equal length >= 2".into()));
    }
    let stats: Vec<(f64, f64)> = traces.iter().map(|t| mean_var(t)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let b = n as f64 * mean_var(&means).1;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let v = w + (m as f64 + 1.0) / (m as f64 * n as f64) * b;
    Ok((v / w).sqrt())
}

/// Prior families compared in the degeneracy studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorFamily {
    /// vMF centered at the north pole with concentrations `omega`, `tau`.
    Vmf,
    /// SvM with precisions `k^2 omega`, `k^2 tau`.
    SvmPolynomial,
}

/// One row of a prior variance study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub k: usize,
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
}

/// Mean, variance and their standard errors of a sample.
pub fn variance_row(k: usize, xs: &[f64]) -> VarianceRow {
    let n = xs.len();
    let (m, v) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
    VarianceRow {
        k,
        n,
        mean: m,
        mean_se: (v / n as f64).sqrt(),
        var: v,
        var_se: ((m4 - v * v).max(0.0) / n as f64).sqrt(),
    }
}

/// Draws `n` prior values of `theta` at fixed `omega`, `tau`, `kappa`.
pub fn prior_theta_draws(
    family: PriorFamily,
    k: usize,
    omega: f64,
    tau: f64,
    kappa: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let link = LinkConcentration::new(kappa)?;
    match family {
        PriorFamily::Vmf => {
            let pole = UnitVector::north_pole(k);
            let pb = VmfParams::new(pole.clone(), omega)?;
            let pi = VmfParams::new(pole, tau)?;
            Ok((0..n)
                .map(|_| {
                    let b = vmf_sample(&pb, rng);
                    let p = vmf_sample(&pi, rng);
                    let z = vmf_sample(&pi, rng);
                    link.cdf_pair(compute_e(p.as_slice(), z.as_slice(), b.as_slice())).0
                })
                .collect())
        }
        PriorFamily::SvmPolynomial => {
            let pb = SvMParams::polynomial(omega, k)?;
            let pi = SvMParams::polynomial(tau, k)?;
            Ok((0..n)
                .map(|_| {
                    let b = spherical_to_cartesian(&svm_sample(&pb, rng));
                    let p = spherical_to_cartesian(&svm_sample(&pi, rng));
                    let z = spherical_to_cartesian(&svm_sample(&pi, rng));
                    link.cdf_pair(compute_e(p.as_slice(), z.as_slice(), b.as_slice())).0
                })
                .collect())
        }
    }
}

/// Monte Carlo `Var(theta)` for each `K`; each `K` gets its own seeded stream.
pub fn prior_variance_study(
    family: PriorFamily,
    omega: f64,
    tau: f64,
    k_list: &[usize],
    kappa: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if n < 2 {
        return Err(Error::InvalidParameter("prior study needs n >= 2".into()));
    }
    use rayon::prelude::*;
    k_list
        .par_iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::InvalidParameter("K must be at least 1".into()));
            }
            let mut rng = crate::sampler::stream_rng(seed, k as u64, 100 + family as u64, 0);
            let xs = prior_theta_draws(family, k, omega, tau, kappa, n, &mut rng)?;
            Ok(variance_row(k, &xs))
        })
        .collect()
}

/// Seeded RNG for ad-hoc diagnostics.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
