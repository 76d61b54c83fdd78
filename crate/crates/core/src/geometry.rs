//! Primitives on the unit hypersphere S^K embedded in R^{K+1}.
//!
//! Positions are stored in Cartesian form. The hyperspherical angles
//! `(phi_1, ..., phi_K)` are related to the Cartesian coordinates by
//!
//! ```text
//! x_1     = cos(phi_1) * prod_{m>=2} cos(phi_m)
//! x_{k+1} = sin(phi_k) * prod_{m>k}  cos(phi_m)     (k = 1..K)
//! ```
//!
//! so that `x_{K+1} = sin(phi_K)` and the prefix sums satisfy
//! `sum_{t<=k+1} x_t^2 = prod_{m>k} cos^2(phi_m)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Norm tolerance accepted when wrapping caller-supplied vectors.
const INPUT_NORM_TOL: f64 = 1e-8;

/// Prefix sums of squares below this make `phi_1` undefined.
pub const DEGENERATE_PREFIX: f64 = 1e-300;

/// A point on S^K in Cartesian coordinates (length K+1).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `x` after checking it is unit norm to within 1e-8, then
    /// renormalizes so the stored value is unit to float precision.
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: x.len(),
            });
        }
        let n = norm(&x);
        if !n.is_finite() || (n - 1.0).abs() > INPUT_NORM_TOL {
            return Err(Error::NotUnit(n));
        }
        Ok(Self::from_unnormalized(x))
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere.
    pub fn from_unnormalized(mut x: Vec<f64>) -> Self {
        let n = norm(&x);
        debug_assert!(n > 0.0 && n.is_finite());
        x.iter_mut().for_each(|v| *v /= n);
        UnitVector(x)
    }

    /// Keeps the coordinates bit for bit after checking they are unit norm
    /// to `1e-9`; used when reading stored samples.
    pub fn from_stored(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
        }
        let n = norm(&x);
        if !((n - 1.0).abs() < 1e-9) {
            return Err(Error::NotUnit(n));
        }
        Ok(UnitVector(x))
    }

    /// `(1, 0, ..., 0)` on S^k.
    pub fn north_pole(k: usize) -> Self {
        let mut x = vec![0.0; k + 1];
        x[0] = 1.0;
        UnitVector(x)
    }

    /// Uniformly distributed point on S^k.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        loop {
            let x: Vec<f64> = (0..=k).map(|_| rng.sample(StandardNormal)).collect();
            if norm(&x) > 1e-12 {
                return Self::from_unnormalized(x);
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Ambient dimension K+1.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Intrinsic dimension K.
    pub fn sphere_dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Mutable access for samplers that renormalize afterwards.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub(crate) fn renormalize(&mut self) -> f64 {
        let n = norm(&self.0);
        self.0.iter_mut().for_each(|v| *v /= n);
        n
    }

    /// Flips the sign of each coordinate where `negate[d]` holds; exact.
    pub fn reflected(&self, negate: &[bool]) -> Self {
        UnitVector(self.0.iter().zip(negate).map(|(&v, &n)| if n { -v } else { v }).collect())
    }

    /// The antipodal point.
    pub fn negated(&self) -> Self {
        UnitVector(self.0.iter().map(|v| -v).collect())
    }

    /// The same point on the great subsphere `x_{K+2} = 0` of S^{K+1};
    /// coordinates are copied bit for bit.
    pub fn embed(&self) -> Self {
        let mut x = self.0.clone();
        x.push(0.0);
        UnitVector(x)
    }
}

impl std::ops::Index<usize> for UnitVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Hyperspherical angles `phi_1 in [-pi, pi]`, `phi_k in [-pi/2, pi/2]` for `k >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularCoords(Vec<f64>);

impl AngularCoords {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (idx, &p) in phi.iter().enumerate() {
            let bound = if idx == 0 { PI } else { FRAC_PI_2 };
            if !p.is_finite() || p.abs() > bound {
                return Err(Error::AngleOutOfRange {
                    index: idx + 1,
                    value: p,
                });
            }
        }
        Ok(AngularCoords(phi))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Number of angles K.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn spherical_to_cartesian(phi: &AngularCoords) -> UnitVector {
    let phi = phi.as_slice();
    let k = phi.len();
    let mut x = vec![0.0; k + 1];
    // suffix product of cosines, prod_{m>idx} cos(phi_m)
    let mut tail = 1.0;
    for idx in (0..k).rev() {
        let (s, c) = phi[idx].sin_cos();
        x[idx + 1] = s * tail;
        if idx == 0 {
            x[0] = c * tail;
        }
        tail *= c;
    }
    UnitVector::from_unnormalized(x)
}

/// Inverse of [`spherical_to_cartesian`]. Fails when `x_1^2 + x_2^2` is
/// too small for `phi_1` to be defined.
pub fn cartesian_to_spherical(x: &UnitVector) -> Result<AngularCoords> {
    let s2 = x[0] * x[0] + x[1] * x[1];
    if s2 < DEGENERATE_PREFIX {
        return Err(Error::DegenerateCoordinate(s2));
    }
    Ok(AngularCoords(invert_angles(x.as_slice())))
}

/// Like [`cartesian_to_spherical`] but resolves the pole tie by setting
/// the undefined angle to 0.
pub fn cartesian_to_spherical_or_pole(x: &UnitVector) -> AngularCoords {
    AngularCoords(invert_angles(x.as_slice()))
}

fn invert_angles(x: &[f64]) -> Vec<f64> {
    let k = x.len() - 1;
    let mut phi = vec![0.0; k];
    let mut prefix = x[0] * x[0];
    for idx in 1..=k {
        let r = prefix.sqrt();
        phi[idx - 1] = if idx == 1 {
            if prefix + x[1] * x[1] < DEGENERATE_PREFIX {
                0.0
            } else {
                x[1].atan2(x[0])
            }
        } else {
            x[idx].atan2(r)
        };
        prefix += x[idx] * x[idx];
    }
    phi
}

/// Great-circle distance `arccos(x . z)` with the dot product clamped to [-1, 1].
pub fn geodesic_distance(x: &UnitVector, z: &UnitVector) -> Result<f64> {
    check_dims(x.len(), z.len())?;
    Ok(arc_distance(x.as_slice(), z.as_slice()))
}

/// Unchecked slice form of [`geodesic_distance`] for inner loops.
#[inline]
pub fn arc_distance(x: &[f64], z: &[f64]) -> f64 {
    dot(x, z).clamp(-1.0, 1.0).acos()
}

/// `(I - x x^T) v`.
pub fn tangent_project(x: &UnitVector, v: &[f64]) -> Result<Vec<f64>> {
    check_dims(x.len(), v.len())?;
    let mut out = v.to_vec();
    project_in_place(x.as_slice(), &mut out);
    Ok(out)
}

#[inline]
pub fn project_in_place(x: &[f64], v: &mut [f64]) {
    let c = dot(x, v);
    v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= c * xi);
}

/// Exact geodesic flow for time `eps` with initial velocity `gamma`
/// tangent at `x`. Returns the new position and velocity.
pub fn geodesic_flow(x: &UnitVector, gamma: &[f64], eps: f64) -> Result<(UnitVector, Vec<f64>)> {
    check_dims(x.len(), gamma.len())?;
    let mut pos = x.as_slice().to_vec();
    let mut vel = gamma.to_vec();
    flow_in_place(&mut pos, &mut vel, eps);
    Ok((UnitVector::from_unnormalized(pos), vel))
}

/// In-place geodesic flow; `nu = |gamma|` is preserved up to rounding.
pub fn flow_in_place(x: &mut [f64], gamma: &mut [f64], eps: f64) {
    let nu = norm(gamma);
    if nu == 0.0 || eps == 0.0 {
        return;
    }
    let (s, c) = (nu * eps).sin_cos();
    for (xi, gi) in x.iter_mut().zip(gamma.iter_mut()) {
        let x0 = *xi;
        let g0 = *gi;
        *xi = x0 * c + g0 / nu * s;
        *gi = g0 * c - nu * x0 * s;
    }
}

/// Haar-distributed orthogonal matrix of size `d` (QR of a Gaussian matrix
/// with the sign convention that makes R's diagonal positive).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Applies a (K+1)x(K+1) matrix to a unit vector and renormalizes.
pub fn rotate(q: &DMatrix<f64>, x: &UnitVector) -> UnitVector {
    let d = x.len();
    let mut out = vec![0.0; d];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..d).map(|c| q[(r, c)] * x[c]).sum();
    }
    UnitVector::from_unnormalized(out)
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uv(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn to_cartesian_examples() {
        let x = spherical_to_cartesian(&AngularCoords::new(vec![0.0, 0.0]).unwrap());
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0]);

        let x = spherical_to_cartesian(&AngularCoords::new(vec![FRAC_PI_2]).unwrap());
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);

        let x = spherical_to_cartesian(&AngularCoords::new(vec![FRAC_PI_2, PI / 4.0]).unwrap());
        let h = 2f64.sqrt() / 2.0;
        assert!(x[0].abs() < 1e-15);
        assert!((x[1] - h).abs() < 1e-15 && (x[2] - h).abs() < 1e-15);
    }

    #[test]
    fn angle_range_rejected() {
        assert!(matches!(
            AngularCoords::new(vec![0.0, 2.0]),
            Err(Error::AngleOutOfRange { index: 2, .. })
        ));
        assert!(AngularCoords::new(vec![3.2]).is_err());
        assert!(AngularCoords::new(vec![]).is_err());
    }

    #[test]
    fn to_spherical_examples() {
        let phi = cartesian_to_spherical(&uv(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(phi.as_slice(), &[0.0, 0.0]);
        let phi = cartesian_to_spherical(&uv(&[0.0, 1.0])).unwrap();
        assert!((phi.as_slice()[0] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn pole_is_degenerate() {
        let pole = uv(&[0.0, 0.0, 1.0]);
        assert!(matches!(
            cartesian_to_spherical(&pole),
            Err(Error::DegenerateCoordinate(_))
        ));
        let phi = cartesian_to_spherical_or_pole(&pole);
        assert_eq!(phi.as_slice()[0], 0.0);
        assert!((phi.as_slice()[1] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn round_trip_many_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for n in 0..10_000 {
            let k = 1 + n % 6;
            let x = UnitVector::random(k, &mut rng);
            let back = spherical_to_cartesian(&cartesian_to_spherical(&x).unwrap());
            for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "worst round-trip error {worst}");
    }

    #[test]
    fn distance_examples() {
        let x = uv(&[0.6, 0.8, 0.0]);
        assert_eq!(geodesic_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(geodesic_distance(&x, &x.negated()).unwrap(), PI);
        let y = uv(&[-0.8, 0.6, 0.0]);
        assert!((geodesic_distance(&x, &y).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(geodesic_distance(&x, &uv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let a = UnitVector::random(3, &mut rng);
            let b = UnitVector::random(3, &mut rng);
            let c = UnitVector::random(3, &mut rng);
            let ab = geodesic_distance(&a, &b).unwrap();
            let bc = geodesic_distance(&b, &c).unwrap();
            let ac = geodesic_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
            assert!((ab - geodesic_distance(&b, &a).unwrap()).abs() == 0.0);
        }
    }

    #[test]
    fn nested_sphere_distance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = UnitVector::random(2, &mut rng);
            let b = UnitVector::random(2, &mut rng);
            let mut a3 = a.as_slice().to_vec();
            a3.push(0.0);
            let mut b3 = b.as_slice().to_vec();
            b3.push(0.0);
            assert_eq!(
                arc_distance(&a3, &b3),
                geodesic_distance(&a, &b).unwrap()
            );
        }
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = UnitVector::random(4, &mut rng);
        let p = tangent_project(&x, x.as_slice()).unwrap();
        assert!(norm(&p) < 1e-15);

        let v: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let p = tangent_project(&x, &v).unwrap();
        assert!(dot(&p, x.as_slice()).abs() < 1e-10);
        // dense oracle: (I - x x^T) v
        for r in 0..5 {
            let dense: f64 = (0..5)
                .map(|c| ((r == c) as u8 as f64 - x[r] * x[c]) * v[c])
                .sum();
            assert!((dense - p[r]).abs() < 1e-12);
        }
        // already tangent: unchanged
        let q = tangent_project(&x, &p).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_identity_and_period() {
        let x = uv(&[1.0, 0.0, 0.0]);
        let g = vec![0.0, 0.7, 0.0];
        let (y, h) = geodesic_flow(&x, &g, 0.0).unwrap();
        assert_eq!(y, x);
        assert_eq!(h, g);

        let eps = 2.0 * PI / 0.7;
        let (y, _) = geodesic_flow(&x, &g, eps).unwrap();
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }

        let (y, h) = geodesic_flow(&x, &[0.0; 3], 0.3).unwrap();
        assert_eq!(y, x);
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn flow_invariants_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = UnitVector::random(3, &mut rng);
        let v: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let g0 = tangent_project(&x0, &v).unwrap();
        let nu0 = norm(&g0);
        let mut x = x0.as_slice().to_vec();
        let mut g = g0.clone();
        for _ in 0..1000 {
            flow_in_place(&mut x, &mut g, 0.013);
        }
        assert!((norm(&x) - 1.0).abs() < 1e-10);
        assert!((norm(&g) - nu0).abs() < 1e-10);
        assert!(dot(&x, &g).abs() < 1e-10);
    }

    #[test]
    fn flow_is_reversible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = UnitVector::random(2, &mut rng);
        let v: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let g0 = tangent_project(&x0, &v).unwrap();
        let (x1, g1) = geodesic_flow(&x0, &g0, 0.37).unwrap();
        let (x2, g2) = geodesic_flow(&x1, &g1, -0.37).unwrap();
        for (a, b) in x0.as_slice().iter().zip(x2.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in g0.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_orthogonal(4, &mut rng);
        let eye = q.transpose() * &q;
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((eye[(r, c)] - want).abs() < 1e-12);
            }
        }
    }
}
