//! Convex feasible sets with Euclidean and A-norm projection oracles.
//!
//! Every supported set admits an `O(d log d)` sort-based Euclidean
//! projection. The generalized projection `argmin_{x in K} (x-y)^T A (x-y)`
//! is obtained by accelerated projected gradient on the quadratic, with each
//! iterate produced by the Euclidean projection so that the returned point is
//! always feasible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Membership tolerance (absolute, scaled by the set's radius when it exceeds one).
pub const MEMBERSHIP_TOL: f64 = 1e-12;

const POWER_ITERATIONS: usize = 50;
const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// `{x in R^dim : ||x||_1 <= radius}`.
    L1Ball { dim: usize, radius: f64 },
    /// The probability simplex `{x >= 0, sum x = 1}` in `R^k`.
    Simplex { k: usize },
    /// Axis-aligned box `lower <= x <= upper`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x in R^dim : x >= 0, ||x||_1 <= radius}`.
    PositiveL1 { dim: usize, radius: f64 },
    /// Cartesian product, coordinates concatenated in order.
    Product(Vec<FeasibleSet>),
}

impl FeasibleSet {
    pub fn l1_ball(dim: usize, radius: f64) -> Self {
        FeasibleSet::L1Ball { dim, radius }
    }

    pub fn simplex(k: usize) -> Self {
        FeasibleSet::Simplex { k }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        FeasibleSet::Box { lower, upper }
    }

    pub fn positive_l1(dim: usize, radius: f64) -> Self {
        FeasibleSet::PositiveL1 { dim, radius }
    }

    pub fn product(parts: Vec<FeasibleSet>) -> Self {
        FeasibleSet::Product(parts)
    }

    /// Checks that the set is nonempty and bounded.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::L1Ball { dim, radius } | FeasibleSet::PositiveL1 { dim, radius } => {
                if *dim == 0 {
                    return Err(Error::contract("set dimension must be positive"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::contract(format!("radius must be positive and finite, got {radius}")));
                }
            }
            FeasibleSet::Simplex { k } => {
                if *k == 0 {
                    return Err(Error::contract("simplex needs at least one vertex"));
                }
            }
            FeasibleSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::contract("box bounds must be nonempty and equal length"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
                    return Err(Error::contract("box needs finite bounds with lower <= upper"));
                }
            }
            FeasibleSet::Product(parts) => {
                if parts.is_empty() {
                    return Err(Error::contract("product of zero sets"));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::L1Ball { dim, .. } | FeasibleSet::PositiveL1 { dim, .. } => *dim,
            FeasibleSet::Simplex { k } => *k,
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Product(parts) => parts.iter().map(FeasibleSet::dim).sum(),
        }
    }

    /// Exact Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        match self {
            FeasibleSet::L1Ball { radius, .. } => 2.0 * radius,
            FeasibleSet::Simplex { k } => {
                if *k >= 2 {
                    std::f64::consts::SQRT_2
                } else {
                    0.0
                }
            }
            FeasibleSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| (u - l) * (u - l)).sum::<f64>().sqrt()
            }
            // Farthest pair is two distinct vertices r*e_i, r*e_j (or 0 and r*e_1 in one dimension).
            FeasibleSet::PositiveL1 { dim, radius } => {
                if *dim >= 2 {
                    radius * std::f64::consts::SQRT_2
                } else {
                    *radius
                }
            }
            FeasibleSet::Product(parts) => parts.iter().map(|p| p.diameter().powi(2)).sum::<f64>().sqrt(),
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && self.contains_slice(x.as_slice())
    }

    fn contains_slice(&self, x: &[f64]) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            FeasibleSet::L1Ball { radius, .. } => {
                let tol = MEMBERSHIP_TOL * radius.max(1.0);
                x.iter().map(|v| v.abs()).sum::<f64>() <= radius + tol
            }
            FeasibleSet::Simplex { .. } => {
                x.iter().all(|&v| v >= -MEMBERSHIP_TOL)
                    && (x.iter().sum::<f64>() - 1.0).abs() <= MEMBERSHIP_TOL * (x.len() as f64).max(1.0)
            }
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - MEMBERSHIP_TOL && *v <= u + MEMBERSHIP_TOL),
            FeasibleSet::PositiveL1 { radius, .. } => {
                let tol = MEMBERSHIP_TOL * radius.max(1.0);
                x.iter().all(|&v| v >= -MEMBERSHIP_TOL) && x.iter().sum::<f64>() <= radius + tol
            }
            FeasibleSet::Product(parts) => {
                let mut offset = 0;
                parts.iter().all(|p| {
                    let n = p.dim();
                    let ok = p.contains_slice(&x[offset..offset + n]);
                    offset += n;
                    ok
                })
            }
        }
    }

    /// Euclidean projection `argmin_{x in K} ||x - y||_2`.
    pub fn euclid_project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("cannot project a non-finite point"));
        }
        let mut out = y.clone();
        self.project_in_place(out.as_mut_slice());
        Ok(out)
    }

    fn project_in_place(&self, x: &mut [f64]) {
        match self {
            FeasibleSet::L1Ball { radius, .. } => {
                let norm: f64 = x.iter().map(|v| v.abs()).sum();
                if norm <= *radius {
                    return;
                }
                let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
                let theta = simplex_threshold(&mags, *radius);
                for (v, m) in x.iter_mut().zip(mags.iter_mut()) {
                    *m = (*m - theta).max(0.0);
                    *v = v.signum() * *m;
                }
            }
            FeasibleSet::Simplex { .. } => {
                let theta = simplex_threshold(x, 1.0);
                for v in x.iter_mut() {
                    *v = (*v - theta).max(0.0);
                }
            }
            FeasibleSet::Box { lower, upper } => {
                for (v, (l, u)) in x.iter_mut().zip(lower.iter().zip(upper)) {
                    *v = v.clamp(*l, *u);
                }
            }
            FeasibleSet::PositiveL1 { radius, .. } => {
                for v in x.iter_mut() {
                    *v = v.max(0.0);
                }
                if x.iter().sum::<f64>() > *radius {
                    let theta = simplex_threshold(x, *radius);
                    for v in x.iter_mut() {
                        *v = (*v - theta).max(0.0);
                    }
                }
            }
            FeasibleSet::Product(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = p.dim();
                    p.project_in_place(&mut x[offset..offset + n]);
                    offset += n;
                }
            }
        }
    }

    /// Generalized projection `argmin_{x in K} (x - y)^T A (x - y)`.
    ///
    /// Points already in the set are returned unchanged. Otherwise runs
    /// accelerated projected gradient (with gradient-based restart) at step
    /// `1/lambda_max(A)`, stopping once the projected-gradient step moves the
    /// iterate by at most `1e-10` in the sup norm.
    pub fn a_norm_project(&self, y: &DVector<f64>, a: &PsdMatrix) -> Result<DVector<f64>> {
        check_dim(self.dim(), y.len())?;
        check_dim(self.dim(), a.dim())?;
        if self.contains(y) {
            return Ok(y.clone());
        }
        let a = a.as_matrix();
        let lipschitz = power_iteration(a, POWER_ITERATIONS) * 1.05;
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::contract("A-norm projection needs a positive definite matrix"));
        }
        let step = 1.0 / lipschitz;
        let pg = |z: &DVector<f64>| -> DVector<f64> {
            let mut next = z - (a * (z - y)) * step;
            self.project_in_place(next.as_mut_slice());
            next
        };

        let mut x = self.euclid_project(y)?;
        let mut z = x.clone();
        let mut momentum = 1.0_f64;
        let mut residual = f64::INFINITY;
        for _ in 0..PROJECTION_MAX_ITER {
            let x_next = pg(&z);
            // Convergence is judged on the plain projected-gradient map at x_next.
            let check = pg(&x_next);
            residual = (&check - &x_next).amax();
            if residual <= PROJECTION_TOL {
                return Ok(if objective(a, &check, y) <= objective(a, &x_next, y) { check } else { x_next });
            }
            let restart = (&z - &x_next).dot(&(&x_next - &x)) > 0.0;
            if restart {
                momentum = 1.0;
                z = x_next.clone();
            } else {
                let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / next_momentum;
                z = &x_next + (&x_next - &x) * beta;
                momentum = next_momentum;
            }
            x = x_next;
        }
        Err(Error::NoConvergence { iterations: PROJECTION_MAX_ITER, residual, last: x })
    }

    /// Draws a point uniformly from the set (Dirichlet construction for the
    /// l1-type sets, independent uniforms for boxes).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.sample_into(rng, &mut out);
        DVector::from_vec(out)
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            FeasibleSet::L1Ball { dim, radius } => {
                let w = dirichlet_ones(rng, dim + 1);
                for wi in &w[..*dim] {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    out.push(sign * radius * wi);
                }
            }
            FeasibleSet::Simplex { k } => out.extend(dirichlet_ones(rng, *k)),
            FeasibleSet::Box { lower, upper } => {
                for (l, u) in lower.iter().zip(upper) {
                    out.push(l + (u - l) * rng.random::<f64>());
                }
            }
            FeasibleSet::PositiveL1 { dim, radius } => {
                let w = dirichlet_ones(rng, dim + 1);
                out.extend(w[..*dim].iter().map(|wi| radius * wi));
            }
            FeasibleSet::Product(parts) => {
                for p in parts {
                    p.sample_into(rng, out);
                }
            }
        }
    }

    /// A canonical interior-or-boundary starting point (the center for
    /// symmetric sets, the barycenter for simplices, the origin for
    /// positive l1 sets).
    pub fn center(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.center_into(&mut out);
        DVector::from_vec(out)
    }

    fn center_into(&self, out: &mut Vec<f64>) {
        match self {
            FeasibleSet::L1Ball { dim, .. } | FeasibleSet::PositiveL1 { dim, .. } => {
                out.extend(std::iter::repeat_n(0.0, *dim))
            }
            FeasibleSet::Simplex { k } => out.extend(std::iter::repeat_n(1.0 / *k as f64, *k)),
            FeasibleSet::Box { lower, upper } => out.extend(lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u))),
            FeasibleSet::Product(parts) => {
                for p in parts {
                    p.center_into(out);
                }
            }
        }
    }
}

/// Threshold `theta` such that `sum_i max(v_i - theta, 0) = z` (sort-based).
///
/// Ties are resolved by a stable sort, i.e. by index order.
fn simplex_threshold(v: &[f64], z: f64) -> f64 {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - z) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta
}

fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

fn objective(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let diff = x - y;
    diff.dot(&(a * &diff))
}

/// Largest-eigenvalue estimate by power iteration (Rayleigh quotient).
pub fn power_iteration(a: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 / n as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda.max((a * &v).dot(&v))
}

/// A symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Wraps a square matrix after checking symmetry to `1e-10` (relative to its largest entry).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::contract("PSD matrix must be square"));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-10 * scale {
            return Err(Error::contract("PSD matrix must be symmetric"));
        }
        Ok(PsdMatrix(m))
    }

    pub fn identity(d: usize) -> Self {
        PsdMatrix(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, s: f64) -> Self {
        PsdMatrix(DMatrix::identity(d, d) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        PsdMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Adds `g g^T`.
    pub fn add_outer(&mut self, g: &DVector<f64>) {
        self.0.ger(1.0, g, g, 1.0);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn l1_ball_interior_point_is_fixed() {
        let set = FeasibleSet::l1_ball(2, 1.0);
        let p = set.euclid_project(&v(&[0.2, -0.3])).unwrap();
        assert_eq!(p, v(&[0.2, -0.3]));
    }

    #[test]
    fn l1_ball_axis_projection_saturates() {
        let set = FeasibleSet::l1_ball(2, 1.0);
        let p = set.euclid_project(&v(&[2.0, 0.0])).unwrap();
        assert!((p - v(&[1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn simplex_symmetric_point() {
        let set = FeasibleSet::simplex(3);
        let p = set.euclid_project(&v(&[0.5, 0.5, 0.5])).unwrap();
        for x in p.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn positive_l1_clamps_then_thresholds() {
        let set = FeasibleSet::positive_l1(3, 0.25);
        let p = set.euclid_project(&v(&[-1.0, 0.1, 0.05])).unwrap();
        assert!((p - v(&[0.0, 0.1, 0.05])).amax() < 1e-15);
        let p = set.euclid_project(&v(&[-1.0, 1.0, 0.5])).unwrap();
        // threshold 0.625 on (1.0, 0.5)
        assert!((p - v(&[0.0, 0.25, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn box_and_product_projection() {
        let set = FeasibleSet::product(vec![FeasibleSet::boxed(vec![-1.0], vec![1.0]), FeasibleSet::simplex(2)]);
        let p = set.euclid_project(&v(&[3.0, 2.0, -1.0])).unwrap();
        assert!((p - v(&[1.0, 1.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let set = FeasibleSet::l1_ball(3, 1.0);
        assert!(matches!(set.euclid_project(&v(&[1.0, 2.0])), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn diameters() {
        assert_eq!(FeasibleSet::l1_ball(4, 1.0).diameter(), 2.0);
        for k in 2..6 {
            assert_eq!(FeasibleSet::simplex(k).diameter(), 2f64.sqrt());
        }
        assert_eq!(FeasibleSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).diameter(), 2f64.sqrt());
        assert!((FeasibleSet::positive_l1(3, 0.25).diameter() - 0.25 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(FeasibleSet::positive_l1(1, 0.25).diameter(), 0.25);
        let prod = FeasibleSet::product(vec![FeasibleSet::l1_ball(2, 1.0), FeasibleSet::positive_l1(2, 0.25)]);
        assert!((prod.diameter() - (4.0 + 0.125f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn a_norm_interior_point_is_fixed() {
        let set = FeasibleSet::l1_ball(2, 1.0);
        let a = PsdMatrix::from_diagonal(&[3.0, 0.1]);
        let y = v(&[0.1, 0.4]);
        assert_eq!(set.a_norm_project(&y, &a).unwrap(), y);
    }

    #[test]
    fn a_norm_simplex_segment() {
        let set = FeasibleSet::simplex(2);
        let p = set.a_norm_project(&v(&[2.0, -1.0]), &PsdMatrix::identity(2)).unwrap();
        assert!((p - v(&[1.0, 0.0])).amax() < 1e-9);
    }

    fn grid_minimizer(set: &FeasibleSet, y: &DVector<f64>, a: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let mut best = (DVector::zeros(2), f64::INFINITY);
        for i in 0..401 {
            for j in 0..401 {
                let p = v(&[-1.0 + i as f64 * 0.005, -1.0 + j as f64 * 0.005]);
                if set.contains(&p) {
                    let val = objective(a, &p, y);
                    if val < best.1 {
                        best = (p, val);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn a_norm_matches_dense_grid() {
        let set = FeasibleSet::l1_ball(2, 1.0);
        let y = v(&[1.5, 0.5]);
        let a = PsdMatrix::from_diagonal(&[1.0, 4.0]);
        let p = set.a_norm_project(&y, &a).unwrap();
        let (grid, _) = grid_minimizer(&set, &y, a.as_matrix());
        assert!((&p - &grid).amax() <= 1e-3, "{p} vs {grid}");
        assert!(set.contains(&p));
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((power_iteration(&m, 50) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn samples_are_feasible() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let sets = [
            FeasibleSet::l1_ball(3, 2.0),
            FeasibleSet::simplex(4),
            FeasibleSet::positive_l1(2, 0.25),
            FeasibleSet::boxed(vec![-1.0, 2.0], vec![0.0, 3.0]),
        ];
        for s in &sets {
            for _ in 0..200 {
                assert!(s.contains(&s.sample(&mut rng)));
            }
            assert!(s.contains(&s.center()));
        }
    }

    #[test]
    fn psd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(PsdMatrix::new(m).is_err());
    }
}
